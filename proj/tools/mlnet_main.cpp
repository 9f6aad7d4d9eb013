// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "mlnet/cli.hpp"

int main(int argc, char** argv) { return mlnet::cli::run(argc, argv, std::cout, std::cerr); }
