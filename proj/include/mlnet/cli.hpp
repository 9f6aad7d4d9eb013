// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlnet/corpus.hpp"

namespace mlnet::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `mlnet` tool: mix, featurize, train, eval, predict, ablate.
/// `--config FILE` (key=value lines, keys named like the long flags) is merged
/// under the command-line flags of any subcommand.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);
/// Same, with arguments after the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Featurizes and labels every manifest entry whose split matches
/// ("all" takes everything).
std::vector<LabeledUtterance> load_split(std::span<const ManifestEntry> entries, std::string_view split,
                                         const FrontendConfig& cfg);

}  // namespace mlnet::cli
