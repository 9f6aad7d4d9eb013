// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "mlnet/frontend.hpp"

namespace mlnet {

// Feature dump: "MLFB", u32 T, u32 n_mels, then T*n_mels f32 LE values row-major.
void write_feature_dump(const std::filesystem::path& path, const FeatureSequence& fs);
FeatureSequence read_feature_dump(const std::filesystem::path& path);

}  // namespace mlnet
