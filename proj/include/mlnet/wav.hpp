// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "mlnet/frontend.hpp"

namespace mlnet {

/// Reads a 16-bit PCM mono RIFF/WAVE file. Throws IoError on anything else.
Waveform read_wav(const std::filesystem::path& path);

/// Writes 16-bit PCM mono. Samples are clamped to [-1, 1] and rounded.
void write_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace mlnet
