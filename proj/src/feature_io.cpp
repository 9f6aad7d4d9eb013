// SPDX-License-Identifier: Apache-2.0
#include "mlnet/feature_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "mlnet/error.hpp"

namespace mlnet {

static_assert(std::endian::native == std::endian::little, "feature dump I/O assumes a little-endian host");

void write_feature_dump(const std::filesystem::path& path, const FeatureSequence& fs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature dump " + path.string());
  const auto t = static_cast<std::uint32_t>(fs.num_frames);
  const auto m = static_cast<std::uint32_t>(fs.num_mels);
  out.write("MLFB", 4);
  out.write(reinterpret_cast<const char*>(&t), 4);
  out.write(reinterpret_cast<const char*>(&m), 4);
  out.write(reinterpret_cast<const char*>(fs.frames.data()), static_cast<std::streamsize>(fs.frames.size() * sizeof(float)));
  if (!out) throw IoError("write failed for " + path.string());
}

FeatureSequence read_feature_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature dump " + path.string());
  char magic[4];
  std::uint32_t t = 0, m = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, "MLFB", 4) != 0) throw IoError("not an MLFB feature dump: " + path.string());
  if (!in.read(reinterpret_cast<char*>(&t), 4) || !in.read(reinterpret_cast<char*>(&m), 4)) {
    throw IoError("truncated feature dump header: " + path.string());
  }
  FeatureSequence fs;
  fs.num_frames = t;
  fs.num_mels = m;
  fs.frames.resize(static_cast<std::size_t>(t) * m);
  if (!fs.frames.empty() &&
      !in.read(reinterpret_cast<char*>(fs.frames.data()), static_cast<std::streamsize>(fs.frames.size() * sizeof(float)))) {
    throw IoError("truncated feature dump body: " + path.string());
  }
  fs.source_id = path.stem().string();
  return fs;
}

}  // namespace mlnet
