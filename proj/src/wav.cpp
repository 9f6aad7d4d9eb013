// SPDX-License-Identifier: Apache-2.0
#include "mlnet/wav.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>

#include "mlnet/error.hpp"

namespace mlnet {
namespace {

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

void put32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

void put16(std::ostream& os, std::uint16_t v) {
  const std::array<char, 2> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b.data(), 2);
}

struct Format {
  std::uint16_t tag = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
};

constexpr std::uint16_t kPcm = 1;
constexpr std::uint16_t kExtensible = 0xFFFE;

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open WAV file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw IoError("not a RIFF/WAVE file" + where);
  }

  std::optional<Format> fmt;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t size = le32(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw IoError("truncated chunk" + where);
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16) throw IoError("fmt chunk too short" + where);
      Format f;
      f.tag = le16(bytes.data() + body);
      f.channels = le16(bytes.data() + body + 2);
      f.rate = le32(bytes.data() + body + 4);
      f.bits = le16(bytes.data() + body + 14);
      if (f.tag == kExtensible && size >= 26) f.tag = le16(bytes.data() + body + 24);
      fmt = f;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!fmt) throw IoError("data chunk before fmt chunk" + where);
      if (fmt->tag != kPcm) throw IoError("unsupported WAV encoding (format tag " + std::to_string(fmt->tag) + ", only PCM)" + where);
      if (fmt->channels != 1) throw IoError("expected mono WAV, got " + std::to_string(fmt->channels) + " channels" + where);
      if (fmt->bits != 16) throw IoError("expected 16-bit PCM, got " + std::to_string(fmt->bits) + " bits" + where);
      if (fmt->rate == 0) throw IoError("sample rate is zero" + where);
      Waveform w;
      w.sample_rate = static_cast<int>(fmt->rate);
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(le16(bytes.data() + body + 2 * i));
        w.samples[i] = static_cast<double>(v) / 32768.0;
      }
      return w;
    }
    pos = body + size + (size & 1u);
  }
  throw IoError("no data chunk" + where);
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.sample_rate <= 0) throw ContractError("write_wav: sample_rate must be positive");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write WAV file " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  put32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put32(out, 16);
  put16(out, kPcm);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(w.sample_rate));
  put32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put16(out, 2);
  put16(out, 16);
  out.write("data", 4);
  put32(out, data_bytes);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    const auto v = static_cast<std::int16_t>(std::clamp(std::lround(c * 32768.0), -32768L, 32767L));
    put16(out, static_cast<std::uint16_t>(v));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace mlnet
