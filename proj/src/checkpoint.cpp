// SPDX-License-Identifier: Apache-2.0
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "mlnet/error.hpp"
#include "mlnet/model.hpp"

namespace mlnet {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'M', 'L', 'N', 'T'};
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is, const std::string& where) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated checkpoint " + where);
  return v;
}

std::string get_bytes(std::istream& is, std::uint32_t n, const std::string& where) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw IoError("truncated checkpoint " + where);
  return s;
}

// Empty when `params` has exactly the names and shapes `cfg` calls for.
std::string layout_mismatch(const ModelConfig& cfg, const MlnetParams& params) {
  const auto layout = param_layout(cfg);
  if (layout.size() != params.size()) {
    return std::to_string(params.size()) + " tensors, config needs " + std::to_string(layout.size());
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].first != params.names[i] || layout[i].second != params.tensors[i].shape) {
      return "tensor " + params.names[i] + " " + shape_str(params.tensors[i].shape) + " does not match expected " +
             layout[i].first + " " + shape_str(layout[i].second);
    }
  }
  return {};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const MlnetParams& params) {
  if (auto err = layout_mismatch(cfg, params); !err.empty()) throw ContractError("save_checkpoint: " + err);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  const std::string text = cfg.to_text();
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.names[i];
    const auto& t = params.tensors[i];
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + where);
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw IoError("not an MLNT checkpoint: " + where);
  }
  const auto version = get_u32(in, where);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + where);
  }
  const auto text_len = get_u32(in, where);
  Checkpoint ck;
  ck.config = ModelConfig::from_text(get_bytes(in, text_len, where));

  while (in.peek() != std::char_traits<char>::eof()) {
    const auto name_len = get_u32(in, where);
    std::string name = get_bytes(in, name_len, where);
    const auto rank = get_u32(in, where);
    if (rank > kMaxRank) throw IoError("parameter '" + name + "' has rank " + std::to_string(rank) + " in " + where);
    Shape shape(rank);
    for (auto& d : shape) d = get_u32(in, where);
    Tensor<float> t(shape);
    if (t.size() && !in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
      throw IoError("truncated values for '" + name + "' in " + where);
    }
    ck.params.add(std::move(name), std::move(t));
  }

  if (auto err = layout_mismatch(ck.config, ck.params); !err.empty()) throw IoError("checkpoint " + where + ": " + err);
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  auto ck = load_checkpoint(path);
  if (!(ck.config == expected)) {
    throw ConfigError("checkpoint config does not match the requested model config\n--- checkpoint (" + path.string() +
                      ")\n" + ck.config.to_text() + "--- requested\n" + expected.to_text());
  }
  return ck;
}

}  // namespace mlnet
