// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mlnet/autodiff.hpp"
#include "mlnet/frontend.hpp"
#include "mlnet/tensor.hpp"

namespace mlnet {

/// Architecture variants: the full network and three ablations.
enum class Variant {
  BilstmBase,     // flattened max-width window -> tanh affine -> classifier
  GatedUnit,      // one gated branch at the widest receptive field
  NonAttention,   // all branches, uniform average
  FullAttention,  // all branches, channel attention
};

std::string_view variant_name(Variant v);
/// Throws ConfigError on an unknown name.
Variant parse_variant(std::string_view name);
inline constexpr Variant kAllVariants[] = {Variant::BilstmBase, Variant::GatedUnit, Variant::NonAttention,
                                           Variant::FullAttention};

struct ModelConfig {
  std::vector<int> receptive_fields{1, 3, 5, 7, 9};
  int n_mels = 40;
  int gated_dim = 64;
  int attn_hidden = 64;
  int lstm_hidden = 64;  // per direction
  int lstm_layers = 2;
  int fc_hidden = 64;
  Variant variant = Variant::FullAttention;
  bool double_sigmoid = true;

  void validate() const;
  int max_field() const { return receptive_fields.back(); }
  /// Frames seen by the widest branch: 2 * max(r) + 1.
  int context_frames() const { return 2 * max_field() + 1; }
  /// Receptive fields that own a gated branch under the current variant.
  std::vector<int> branch_fields() const;
  std::size_t num_branches() const { return branch_fields().size(); }

  /// "key=value" lines, fixed key order.
  std::string to_text() const;
  /// Parses to_text() output; unknown keys throw ConfigError.
  static ModelConfig from_text(std::string_view text);

  bool operator==(const ModelConfig&) const = default;
};

/// Named parameter tensors in a fixed order.
template <class Real>
struct Params {
  std::vector<std::string> names;
  std::vector<Tensor<Real>> tensors;

  std::size_t size() const { return tensors.size(); }
  std::size_t total_elements() const;
  const Tensor<Real>& get(std::string_view name) const;
  Tensor<Real>& get(std::string_view name);
  bool contains(std::string_view name) const;
  void add(std::string name, Tensor<Real> t);
  /// Same names, zeroed tensors.
  Params zeros_like() const;
};

using MlnetParams = Params<float>;

template <class To, class From>
Params<To> convert_params(const Params<From>& p);

/// Weights ~ U(-0.05, 0.05), biases = 0.1. Deterministic per seed.
MlnetParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Expected parameter names and shapes for a config.
std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& cfg);

/// Per-frame raw attention a_t and normalized weights p_t, [T x branches].
struct AttentionTrace {
  std::size_t num_frames = 0;
  std::size_t num_branches = 0;
  std::vector<double> raw;
  std::vector<double> weights;

  double weight(std::size_t t, std::size_t i) const { return weights[t * num_branches + i]; }
};

/// Parameter leaves of one graph, keyed by name.
template <class Real>
struct BoundParams {
  std::map<std::string, ad::Var<Real>, std::less<>> vars;
  std::vector<std::string> order;

  ad::Var<Real> operator[](std::string_view name) const;
};

/// Adds every parameter as a leaf (trainable when the graph records). The
/// leaves read `p` in place, so `p` must outlive `g` and stay unchanged.
template <class Real>
BoundParams<Real> bind_params(ad::Graph<Real>& g, const Params<Real>& p);

/// Gradients of the bound leaves, shaped like the parameters (zeros if untouched).
template <class Real>
Params<Real> collect_grads(const BoundParams<Real>& bound, const Params<Real>& like);

/// [T, n_mels * (2r+1)] windows; row t is frames t-r .. t+r flattened time-major,
/// edges replicate the first/last frame.
template <class Real>
Tensor<Real> context_windows(const FeatureSequence& fs, int r);

// Network pieces. All operate on whole sequences: row t is frame t.

/// tanh(X W_f^T + b_f) * sigmoid(X W_g^T + b_g): [N, in] -> [N, gated_dim].
template <class Real>
ad::Var<Real> gated_affine_forward(ad::Var<Real> windows, const BoundParams<Real>& p, int r);

template <class Real>
struct AttentionOutput {
  ad::Var<Real> raw;      // a, [T, branches]
  ad::Var<Real> weights;  // p, [T, branches]
  ad::Var<Real> fused;    // Q, [T, gated_dim]
};

/// Channel attention over stacked branch outputs q: [T, branches, gated_dim].
/// `forced_weights`, when given ([T, branches]), replaces p in the fusion.
template <class Real>
AttentionOutput<Real> attention_forward(ad::Var<Real> q, const BoundParams<Real>& p, bool double_sigmoid,
                                        const Tensor<Real>* forced_weights = nullptr);

/// Uniform average over branches: [T, branches, D] -> [T, D].
template <class Real>
ad::Var<Real> non_attention_forward(ad::Var<Real> q);

/// Stacked Bi-LSTM + FC head: [T, D] -> [T] probabilities.
template <class Real>
ad::Var<Real> classifier_forward(ad::Var<Real> seq, const BoundParams<Real>& p, const ModelConfig& cfg);

template <class Real>
struct ForwardResult {
  ad::Var<Real> probs;                      // [T]
  std::optional<AttentionOutput<Real>> attention;  // FullAttention only
};

struct ForwardOptions {
  /// Replace attention weights by 1/branches everywhere (FullAttention only).
  bool force_uniform_attention = false;
};

template <class Real>
ForwardResult<Real> mlnet_forward(ad::Graph<Real>& g, const FeatureSequence& fs, const ModelConfig& cfg,
                                  const BoundParams<Real>& p, const ForwardOptions& opts = {});

struct Prediction {
  std::vector<double> probs;
  AttentionTrace trace;  // empty unless FullAttention
};

/// Inference without a backward tape.
template <class Real>
Prediction predict(const FeatureSequence& fs, const ModelConfig& cfg, const Params<Real>& params,
                   const ForwardOptions& opts = {});

template <class Real>
AttentionTrace make_trace(const AttentionOutput<Real>& att);

// Checkpoints: "MLNT", u32 version, u32-length-prefixed config text, then per
// parameter: u32 name length, name, u32 rank, u32 dims[rank], f32 LE values.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  MlnetParams params;
};

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const MlnetParams& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Throws ConfigError (naming both configs) when the stored config differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace mlnet
