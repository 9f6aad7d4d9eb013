// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include "mlnet/corpus.hpp"
#include "mlnet/metrics.hpp"
#include "mlnet/model.hpp"

namespace mlnet {

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 32;  // utterances per optimizer step
  int epochs = 150;
  double clip_lo = -1.0;
  double clip_hi = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double attention_weight = 1.0;  // lambda in L = L_ce + lambda * L_att
  double theta = 0.5;             // decision threshold for dev metrics
  std::uint64_t seed = 0;

  void validate() const;
};

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] inside the losses.
inline constexpr double kProbClamp = 1e-7;

/// -sum_t [y log p + (1-y) log(1-p)] on a [T] probability node.
template <class Real>
ad::Var<Real> cross_entropy_loss(ad::Var<Real> probs, std::span<const std::uint8_t> labels);

/// Index of the largest weight in each row of [T, branches]; first index on ties.
std::vector<std::size_t> attention_targets(std::span<const double> weights, std::size_t num_branches);
template <class Real>
std::vector<std::size_t> attention_targets(ad::Var<Real> weights);

/// -sum_t log p[t, k_t] with the targets k_t held constant.
template <class Real>
ad::Var<Real> attention_loss(ad::Var<Real> weights, std::span<const std::size_t> targets);

template <class Real>
struct LossResult {
  double total = 0.0;
  double cross_entropy = 0.0;
  double attention = 0.0;
  bool used_attention_loss = false;
  std::vector<std::size_t> targets;  // argmax branch per frame, when used
  Params<Real> grads;                // empty unless requested
};

struct LossOptions {
  double attention_weight = 1.0;
  bool compute_grads = true;
  /// Reuse these argmax targets instead of recomputing them (finite differences).
  const std::vector<std::size_t>* frozen_targets = nullptr;
};

/// Forward, joint loss, and (optionally) backward for one utterance.
template <class Real>
LossResult<Real> utterance_loss(const LabeledUtterance& u, const ModelConfig& cfg, const Params<Real>& params,
                                const LossOptions& opts);

template <class Real>
struct AdamState {
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const Params<Real>& p);
};

/// Clamps every gradient element to [clip_lo, clip_hi], then one bias-corrected
/// Adam update. Throws NumericError (params untouched) on NaN/Inf gradients.
template <class Real>
void adam_step(Params<Real>& params, const Params<Real>& grads, AdamState<Real>& state, const TrainConfig& cfg);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // mean joint loss per frame
  double dev_f1 = std::numeric_limits<double>::quiet_NaN();
  double dev_dcf = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  MlnetParams final_params;
  MlnetParams best_params;
  int best_epoch = 0;
  double best_dev_f1 = -1.0;
  std::vector<EpochLog> log;
  std::size_t attention_loss_evaluations = 0;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: write nothing
  std::ostream* log = nullptr;    // one TSV line per epoch
  /// Start from these instead of init_params(model_cfg, cfg.seed).
  const MlnetParams* initial_params = nullptr;
};

/// Mini-batch training; best params chosen by dev F1 at cfg.theta (ties keep
/// the earlier epoch). Without a dev set, by lowest training loss.
TrainResult train(std::span<const LabeledUtterance> train_set, std::span<const LabeledUtterance> dev_set,
                  const TrainConfig& cfg, const ModelConfig& model_cfg, const TrainOptions& opts = {});

std::string format_epoch_log(const EpochLog& e);

/// Runs the model on every utterance (in parallel) and scores it.
EvalReport evaluate_model(std::span<const LabeledUtterance> corpus, const ModelConfig& cfg, const MlnetParams& params,
                          double theta);

/// Per-recording scores without metrics, for callers that want both.
std::vector<ScoredRecording> score_corpus(std::span<const LabeledUtterance> corpus, const ModelConfig& cfg,
                                          const MlnetParams& params);

/// Mean over frames of max_i p[t, i] (FullAttention only).
double mean_max_attention(std::span<const LabeledUtterance> corpus, const ModelConfig& cfg, const MlnetParams& params);

}  // namespace mlnet
