// SPDX-License-Identifier: Apache-2.0
#include "mlnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <random>

#include "mlnet/error.hpp"

namespace mlnet {

using ad::Var;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(clip_lo < clip_hi)) throw ConfigError("train: clip_lo must be < clip_hi");
  if (!(attention_weight >= 0.0)) throw ConfigError("train: attention loss weight must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: Adam betas must be in [0,1)");
  if (!(eps > 0.0)) throw ConfigError("train: eps must be > 0");
  if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("train: theta must be in [0,1]");
}

// ---------------------------------------------------------------------------
// Losses

template <class Real>
Var<Real> cross_entropy_loss(Var<Real> probs, std::span<const std::uint8_t> labels) {
  if (probs.size() != labels.size()) {
    throw ContractError("cross_entropy_loss: " + std::to_string(probs.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
  }
  auto& g = *probs.graph;
  Tensor<Real> y(probs.shape());
  Tensor<Real> not_y(probs.shape());
  for (std::size_t t = 0; t < labels.size(); ++t) {
    y[t] = labels[t] ? Real(1) : Real(0);
    not_y[t] = Real(1) - y[t];
  }
  auto p = ad::clamp(probs, kProbClamp, 1.0 - kProbClamp);
  auto log_p = ad::log(p);
  auto log_q = ad::log(ad::add_scalar(ad::scale(p, -1.0), 1.0));
  auto ll = g.constant(std::move(y)) * log_p + g.constant(std::move(not_y)) * log_q;
  return ad::scale(ad::sum(ll), -1.0);
}

std::vector<std::size_t> attention_targets(std::span<const double> weights, std::size_t num_branches) {
  if (num_branches == 0 || weights.size() % num_branches != 0) throw ContractError("attention_targets: bad shape");
  const std::size_t frames = weights.size() / num_branches;
  std::vector<std::size_t> k(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto row = weights.subspan(t * num_branches, num_branches);
    k[t] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return k;
}

template <class Real>
std::vector<std::size_t> attention_targets(Var<Real> weights) {
  auto v = weights.value();
  const std::vector<double> w(v.begin(), v.end());
  return attention_targets(w, weights.shape().at(1));
}

template <class Real>
Var<Real> attention_loss(Var<Real> weights, std::span<const std::size_t> targets) {
  const Shape& s = weights.shape();
  if (s.size() != 2 || s[0] != targets.size()) throw ContractError("attention_loss: targets do not match weights " + shape_str(s));
  Tensor<Real> onehot(s);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] >= s[1]) throw ContractError("attention_loss: target branch out of range");
    onehot.at(t, targets[t]) = Real(1);
  }
  // Select p[t, k_t] first so zero weights elsewhere never reach the log.
  auto picked = ad::sum_axis(weights.graph->constant(std::move(onehot)) * weights, 1);
  return ad::scale(ad::sum(ad::log(picked)), -1.0);
}

template <class Real>
LossResult<Real> utterance_loss(const LabeledUtterance& u, const ModelConfig& cfg, const Params<Real>& params,
                                const LossOptions& opts) {
  ad::Graph<Real> g(opts.compute_grads);
  const auto bound = bind_params(g, params);
  const auto fwd = mlnet_forward(g, u.features, cfg, bound);
  LossResult<Real> r;
  auto ce = cross_entropy_loss(fwd.probs, u.labels);
  r.cross_entropy = ce.value()[0];
  auto total = ce;
  if (opts.attention_weight > 0.0 && fwd.attention) {
    r.targets = opts.frozen_targets ? *opts.frozen_targets : attention_targets(fwd.attention->weights);
    auto att = attention_loss(fwd.attention->weights, r.targets);
    r.attention = att.value()[0];
    r.used_attention_loss = true;
    total = ce + ad::scale(att, opts.attention_weight);
  }
  r.total = total.value()[0];
  if (opts.compute_grads) {
    g.backward(total);
    r.grads = collect_grads(bound, params);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Adam

template <class Real>
AdamState<Real> AdamState<Real>::zeros_like(const Params<Real>& p) {
  AdamState s;
  for (const auto& t : p.tensors) {
    s.m.emplace_back(t.size(), Real(0));
    s.v.emplace_back(t.size(), Real(0));
  }
  return s;
}

template <class Real>
void adam_step(Params<Real>& params, const Params<Real>& grads, AdamState<Real>& state, const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ContractError("adam_step: parameter, gradient and state sets differ in size");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads.tensors[i].size() != params.tensors[i].size()) throw ContractError("adam_step: shape mismatch for " + params.names[i]);
    if (!all_finite<Real>(grads.tensors[i].data)) {
      throw NumericError("adam_step: non-finite gradient in " + params.names[i]);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.tensors[i].data;
    const auto& g = grads.tensors[i].data;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = std::clamp(static_cast<double>(g[j]), cfg.clip_lo, cfg.clip_hi);
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<Real>(mj);
      v[j] = static_cast<Real>(vj);
      const double mhat = mj / c1;
      const double vhat = vj / c2;
      p[j] = static_cast<Real>(p[j] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<ScoredRecording> score_corpus(std::span<const LabeledUtterance> corpus, const ModelConfig& cfg,
                                          const MlnetParams& params) {
  std::vector<ScoredRecording> out(corpus.size());
  const auto n = static_cast<std::ptrdiff_t>(corpus.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& u = corpus[static_cast<std::size_t>(i)];
    auto& rec = out[static_cast<std::size_t>(i)];
    rec.id = u.source_id;
    rec.labels = u.labels;
    if (u.features.num_frames) rec.probs = predict(u.features, cfg, params).probs;
  }
  return out;
}

EvalReport evaluate_model(std::span<const LabeledUtterance> corpus, const ModelConfig& cfg, const MlnetParams& params,
                          double theta) {
  if (corpus.empty()) throw ContractError("evaluate_model: empty corpus");
  const auto scored = score_corpus(corpus, cfg, params);
  return evaluate(scored, theta);
}

double mean_max_attention(std::span<const LabeledUtterance> corpus, const ModelConfig& cfg, const MlnetParams& params) {
  if (cfg.variant != Variant::FullAttention) throw ContractError("mean_max_attention: model has no attention");
  double acc = 0.0;
  std::size_t frames = 0;
  for (const auto& u : corpus) {
    const auto pred = predict(u.features, cfg, params);
    for (std::size_t t = 0; t < pred.trace.num_frames; ++t) {
      double best = 0.0;
      for (std::size_t i = 0; i < pred.trace.num_branches; ++i) best = std::max(best, pred.trace.weight(t, i));
      acc += best;
      ++frames;
    }
  }
  return frames ? acc / static_cast<double>(frames) : 0.0;
}

// ---------------------------------------------------------------------------
// Training loop

std::string format_epoch_log(const EpochLog& e) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d\t%.6f\t%.6f\t%.6f", e.epoch, e.train_loss, e.dev_f1, e.dev_dcf);
  return buf;
}

namespace {

void check_corpus(std::span<const LabeledUtterance> corpus) {
  if (corpus.empty()) throw ContractError("train: empty training corpus");
  bool pos = false;
  bool neg = false;
  for (const auto& u : corpus) {
    if (u.labels.size() != u.features.num_frames) {
      throw ContractError("train: " + u.source_id + " has " + std::to_string(u.labels.size()) + " labels for " +
                          std::to_string(u.features.num_frames) + " frames");
    }
    for (auto y : u.labels) (y ? pos : neg) = true;
  }
  if (!pos || !neg) throw ContractError("train: training labels must contain both speech and non-speech frames");
}

}  // namespace

TrainResult train(std::span<const LabeledUtterance> train_set, std::span<const LabeledUtterance> dev_set,
                  const TrainConfig& cfg, const ModelConfig& model_cfg, const TrainOptions& opts) {
  cfg.validate();
  model_cfg.validate();
  check_corpus(train_set);

  // Utterances too short for one frame carry no loss.
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    if (train_set[i].features.num_frames) usable.push_back(i);
  }

  TrainResult res;
  MlnetParams params = opts.initial_params ? *opts.initial_params : init_params(model_cfg, cfg.seed);
  if (params.size() != param_layout(model_cfg).size()) throw ConfigError("train: initial params do not match the model config");
  auto state = AdamState<float>::zeros_like(params);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  std::ofstream log_file;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    log_file.open(opts.out_dir / "train_log.tsv");
    if (!log_file) throw IoError("cannot write " + (opts.out_dir / "train_log.tsv").string());
    log_file << "epoch\ttrain_loss\tdev_f1\tdev_dcf\n";
  }

  LossOptions loss_opts;
  loss_opts.attention_weight = cfg.attention_weight;
  double best_train_loss = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = usable;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t frame_sum = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      std::vector<LossResult<float>> parts(count);
      const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic)
      for (std::ptrdiff_t b = 0; b < n; ++b) {
        const auto& u = train_set[order[start + static_cast<std::size_t>(b)]];
        parts[static_cast<std::size_t>(b)] = utterance_loss(u, model_cfg, params, loss_opts);
      }
      // Fixed-order reduction keeps results independent of the thread count.
      MlnetParams grads = params.zeros_like();
      for (std::size_t b = 0; b < count; ++b) {
        const auto& part = parts[b];
        loss_sum += part.total;
        frame_sum += train_set[order[start + b]].features.num_frames;
        if (part.used_attention_loss) ++res.attention_loss_evaluations;
        for (std::size_t i = 0; i < grads.size(); ++i) {
          auto& dst = grads.tensors[i].data;
          const auto& src = part.grads.tensors[i].data;
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
      }
      try {
        adam_step(params, grads, state, cfg);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch starting at " + std::to_string(start) +
                           ": " + e.what());
      }
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = frame_sum ? loss_sum / static_cast<double>(frame_sum) : 0.0;
    bool better = false;
    if (!dev_set.empty()) {
      const auto report = evaluate_model(dev_set, model_cfg, params, cfg.theta);
      entry.dev_f1 = report.mean_f1;
      entry.dev_dcf = report.mean_dcf;
      better = report.mean_f1 > res.best_dev_f1;
      if (better) res.best_dev_f1 = report.mean_f1;
    } else {
      better = entry.train_loss < best_train_loss;
      if (better) best_train_loss = entry.train_loss;
    }
    if (better || res.best_params.size() == 0) {
      res.best_params = params;
      res.best_epoch = epoch;
    }
    res.log.push_back(entry);

    const std::string line = format_epoch_log(entry);
    if (opts.log) *opts.log << line << '\n' << std::flush;
    if (!opts.out_dir.empty()) {
      log_file << line << '\n' << std::flush;
      save_checkpoint(opts.out_dir / ("epoch_" + std::to_string(epoch) + ".mlnt"), model_cfg, params);
    }
  }

  res.final_params = std::move(params);
  if (!opts.out_dir.empty()) save_checkpoint(opts.out_dir / "best.mlnt", model_cfg, res.best_params);
  return res;
}

// ---------------------------------------------------------------------------

#define MLNET_INSTANTIATE_TRAIN(R)                                                                    \
  template Var<R> cross_entropy_loss<R>(Var<R>, std::span<const std::uint8_t>);                       \
  template std::vector<std::size_t> attention_targets<R>(Var<R>);                                     \
  template Var<R> attention_loss<R>(Var<R>, std::span<const std::size_t>);                            \
  template LossResult<R> utterance_loss<R>(const LabeledUtterance&, const ModelConfig&, const Params<R>&, \
                                           const LossOptions&);                                        \
  template struct AdamState<R>;                                                                       \
  template void adam_step<R>(Params<R>&, const Params<R>&, AdamState<R>&, const TrainConfig&);

MLNET_INSTANTIATE_TRAIN(float)
MLNET_INSTANTIATE_TRAIN(double)

#undef MLNET_INSTANTIATE_TRAIN

}  // namespace mlnet
