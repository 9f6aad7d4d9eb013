// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <fstream>
#include <sstream>

#include "mlnet/error.hpp"
#include "mlnet/training.hpp"
#include "test_support.hpp"

using namespace mlnet;
using namespace mlnet::testing;
using ad::Graph;

namespace {

ModelConfig tiny(Variant v) {
  ModelConfig c;
  c.receptive_fields = {0, 1, 2};
  c.n_mels = 4;
  c.gated_dim = 4;
  c.attn_hidden = 5;
  c.lstm_hidden = 3;
  c.lstm_layers = 2;
  c.fc_hidden = 4;
  c.variant = v;
  return c;
}

LabeledUtterance random_utterance(std::mt19937_64& rng, std::size_t T, std::size_t n_mels) {
  LabeledUtterance u;
  u.features = random_features(rng, T, n_mels);
  for (std::size_t t = 0; t < T; ++t) u.labels.push_back(static_cast<std::uint8_t>(rng() % 2));
  u.source_id = "r" + std::to_string(rng() % 100000);
  return u;
}

std::vector<LabeledUtterance> random_corpus(std::uint64_t seed, std::size_t n, std::size_t n_mels) {
  std::mt19937_64 rng(seed);
  std::vector<LabeledUtterance> out;
  for (std::size_t i = 0; i < n; ++i) {
    // Learnable: label follows the sign of the first feature.
    auto u = random_utterance(rng, 6 + rng() % 10, n_mels);
    for (std::size_t t = 0; t < u.labels.size(); ++t) u.labels[t] = u.features.at(t, 0) > 0;
    u.labels[0] = 0;
    u.labels[1] = 1;
    out.push_back(std::move(u));
  }
  return out;
}

// Faint noise, a loud tone, faint noise: a frame-energy threshold separates the classes.
std::vector<LabeledUtterance> tone_corpus(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  FrontendConfig fc;
  fc.normalize = true;  // raw log-mel near -18 saturates the gated units at init
  std::vector<LabeledUtterance> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lead = 1600 + rng() % 4800, body = 3200 + rng() % 6400, tail = 1600 + rng() % 4800;
    const double hz = 200 + static_cast<double>(rng() % 1500);
    Waveform w;
    SpeechMask mask;
    w.samples.assign(lead, 0.0);
    mask.assign(lead, 0);
    for (std::size_t k = 0; k < body; ++k) {
      w.samples.push_back(0.8 * std::sin(2 * std::numbers::pi * hz * double(k) / 16000));
      mask.push_back(1);
    }
    w.samples.resize(lead + body + tail, 0.0);
    mask.resize(lead + body + tail, 0);
    std::normal_distribution<double> hiss(0.0, 1e-3);
    for (auto& x : w.samples) x += hiss(rng);
    out.push_back(label_utterance(w, mask, fc, "tone" + std::to_string(i)));
  }
  return out;
}

double naive_ce(const std::vector<double>& p, const std::vector<std::uint8_t>& y) {
  double s = 0;
  for (std::size_t t = 0; t < p.size(); ++t) {
    const double q = std::min(std::max(p[t], 1e-7), 1 - 1e-7);
    s -= y[t] ? std::log(q) : std::log(1 - q);
  }
  return s;
}

double ce_value(const std::vector<double>& p, const std::vector<std::uint8_t>& y) {
  Graph<double> g(false);
  return cross_entropy_loss(g.constant(Tensor<double>({p.size()}, p)), y).value()[0];
}

}  // namespace

TEST_CASE("cross entropy examples") {
  const std::vector<std::uint8_t> y{1, 0, 1, 1, 0};
  const std::vector<double> exact{1, 0, 1, 1, 0};
  CHECK(ce_value(exact, y) == doctest::Approx(5 * -std::log(1 - 1e-7)).epsilon(1e-6));
  CHECK(ce_value(exact, y) < 1e-5);
  CHECK(ce_value(std::vector<double>(5, 0.5), y) == doctest::Approx(5 * std::log(2.0)).epsilon(1e-12));
  Graph<double> g(false);
  CHECK_THROWS_AS(cross_entropy_loss(g.constant(Tensor<double>({3}, 0.5)), y), ContractError);
}

TEST_CASE("cross entropy matches a scalar oracle (property, 200 draws)") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const std::size_t T = 1 + rng() % 50;
    auto p = uniform_vec(rng, T, 0.0, 1.0);
    if (i % 10 == 0) p[0] = 0.0;  // exercises the clamp
    std::vector<std::uint8_t> y(T);
    for (auto& v : y) v = rng() % 2;
    CHECK(std::abs(ce_value(p, y) - naive_ce(p, y)) <= 1e-9);
  }
}

TEST_CASE("attention loss examples") {
  Graph<double> g(false);
  Tensor<double> onehot({2, 5});
  onehot.at(0, 3) = 1;
  onehot.at(1, 0) = 1;
  auto w = g.constant(onehot);
  auto k = attention_targets(w);
  CHECK(k == std::vector<std::size_t>{3, 0});
  CHECK(attention_loss(w, k).value()[0] == 0.0);

  auto uni = g.constant(Tensor<double>({4, 5}, 0.2));
  auto ku = attention_targets(uni);
  CHECK(ku == std::vector<std::size_t>(4, 0));  // first index on ties
  CHECK(attention_loss(uni, ku).value()[0] == doctest::Approx(4 * std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("joint loss gradient matches finite differences with targets frozen") {
  std::mt19937_64 rng(2);
  for (Variant v : kAllVariants) {
    CAPTURE(variant_name(v));
    const auto cfg = tiny(v);
    Params<double> p;
    for (auto& [name, shape] : param_layout(cfg)) p.add(name, random_tensor(rng, shape, -0.6, 0.6));
    const auto u = random_utterance(rng, 6, 4);
    LossOptions opts;
    opts.attention_weight = 0.7;
    const auto analytic = utterance_loss(u, cfg, p, opts);
    CHECK(analytic.used_attention_loss == (v == Variant::FullAttention));
    LossOptions frozen = opts;
    frozen.compute_grads = false;
    frozen.frozen_targets = &analytic.targets;
    const auto numeric = numeric_grads(p, [&](const Params<double>& q) { return utterance_loss(u, cfg, q, frozen).total; });
    for (const auto& row : compare_grads(analytic.grads, numeric)) {
      CAPTURE(row.name);
      CHECK(row.rel <= 1e-5);
    }
  }
}

TEST_CASE("adam: clipping, zero gradient, closed-form first step, NaN guard") {
  TrainConfig cfg;
  Params<double> p;
  p.add("w", Tensor<double>({3}, 0.25));
  auto big = p.zeros_like();
  std::fill(big.tensors[0].data.begin(), big.tensors[0].data.end(), 10.0);
  auto one = p.zeros_like();
  std::fill(one.tensors[0].data.begin(), one.tensors[0].data.end(), 1.0);

  auto pa = p, pb = p;
  auto sa = AdamState<double>::zeros_like(p), sb = AdamState<double>::zeros_like(p);
  adam_step(pa, big, sa, cfg);
  adam_step(pb, one, sb, cfg);
  CHECK(pa.tensors[0].data == pb.tensors[0].data);
  CHECK(sa.m == sb.m);
  CHECK(sa.m[0][0] == doctest::Approx(0.1));  // (1 - beta1) * clip(10)
  CHECK(sa.step == 1);

  // Zero gradient: parameters stay, moments decay.
  auto before = pa;
  const double m0 = sa.m[0][0], v0 = sa.v[0][0];
  adam_step(pa, p.zeros_like(), sa, cfg);
  CHECK(sa.m[0][0] == doctest::Approx(0.9 * m0));
  CHECK(sa.v[0][0] == doctest::Approx(0.999 * v0));
  CHECK(sa.step == 2);
  // m-hat is still positive, so the parameter keeps moving slightly.
  CHECK(pa.tensors[0].data[0] < before.tensors[0].data[0]);

  Params<double> s;
  s.add("x", Tensor<double>({1}, 0.0));
  auto g = s.zeros_like();
  g.tensors[0].data[0] = 0.5;
  auto st = AdamState<double>::zeros_like(s);
  adam_step(s, g, st, cfg);
  CHECK(s.tensors[0].data[0] == doctest::Approx(-cfg.lr * 0.5 / (0.5 + cfg.eps)).epsilon(1e-12));

  auto nan = s.zeros_like();
  nan.tensors[0].data[0] = std::nan("");
  const auto keep = s.tensors[0].data;
  CHECK_THROWS_AS(adam_step(s, nan, st, cfg), NumericError);
  CHECK(s.tensors[0].data == keep);
  CHECK(st.step == 1);
}

TEST_CASE("adam: zero gradient from zero moments leaves parameters unchanged") {
  TrainConfig cfg;
  Params<float> p;
  p.add("w", Tensor<float>({4}, 0.3f));
  auto st = AdamState<float>::zeros_like(p);
  adam_step(p, p.zeros_like(), st, cfg);
  for (float v : p.tensors[0].data) CHECK(v == 0.3f);
}

TEST_CASE("adam: applied gradient never exceeds the clip range (property)") {
  std::mt19937_64 rng(3);
  TrainConfig cfg;
  cfg.beta1 = 0.0;  // m then equals the applied gradient
  for (int i = 0; i < 50; ++i) {
    Params<double> p;
    p.add("w", random_tensor(rng, {20}));
    auto g = p.zeros_like();
    g.tensors[0] = random_tensor(rng, {20}, -100, 100);
    auto st = AdamState<double>::zeros_like(p);
    adam_step(p, g, st, cfg);
    for (double m : st.m[0]) {
      CHECK(m >= -1.0);
      CHECK(m <= 1.0);
    }
  }
}

TEST_CASE("train: fixed seed gives bit-identical results") {
  const auto corpus = random_corpus(5, 10, 4);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 3;
  cfg.seed = 9;
  const auto model = tiny(Variant::FullAttention);
  const auto a = train(corpus, {}, cfg, model);
  const auto b = train(corpus, {}, cfg, model);
  CHECK(a.log[0].train_loss == b.log[0].train_loss);
  for (std::size_t k = 0; k < a.final_params.size(); ++k) {
    CHECK(std::memcmp(a.final_params.tensors[k].data.data(), b.final_params.tensors[k].data.data(),
                      a.final_params.tensors[k].size() * sizeof(float)) == 0);
  }
  cfg.seed = 10;
  const auto c = train(corpus, {}, cfg, model);
  CHECK(c.log[0].train_loss != a.log[0].train_loss);
}

TEST_CASE("train: the attention loss is only evaluated when it applies") {
  const auto corpus = random_corpus(6, 4, 4);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.attention_weight = 0.0;
  CHECK(train(corpus, {}, cfg, tiny(Variant::NonAttention)).attention_loss_evaluations == 0);
  CHECK(train(corpus, {}, cfg, tiny(Variant::FullAttention)).attention_loss_evaluations == 0);
  cfg.attention_weight = 1.0;
  CHECK(train(corpus, {}, cfg, tiny(Variant::NonAttention)).attention_loss_evaluations == 0);
  CHECK(train(corpus, {}, cfg, tiny(Variant::FullAttention)).attention_loss_evaluations == 4);
}

TEST_CASE("train: input validation") {
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train({}, {}, cfg, tiny(Variant::GatedUnit)), ContractError);
  auto one_class = random_corpus(7, 2, 4);
  for (auto& u : one_class) std::fill(u.labels.begin(), u.labels.end(), 1);
  CHECK_THROWS_AS(train(one_class, {}, cfg, tiny(Variant::GatedUnit)), ContractError);
  TrainConfig bad;
  bad.clip_lo = 1;
  bad.clip_hi = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.lr = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("one small Adam step lowers the loss on a fixed batch (10 trials, 1 miss allowed)") {
  int misses = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto batch = random_corpus(100 + trial, 3, 4);
    const auto cfg = tiny(trial % 2 ? Variant::FullAttention : Variant::GatedUnit);
    auto params = init_params(cfg, trial);
    TrainConfig tc;
    tc.lr = 1e-4;
    LossOptions opts;
    auto batch_loss = [&](const MlnetParams& p, MlnetParams* grads) {
      double total = 0;
      for (const auto& u : batch) {
        LossOptions o = opts;
        o.compute_grads = grads != nullptr;
        auto r = utterance_loss(u, cfg, p, o);
        total += r.total;
        if (grads)
          for (std::size_t k = 0; k < grads->size(); ++k)
            for (std::size_t j = 0; j < grads->tensors[k].size(); ++j)
              grads->tensors[k].data[j] += r.grads.tensors[k].data[j];
      }
      return total;
    };
    auto grads = params.zeros_like();
    const double before = batch_loss(params, &grads);
    auto st = AdamState<float>::zeros_like(params);
    adam_step(params, grads, st, tc);
    if (!(batch_loss(params, nullptr) < before)) ++misses;
  }
  CHECK(misses <= 1);
}

TEST_CASE("a large attention weight sharpens the branch weights") {
  const auto corpus = random_corpus(11, 8, 4);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 2;
  cfg.lr = 0.01;
  cfg.seed = 4;
  const auto model = tiny(Variant::FullAttention);
  cfg.attention_weight = 0.0;
  const auto flat = train(corpus, {}, cfg, model);
  cfg.attention_weight = 10.0;
  const auto sharp = train(corpus, {}, cfg, model);
  const double m0 = mean_max_attention(corpus, model, flat.final_params);
  const double m10 = mean_max_attention(corpus, model, sharp.final_params);
  CAPTURE(m0);
  CAPTURE(m10);
  CHECK(m10 > m0);
}

TEST_CASE("separable toy corpus: loud tone vs silence is learned within 5 epochs") {
  const auto corpus = tone_corpus(1, 24);
  const std::vector<LabeledUtterance> train_set(corpus.begin(), corpus.begin() + 20);
  const std::vector<LabeledUtterance> dev_set(corpus.begin() + 20, corpus.end());
  ModelConfig model;
  model.receptive_fields = {1, 3};
  model.gated_dim = 8;
  model.attn_hidden = 8;
  model.lstm_hidden = 8;
  model.fc_hidden = 8;
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 2;
  cfg.lr = 0.01;
  cfg.seed = 1;
  std::ostringstream log;
  TrainOptions opts;
  opts.log = &log;
  const auto res = train(train_set, dev_set, cfg, model, opts);
  CAPTURE(log.str());
  CHECK(res.best_dev_f1 >= 0.99);
  CHECK(res.log.size() == 5);
}

TEST_CASE("train writes per-epoch checkpoints, best.mlnt and a TSV log") {
  const auto dir = scratch_dir("train");
  const auto corpus = random_corpus(12, 6, 4);
  const std::vector<LabeledUtterance> dev(corpus.begin() + 4, corpus.end());
  const std::vector<LabeledUtterance> tr(corpus.begin(), corpus.begin() + 4);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  const auto model = tiny(Variant::GatedUnit);
  TrainOptions opts;
  opts.out_dir = dir;
  const auto res = train(tr, dev, cfg, model, opts);
  for (int e = 1; e <= 3; ++e) CHECK(std::filesystem::exists(dir / ("epoch_" + std::to_string(e) + ".mlnt")));
  const auto best = load_checkpoint(dir / "best.mlnt", model);
  CHECK(best.params.tensors[0].data == res.best_params.tensors[0].data);
  const auto epoch = load_checkpoint(dir / ("epoch_" + std::to_string(res.best_epoch) + ".mlnt"));
  CHECK(epoch.params.tensors[0].data == best.params.tensors[0].data);
  std::ifstream log(dir / "train_log.tsv");
  std::string header, line;
  std::getline(log, header);
  CHECK(header == "epoch\ttrain_loss\tdev_f1\tdev_dcf");
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 3);
  std::filesystem::remove_all(dir);
}
