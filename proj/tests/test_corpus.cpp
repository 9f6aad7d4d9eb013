// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <fstream>
#include <set>

#include "mlnet/corpus.hpp"
#include "mlnet/error.hpp"
#include "test_support.hpp"

using namespace mlnet;

namespace {

Waveform alternating(double amp, std::size_t n) {
  Waveform w;
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(i % 2 ? -amp : amp);
  return w;
}

// Recovers the two scaled components from a mix and measures their SNR with plain loops.
double oracle_snr(const Waveform& clean, const MixResult& r, const SpeechMask& mask) {
  double pc = 0, pn = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < clean.samples.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double c = r.rescale * clean.samples[i];
    const double n = r.mixed.samples[i] - c;
    pc += c * c;
    pn += n * n;
    ++count;
  }
  return 10 * std::log10((pc / count) / (pn / count));
}

}  // namespace

TEST_CASE("pad_silence examples") {
  MixSpec spec;
  Waveform one = alternating(0.3, 16000);
  auto p = pad_silence(one, spec);
  CHECK(p.wave.samples.size() == 5 * 16000);
  CHECK(std::accumulate(p.mask.begin(), p.mask.end(), 0) == 16000);

  Waveform half = alternating(0.3, 8000);
  auto q = pad_silence(half, spec);
  CHECK(std::find(q.mask.begin(), q.mask.end(), 1) - q.mask.begin() == 32000);
  // Middle region is bit-exact.
  CHECK(std::equal(half.samples.begin(), half.samples.end(), q.wave.samples.begin() + 32000));

  MixSpec none;
  none.silence_pad_s = 0;
  auto z = pad_silence(half, none);
  CHECK(z.wave.samples == half.samples);

  // An input mask is inherited in the middle.
  SpeechMask m(8000, 0);
  std::fill(m.begin() + 100, m.begin() + 200, 1);
  auto r = pad_silence(half, spec, m);
  CHECK(std::accumulate(r.mask.begin(), r.mask.end(), 0) == 100);
  CHECK(r.mask[32100] == 1);
  CHECK(r.mask[32099] == 0);
}

TEST_CASE("mix_noise gain examples") {
  const Waveform clean = alternating(0.1, 1000);  // power 0.01
  const Waveform noise = alternating(0.2, 1000);  // power 0.04
  auto r = mix_noise(clean, noise, 0.0);
  CHECK(r.gain == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.rescale == 1.0);

  auto same = mix_noise(clean, clean, 0.0);
  CHECK(same.gain == doctest::Approx(1.0).epsilon(1e-12));

  std::mt19937_64 rng(3);
  Waveform c2, n2;
  c2.samples = testing::uniform_vec(rng, 4000, -0.5, 0.5);
  n2.samples = testing::uniform_vec(rng, 4000, -0.5, 0.5);
  auto hi = mix_noise(c2, n2, 100.0);
  CHECK(std::abs(oracle_snr(c2, hi, {}) - 100.0) <= 0.1);
}

TEST_CASE("mix_noise rejects undefined SNR and mismatched rates") {
  Waveform z;
  z.samples.assign(100, 0.0);
  const Waveform n = alternating(0.2, 100);
  CHECK_THROWS_AS(mix_noise(z, n, 0.0), ContractError);
  CHECK_THROWS_AS(mix_noise(n, z, 0.0), ContractError);
  Waveform other = n;
  other.sample_rate = 8000;
  CHECK_THROWS_AS(mix_noise(n, other, 0.0), ContractError);
}

TEST_CASE("mix_noise: SNR fidelity over random inputs (property, 200 draws)") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> snr_d(-5.0, 20.0);
  std::uniform_int_distribution<std::size_t> len_d(200, 20000);
  std::uniform_real_distribution<double> amp_d(0.01, 1.0);
  int clipped = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = len_d(rng);
    Waveform clean, noise;
    clean.samples = testing::uniform_vec(rng, n, -amp_d(rng), amp_d(rng) + 0.01);
    noise.samples = testing::uniform_vec(rng, len_d(rng) / 2 + 50, -1, 1);  // often shorter: tiled
    SpeechMask mask;
    if (i % 2) {
      mask.assign(n, 0);
      const std::size_t a = n / 4, b = a + n / 2;
      std::fill(mask.begin() + a, mask.begin() + b, 1);
    }
    const double target = snr_d(rng);
    const auto r = mix_noise(clean, noise, target, mask);
    if (r.rescale < 1.0) ++clipped;
    double peak = 0;
    for (double s : r.mixed.samples) peak = std::max(peak, std::abs(s));
    CHECK(peak <= 0.99 + 1e-12);
    CAPTURE(i);
    CHECK(std::abs(oracle_snr(clean, r, mask) - target) <= 0.1);
  }
  CHECK(clipped > 0);  // the joint-rescale path was exercised
}

TEST_CASE("label_frames rules") {
  FrontendConfig c;
  CHECK(label_frames(SpeechMask(16000, 1), c) == std::vector<std::uint8_t>(98, 1));
  CHECK(label_frames(SpeechMask(16000, 0), c) == std::vector<std::uint8_t>(98, 0));
  SpeechMask half(400, 0);
  std::fill(half.begin(), half.begin() + 200, 1);
  CHECK(label_frames(half, c) == std::vector<std::uint8_t>{0});
  half[200] = 1;
  CHECK(label_frames(half, c) == std::vector<std::uint8_t>{1});

  std::mt19937_64 rng(9);
  for (int i = 0; i < 30; ++i) {
    const std::size_t n = rng() % 40000;
    Waveform w;
    w.samples.assign(n, 0.0);
    CHECK(label_frames(SpeechMask(n, 1), c).size() == featurize(w, c).num_frames);
  }
}

TEST_CASE("synthetic corpus: deterministic, both classes, labels sized to frames") {
  MixSpec spec;
  spec.seed = 17;
  FrontendConfig c;
  const auto a = synth_corpus(12, spec, c);
  const auto b = synth_corpus(12, spec, c);
  REQUIRE(a.size() == 12);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].features.frames == b[i].features.frames);
    CHECK(a[i].labels == b[i].labels);
    CHECK(a[i].labels.size() == a[i].features.num_frames);
    const auto ones = std::count(a[i].labels.begin(), a[i].labels.end(), 1);
    CHECK(ones > 0);
    CHECK(ones < static_cast<long>(a[i].labels.size()));
    ids.insert(a[i].source_id);
  }
  CHECK(ids.size() == 12);
  // Utterance i depends only on (seed, i).
  const auto tail = synth_corpus(3, spec, c, 9);
  CHECK(tail[0].features.frames == a[9].features.frames);
}

TEST_CASE("synthetic waveforms honour the mix spec") {
  MixSpec spec;
  spec.seed = 5;
  const auto u = synth_waveforms(100, spec);
  double mean = 0;
  std::set<int> kinds;
  for (const auto& s : u) {
    CHECK(s.snr_db >= -5.0);
    CHECK(s.snr_db <= 20.0);
    mean += s.snr_db;
    kinds.insert(static_cast<int>(s.noise));
    // 2 s of pad on each side, 0.5-3 s of speech.
    const double secs = s.wave.samples.size() / 16000.0;
    CHECK(secs >= 4.5 - 1e-9);
    CHECK(secs <= 7.0 + 1e-9);
    CHECK(std::find(s.mask.begin(), s.mask.end(), 1) - s.mask.begin() == 32000);
    double peak = 0;
    for (double x : s.wave.samples) peak = std::max(peak, std::abs(x));
    CHECK(peak <= 0.99 + 1e-12);
  }
  mean /= 100;
  CHECK(std::abs(mean - 7.5) <= 1.0);
  CHECK(kinds.size() == 3);
}

TEST_CASE("synthetic speech: measured SNR of a synthetic mix matches its tag") {
  MixSpec spec;
  spec.seed = 8;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto u = synth_utterance(spec, i, 16000);
    double on = 0, off = 0;
    std::size_t non = 0, noff = 0;
    for (std::size_t k = 0; k < u.mask.size(); ++k) {
      const double e = u.wave.samples[k] * u.wave.samples[k];
      if (u.mask[k]) on += e, ++non;
      else off += e, ++noff;
    }
    const double measured = 10 * std::log10((on / non - off / noff) / (off / noff));
    CAPTURE(u.snr_db);
    // Pads hold noise only, so on - off estimates speech power; noise is
    // stationary enough for a coarse check.
    CHECK(std::abs(measured - u.snr_db) < 3.0);
  }
}

TEST_CASE("train/dev split") {
  const auto s = split_train_dev(200, 3);
  CHECK(s.dev.size() == 10);
  CHECK(s.train.size() == 190);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.dev.begin(), s.dev.end());
  CHECK(all.size() == 200);
  CHECK(*all.rbegin() == 199);
  const auto again = split_train_dev(200, 3);
  CHECK(again.dev == s.dev);
  CHECK(split_train_dev(200, 4).dev != s.dev);
  CHECK(split_train_dev(10, 1).dev.size() == 1);
  CHECK(split_train_dev(1, 1).dev.empty());
}

TEST_CASE("mask and manifest files round trip") {
  const auto dir = testing::scratch_dir("corpus");
  std::mt19937_64 rng(1);
  SpeechMask m(5000);
  for (auto& x : m) x = (rng() % 7) < 3;
  write_mask(dir / "a.mask", m);
  CHECK(read_mask(dir / "a.mask") == m);
  write_mask(dir / "e.mask", SpeechMask{});
  CHECK(read_mask(dir / "e.mask").empty());

  std::vector<ManifestEntry> entries{{"u0", "wav/u0.wav", "mask/u0.mask", "train", 3.25},
                                     {"u1", "wav/u1.wav", "mask/u1.mask", "dev", -4.5}};
  write_manifest(dir / "manifest.tsv", entries);
  const auto back = read_manifest(dir / "manifest.tsv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].id == "u1");
  CHECK(back[1].split == "dev");
  CHECK(back[1].snr_db == -4.5);
  CHECK(back[0].wav == dir / "wav/u0.wav");

  std::ofstream(dir / "bad.mask") << "#mlnet-mask 1\n10\n1 4\n0 4\n";
  CHECK_THROWS_AS(read_mask(dir / "bad.mask"), IoError);
  std::ofstream(dir / "bad.tsv") << "hello\n";
  CHECK_THROWS_AS(read_manifest(dir / "bad.tsv"), IoError);
  std::filesystem::remove_all(dir);
}
