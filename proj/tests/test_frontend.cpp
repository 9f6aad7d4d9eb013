// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "mlnet/error.hpp"
#include "mlnet/feature_io.hpp"
#include "mlnet/frontend.hpp"
#include "mlnet/wav.hpp"
#include "test_support.hpp"

using namespace mlnet;

namespace {

constexpr double kPi = std::numbers::pi;

Waveform tone(double hz, double seconds, double amp = 0.5, int sr = 16000) {
  Waveform w;
  w.sample_rate = sr;
  const auto n = static_cast<std::size_t>(std::lround(seconds * sr));
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(amp * std::sin(2 * kPi * hz * static_cast<double>(i) / sr));
  return w;
}

// Independent log-mel: symmetric Hann, O(N^2) DFT, HTK triangles evaluated at bin centres.
std::vector<double> oracle_logmel(const std::vector<double>& frame, const FrontendConfig& c) {
  const std::size_t L = frame.size();
  const std::size_t N = static_cast<std::size_t>(c.fft_size);
  std::vector<double> x(N, 0.0);
  for (std::size_t i = 0; i < L; ++i) x[i] = frame[i] * (0.5 - 0.5 * std::cos(2 * kPi * i / (L - 1.0)));
  std::vector<double> power(N / 2 + 1);
  for (std::size_t k = 0; k <= N / 2; ++k) {
    std::complex<double> s = 0;
    for (std::size_t n = 0; n < N; ++n) s += x[n] * std::polar(1.0, -2 * kPi * double(k) * double(n) / double(N));
    power[k] = std::norm(s);
  }
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  const double lo = mel(c.mel_fmin), hi = mel(c.fmax());
  std::vector<double> out(static_cast<std::size_t>(c.n_mels));
  for (int m = 0; m < c.n_mels; ++m) {
    const double l = lo + (hi - lo) * m / (c.n_mels + 1.0);
    const double ctr = lo + (hi - lo) * (m + 1) / (c.n_mels + 1.0);
    const double r = lo + (hi - lo) * (m + 2) / (c.n_mels + 1.0);
    double e = 0;
    for (std::size_t k = 0; k <= N / 2; ++k) {
      const double b = mel(double(k) * c.sample_rate / N);
      double wgt = 0;
      if (b > l && b <= ctr) wgt = (b - l) / (ctr - l);
      else if (b > ctr && b < r) wgt = (r - b) / (r - ctr);
      e += wgt * power[k];
    }
    out[static_cast<std::size_t>(m)] = std::log(std::max(e, c.log_floor));
  }
  return out;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::ofstream o(p, std::ios::binary);
  o.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

void put16(std::vector<unsigned char>& b, unsigned v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}
void put32(std::vector<unsigned char>& b, unsigned v) {
  put16(b, v & 0xffff);
  put16(b, v >> 16);
}

std::vector<unsigned char> wav_bytes(unsigned tag, unsigned channels, unsigned bits, unsigned nsamples) {
  std::vector<unsigned char> b;
  const unsigned block = channels * bits / 8;
  const unsigned data = nsamples * block;
  for (char ch : std::string("RIFF")) b.push_back(static_cast<unsigned char>(ch));
  put32(b, 36 + data);
  for (char ch : std::string("WAVEfmt ")) b.push_back(static_cast<unsigned char>(ch));
  put32(b, 16);
  put16(b, tag);
  put16(b, channels);
  put32(b, 16000);
  put32(b, 16000 * block);
  put16(b, block);
  put16(b, bits);
  for (char ch : std::string("data")) b.push_back(static_cast<unsigned char>(ch));
  put32(b, data);
  b.resize(b.size() + data, 0);
  return b;
}

}  // namespace

TEST_CASE("frame counts") {
  FrontendConfig c;
  CHECK(c.frame_len_samples() == 400);
  CHECK(c.hop_samples() == 160);
  CHECK(frame_count(400, c) == 1);
  CHECK(frame_count(640, c) == 2);
  CHECK(frame_count(16000, c) == 98);
  CHECK(frame_count(399, c) == 0);
  CHECK(frame_count(0, c) == 0);
}

TEST_CASE("frame-count formula over random lengths (property)") {
  std::mt19937_64 rng(1);
  FrontendConfig c;
  std::uniform_int_distribution<std::size_t> len(0, 10 * 16000);
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = len(rng);
    // Brute force: count start offsets whose frame fits.
    std::size_t expect = 0;
    for (std::size_t s = 0; s + 400 <= n; s += 160) ++expect;
    Waveform w;
    w.samples.assign(n, 0.0);
    CHECK(frame_count(n, c) == expect);
    if (i < 20) CHECK(featurize(w, c).num_frames == expect);
  }
}

TEST_CASE("frame_signal applies pre-emphasis and hop spacing") {
  FrontendConfig c;
  Waveform w;
  for (int i = 0; i < 800; ++i) w.samples.push_back(0.001 * i);
  const auto frames = frame_signal(w, c);
  REQUIRE(frames.size() == 3);
  CHECK(frames[0][0] == w.samples[0]);
  CHECK(frames[0][5] == doctest::Approx(w.samples[5] - 0.97 * w.samples[4]));
  CHECK(frames[1][0] == doctest::Approx(w.samples[160] - 0.97 * w.samples[159]));
  CHECK(frames[2].size() == 400);
}

TEST_CASE("logmel: zero frame hits the floor") {
  FrontendConfig c;
  const auto v = logmel(std::vector<double>(400, 0.0), c);
  REQUIRE(v.size() == 40);
  for (double x : v) CHECK(x == std::log(1e-10));
}

TEST_CASE("logmel: wrong frame length is a contract violation") {
  FrontendConfig c;
  CHECK_THROWS_AS(logmel(std::vector<double>(399, 0.0), c), ContractError);
}

TEST_CASE("logmel matches a direct-DFT oracle") {
  std::mt19937_64 rng(5);
  FrontendConfig c;
  for (int trial = 0; trial < 5; ++trial) {
    const auto frame = testing::uniform_vec(rng, 400, -0.5, 0.5);
    const auto got = logmel(frame, c);
    const auto want = oracle_logmel(frame, c);
    for (std::size_t m = 0; m < got.size(); ++m) CHECK(got[m] == doctest::Approx(want[m]).epsilon(1e-9));
  }
  FrontendConfig c2;
  c2.n_mels = 23;
  c2.mel_fmin = 100;
  c2.mel_fmax = 7000;
  c2.fft_size = 1024;
  const auto frame = testing::uniform_vec(rng, 400, -0.5, 0.5);
  const auto got = logmel(frame, c2);
  const auto want = oracle_logmel(frame, c2);
  for (std::size_t m = 0; m < got.size(); ++m) CHECK(got[m] == doctest::Approx(want[m]).epsilon(1e-9));
}

TEST_CASE("logmel: sinusoid at a filter centre peaks in that band") {
  FrontendConfig c;
  const auto centres = mel_centers_hz(c);
  int checked = 0;
  for (std::size_t m = 0; m < centres.size(); ++m) {
    std::vector<double> frame(400);
    for (std::size_t i = 0; i < 400; ++i) frame[i] = 0.5 * std::sin(2 * kPi * centres[m] * double(i) / 16000.0);
    // Which band does the direct-summation oracle say wins?
    const auto want = oracle_logmel(frame, c);
    const auto got = logmel(frame, c);
    const auto oracle_best = std::max_element(want.begin(), want.end()) - want.begin();
    const auto best = std::max_element(got.begin(), got.end()) - got.begin();
    CAPTURE(m);
    CHECK(best == oracle_best);
    // Where a triangle spans several FFT bins (all but the lowest bands) the winner is band m itself.
    if (m >= 8) {
      CHECK(best == static_cast<std::ptrdiff_t>(m));
      ++checked;
    }
  }
  CHECK(checked == 32);
}

TEST_CASE("logmel: doubling the frame adds ln 4 above the floor") {
  std::mt19937_64 rng(8);
  FrontendConfig c;
  auto frame = testing::uniform_vec(rng, 400, -0.3, 0.3);
  const auto a = logmel(frame, c);
  for (auto& x : frame) x *= 2;
  const auto b = logmel(frame, c);
  for (std::size_t m = 0; m < a.size(); ++m) {
    if (a[m] > std::log(c.log_floor) + 1) CHECK(b[m] - a[m] == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  }
}

TEST_CASE("filterbank rows are non-negative and each bin feeds at most 2 filters") {
  for (int n_mels : {1, 13, 40, 80}) {
    FrontendConfig c;
    c.n_mels = n_mels;
    c.mel_fmin = n_mels == 13 ? 300 : 0;
    const auto bank = mel_filterbank(c);
    REQUIRE(bank.size() == static_cast<std::size_t>(n_mels));
    for (std::size_t k = 0; k < bank[0].size(); ++k) {
      int count = 0;
      for (const auto& row : bank) {
        CHECK(row[k] >= 0.0);
        CHECK(row[k] <= 1.0);
        if (row[k] > 0) ++count;
      }
      CHECK(count <= 2);
    }
  }
}

TEST_CASE("featurize: silence, empty input, tone length") {
  FrontendConfig c;
  Waveform silence;
  silence.samples.assign(16000, 0.0);
  const auto fs = featurize(silence, c, "sil");
  CHECK(fs.num_frames == 98);
  CHECK(fs.num_mels == 40);
  CHECK(fs.source_id == "sil");
  for (float v : fs.frames) CHECK(v == static_cast<float>(std::log(1e-10)));
  CHECK(fs.frame_times[3] == doctest::Approx(0.03));

  Waveform empty;
  CHECK(featurize(empty, c).num_frames == 0);

  const auto t = featurize(tone(440, 2.0), c);
  CHECK(t.num_frames == 198);
  for (float v : t.frames) CHECK(std::isfinite(v));
}

TEST_CASE("featurize: sample-rate mismatch is rejected") {
  FrontendConfig c;
  auto w = tone(440, 0.1, 0.5, 8000);
  CHECK_THROWS_AS(featurize(w, c), ContractError);
}

TEST_CASE("one-hop time shift moves features by one frame") {
  std::mt19937_64 rng(3);
  FrontendConfig c;
  Waveform w;
  w.samples = testing::uniform_vec(rng, 8000, -0.5, 0.5);
  Waveform shifted;
  shifted.samples = testing::uniform_vec(rng, 160, -0.5, 0.5);
  shifted.samples.insert(shifted.samples.end(), w.samples.begin(), w.samples.end());
  const auto a = frame_signal(w, c);
  const auto b = frame_signal(shifted, c);
  REQUIRE(b.size() == a.size() + 1);
  // Frame 0 of the original differs by the pre-emphasis boundary sample only.
  for (std::size_t t = 1; t < a.size(); ++t) {
    const auto fa = logmel(a[t], c);
    const auto fb = logmel(b[t + 1], c);
    for (std::size_t m = 0; m < fa.size(); ++m) CHECK(std::abs(fa[m] - fb[m]) <= 1e-9);
  }
}

TEST_CASE("featurize is deterministic and matches the serial reference") {
  std::mt19937_64 rng(4);
  FrontendConfig c;
  Waveform w;
  w.samples = testing::uniform_vec(rng, 40000, -0.8, 0.8);
  const auto a = featurize(w, c);
  const auto b = featurize(w, c);
  const auto s = featurize_serial(w, c);
  REQUIRE(a.frames.size() == s.frames.size());
  CHECK(std::memcmp(a.frames.data(), b.frames.data(), a.frames.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(a.frames.data(), s.frames.data(), a.frames.size() * sizeof(float)) == 0);
}

TEST_CASE("optional normalization gives zero-mean unit-variance bands") {
  std::mt19937_64 rng(6);
  FrontendConfig c;
  c.normalize = true;
  Waveform w;
  w.samples = testing::uniform_vec(rng, 16000, -0.5, 0.5);
  const auto fs = featurize(w, c);
  for (std::size_t m = 0; m < fs.num_mels; ++m) {
    double mean = 0, sq = 0;
    for (std::size_t t = 0; t < fs.num_frames; ++t) mean += fs.at(t, m);
    mean /= fs.num_frames;
    for (std::size_t t = 0; t < fs.num_frames; ++t) sq += (fs.at(t, m) - mean) * (fs.at(t, m) - mean);
    CHECK(std::abs(mean) < 1e-4);
    CHECK(sq / fs.num_frames == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("config validation") {
  FrontendConfig c;
  c.fft_size = 256;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = {};
  c.preemphasis = 1.0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = {};
  c.n_mels = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
}

TEST_CASE("WAV round trip and rejection") {
  const auto dir = testing::scratch_dir("wav");
  Waveform w = tone(300, 0.2, 0.7);
  write_wav(dir / "t.wav", w);
  const auto r = read_wav(dir / "t.wav");
  CHECK(r.sample_rate == 16000);
  REQUIRE(r.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(std::abs(r.samples[i] - w.samples[i]) <= 1.0 / 32767);
  // Re-writing what was read is lossless.
  write_wav(dir / "t2.wav", r);
  CHECK(read_wav(dir / "t2.wav").samples == r.samples);

  write_bytes(dir / "stereo.wav", wav_bytes(1, 2, 16, 10));
  write_bytes(dir / "pcm8.wav", wav_bytes(1, 1, 8, 10));
  write_bytes(dir / "float.wav", wav_bytes(3, 1, 32, 10));
  write_bytes(dir / "ok.wav", wav_bytes(1, 1, 16, 10));
  write_bytes(dir / "junk.wav", {'n', 'o', 'p', 'e'});
  CHECK(read_wav(dir / "ok.wav").samples.size() == 10);
  for (const char* bad : {"stereo.wav", "pcm8.wav", "float.wav", "junk.wav", "missing.wav"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(read_wav(dir / bad), IoError);
  }
  try {
    read_wav(dir / "stereo.wav");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("channels") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("feature dump round trip") {
  const auto dir = testing::scratch_dir("mlfb");
  FrontendConfig c;
  const auto fs = featurize(tone(1000, 0.5), c);
  write_feature_dump(dir / "f.mlfb", fs);
  const auto back = read_feature_dump(dir / "f.mlfb");
  CHECK(back.num_frames == fs.num_frames);
  CHECK(back.num_mels == 40);
  CHECK(back.frames == fs.frames);
  CHECK(std::filesystem::file_size(dir / "f.mlfb") == 12 + 4 * fs.frames.size());
  std::filesystem::remove_all(dir);
}
