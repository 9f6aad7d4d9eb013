// SPDX-License-Identifier: Apache-2.0
#include "mlnet/frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>

#include "mlnet/error.hpp"

namespace mlnet {

std::size_t FrontendConfig::frame_len_samples() const {
  return static_cast<std::size_t>(std::lround(frame_len_ms * sample_rate / 1000.0));
}

std::size_t FrontendConfig::hop_samples() const {
  return static_cast<std::size_t>(std::lround(hop_ms * sample_rate / 1000.0));
}

void FrontendConfig::validate() const {
  if (sample_rate <= 0) throw ContractError("frontend: sample_rate must be positive");
  if (frame_len_samples() == 0 || hop_samples() == 0) throw ContractError("frontend: frame and hop must be >= 1 sample");
  if (fft_size <= 0 || static_cast<std::size_t>(fft_size) < frame_len_samples()) {
    throw ContractError("frontend: fft_size " + std::to_string(fft_size) + " shorter than frame of " +
                        std::to_string(frame_len_samples()) + " samples");
  }
  if (n_mels < 1) throw ContractError("frontend: n_mels must be >= 1");
  if (!(preemphasis >= 0.0 && preemphasis < 1.0)) throw ContractError("frontend: preemphasis must be in [0, 1)");
  if (!(log_floor > 0.0)) throw ContractError("frontend: log_floor must be positive");
  if (mel_fmin < 0.0 || mel_fmin >= fmax() || fmax() > sample_rate / 2.0) {
    throw ContractError("frontend: need 0 <= mel_fmin < mel_fmax <= sample_rate/2");
  }
}

std::size_t frame_count(std::size_t num_samples, const FrontendConfig& cfg) {
  const std::size_t len = cfg.frame_len_samples();
  if (num_samples < len) return 0;
  return 1 + (num_samples - len) / cfg.hop_samples();
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_points(const FrontendConfig& cfg) {
  const double lo = hz_to_mel(cfg.mel_fmin);
  const double hi = hz_to_mel(cfg.fmax());
  std::vector<double> pts(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = lo + (hi - lo) * static_cast<double>(i) / (cfg.n_mels + 1);
  return pts;
}

// Sparse filter row: weights for bins [first, first + weights.size()).
struct Filter {
  std::size_t first = 0;
  std::vector<double> weights;
};

std::vector<Filter> sparse_bank(const FrontendConfig& cfg) {
  auto dense = mel_filterbank(cfg);
  std::vector<Filter> out(dense.size());
  for (std::size_t m = 0; m < dense.size(); ++m) {
    const auto& row = dense[m];
    auto nz = [](double v) { return v > 0.0; };
    auto b = std::find_if(row.begin(), row.end(), nz);
    auto e = std::find_if(row.rbegin(), row.rend(), nz).base();
    if (b < e) {
      out[m].first = static_cast<std::size_t>(b - row.begin());
      out[m].weights.assign(b, e);
    }
  }
  return out;
}

// One r2c plan per FFT size, executed with the new-array interface so that
// concurrent callers never share buffers.
fftw_plan plan_for(int n) {
  static std::mutex mu;
  static std::map<int, fftw_plan> plans;
  std::lock_guard lock(mu);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  std::vector<double> in(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> out(static_cast<std::size_t>(n) / 2 + 1);
  fftw_plan p = fftw_plan_dft_r2c_1d(n, in.data(), reinterpret_cast<fftw_complex*>(out.data()),
                                     FFTW_ESTIMATE | FFTW_UNALIGNED);
  plans.emplace(n, p);
  return p;
}

std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return w;
}

// Precomputed per-config state for the per-frame transform.
struct LogMelPlan {
  explicit LogMelPlan(const FrontendConfig& c)
      : cfg(c), window(hann(c.frame_len_samples())), bank(sparse_bank(c)), plan(plan_for(c.fft_size)) {}

  void apply(std::span<const double> frame, std::span<double> out) const {
    const auto n = static_cast<std::size_t>(cfg.fft_size);
    std::vector<double> buf(n, 0.0);
    for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i] * window[i];
    std::vector<std::complex<double>> spec(n / 2 + 1);
    fftw_execute_dft_r2c(plan, buf.data(), reinterpret_cast<fftw_complex*>(spec.data()));
    std::vector<double> power(spec.size());
    for (std::size_t k = 0; k < spec.size(); ++k) power[k] = std::norm(spec[k]);
    for (std::size_t m = 0; m < bank.size(); ++m) {
      double e = 0.0;
      const auto& f = bank[m];
      for (std::size_t j = 0; j < f.weights.size(); ++j) e += f.weights[j] * power[f.first + j];
      out[m] = std::log(std::max(e, cfg.log_floor));
    }
  }

  FrontendConfig cfg;
  std::vector<double> window;
  std::vector<Filter> bank;
  fftw_plan plan;
};

void check_frame(std::span<const double> frame, const FrontendConfig& cfg) {
  if (frame.size() != cfg.frame_len_samples()) {
    throw ContractError("logmel: frame has " + std::to_string(frame.size()) + " samples, expected " +
                        std::to_string(cfg.frame_len_samples()));
  }
}

void check_waveform(const Waveform& w, const FrontendConfig& cfg) {
  if (w.sample_rate != cfg.sample_rate) {
    throw ContractError("featurize: waveform at " + std::to_string(w.sample_rate) + " Hz, frontend expects " +
                        std::to_string(cfg.sample_rate) + " Hz");
  }
  for (double s : w.samples) {
    if (!std::isfinite(s)) throw ContractError("featurize: non-finite sample");
  }
}

void normalize_in_place(FeatureSequence& fs) {
  if (fs.num_frames == 0) return;
  for (std::size_t m = 0; m < fs.num_mels; ++m) {
    double mean = 0.0;
    for (std::size_t t = 0; t < fs.num_frames; ++t) mean += fs.at(t, m);
    mean /= static_cast<double>(fs.num_frames);
    double var = 0.0;
    for (std::size_t t = 0; t < fs.num_frames; ++t) var += (fs.at(t, m) - mean) * (fs.at(t, m) - mean);
    var /= static_cast<double>(fs.num_frames);
    const double inv = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    for (std::size_t t = 0; t < fs.num_frames; ++t) {
      float& v = fs.frames[t * fs.num_mels + m];
      v = static_cast<float>((v - mean) * inv);
    }
  }
}

FeatureSequence empty_sequence(const FrontendConfig& cfg, std::size_t frames, std::string id) {
  FeatureSequence fs;
  fs.num_frames = frames;
  fs.num_mels = static_cast<std::size_t>(cfg.n_mels);
  fs.frames.assign(frames * fs.num_mels, 0.0f);
  fs.frame_times.resize(frames);
  for (std::size_t t = 0; t < frames; ++t) fs.frame_times[t] = static_cast<double>(t) * cfg.hop_ms / 1000.0;
  fs.source_id = std::move(id);
  return fs;
}

}  // namespace

std::vector<std::vector<double>> mel_filterbank(const FrontendConfig& cfg) {
  cfg.validate();
  const auto pts = mel_points(cfg);
  const std::size_t bins = static_cast<std::size_t>(cfg.fft_size) / 2 + 1;
  const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.fft_size;
  std::vector<std::vector<double>> bank(static_cast<std::size_t>(cfg.n_mels), std::vector<double>(bins, 0.0));
  for (std::size_t k = 0; k < bins; ++k) {
    const double mel = hz_to_mel(static_cast<double>(k) * bin_hz);
    for (std::size_t m = 0; m < bank.size(); ++m) {
      const double left = pts[m];
      const double center = pts[m + 1];
      const double right = pts[m + 2];
      if (mel > left && mel <= center) {
        bank[m][k] = (mel - left) / (center - left);
      } else if (mel > center && mel < right) {
        bank[m][k] = (right - mel) / (right - center);
      }
    }
  }
  return bank;
}

std::vector<double> mel_centers_hz(const FrontendConfig& cfg) {
  const auto pts = mel_points(cfg);
  std::vector<double> c(static_cast<std::size_t>(cfg.n_mels));
  for (std::size_t m = 0; m < c.size(); ++m) c[m] = mel_to_hz(pts[m + 1]);
  return c;
}

std::vector<std::vector<double>> frame_signal(const Waveform& w, const FrontendConfig& cfg) {
  cfg.validate();
  const std::size_t n = w.samples.size();
  const std::size_t count = frame_count(n, cfg);
  const std::size_t len = cfg.frame_len_samples();
  const std::size_t hop = cfg.hop_samples();
  std::vector<std::vector<double>> frames(count, std::vector<double>(len));
  if (count == 0) return frames;
  std::vector<double> y(n);
  y[0] = w.samples[0];
  for (std::size_t i = 1; i < n; ++i) y[i] = w.samples[i] - cfg.preemphasis * w.samples[i - 1];
  for (std::size_t t = 0; t < count; ++t) std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(t * hop), len, frames[t].begin());
  return frames;
}

std::vector<double> logmel(std::span<const double> frame, const FrontendConfig& cfg) {
  cfg.validate();
  check_frame(frame, cfg);
  LogMelPlan plan(cfg);
  std::vector<double> out(static_cast<std::size_t>(cfg.n_mels));
  plan.apply(frame, out);
  return out;
}

FeatureSequence featurize(const Waveform& w, const FrontendConfig& cfg, std::string source_id) {
  check_waveform(w, cfg);
  const auto frames = frame_signal(w, cfg);
  FeatureSequence fs = empty_sequence(cfg, frames.size(), std::move(source_id));
  if (frames.empty()) return fs;
  const LogMelPlan plan(cfg);
  const auto count = static_cast<std::ptrdiff_t>(frames.size());
#pragma omp parallel
  {
    std::vector<double> row(fs.num_mels);
#pragma omp for schedule(static)
    for (std::ptrdiff_t t = 0; t < count; ++t) {
      plan.apply(frames[static_cast<std::size_t>(t)], row);
      std::transform(row.begin(), row.end(), fs.frames.begin() + t * static_cast<std::ptrdiff_t>(fs.num_mels),
                     [](double v) { return static_cast<float>(v); });
    }
  }
  if (cfg.normalize) normalize_in_place(fs);
  return fs;
}

FeatureSequence featurize_serial(const Waveform& w, const FrontendConfig& cfg, std::string source_id) {
  check_waveform(w, cfg);
  const auto frames = frame_signal(w, cfg);
  FeatureSequence fs = empty_sequence(cfg, frames.size(), std::move(source_id));
  if (frames.empty()) return fs;
  const LogMelPlan plan(cfg);
  std::vector<double> row(fs.num_mels);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    plan.apply(frames[t], row);
    for (std::size_t m = 0; m < row.size(); ++m) fs.frames[t * fs.num_mels + m] = static_cast<float>(row[m]);
  }
  if (cfg.normalize) normalize_in_place(fs);
  return fs;
}

}  // namespace mlnet
