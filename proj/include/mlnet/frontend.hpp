// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mlnet {

struct Waveform {
  std::vector<double> samples;  // amplitudes in [-1, 1]
  int sample_rate = 16000;
};

struct FrontendConfig {
  double frame_len_ms = 25.0;
  double hop_ms = 10.0;
  int n_mels = 40;
  int fft_size = 512;
  double preemphasis = 0.97;
  double log_floor = 1e-10;
  double mel_fmin = 0.0;
  double mel_fmax = 0.0;  // <= 0 means sample_rate / 2
  bool normalize = false;  // per-utterance mean/variance normalization
  int sample_rate = 16000;

  std::size_t frame_len_samples() const;
  std::size_t hop_samples() const;
  double fmax() const { return mel_fmax > 0 ? mel_fmax : sample_rate / 2.0; }
  /// Throws ContractError when a field is out of range.
  void validate() const;
};

/// T x n_mels log-mel energies, row-major.
struct FeatureSequence {
  std::size_t num_frames = 0;
  std::size_t num_mels = 0;
  std::vector<float> frames;
  std::vector<double> frame_times;  // start time of each frame, seconds
  std::string source_id;

  std::span<const float> frame(std::size_t t) const { return {frames.data() + t * num_mels, num_mels}; }
  float at(std::size_t t, std::size_t m) const { return frames[t * num_mels + m]; }
};

/// 1 + floor((N - L) / H) for N >= L, else 0.
std::size_t frame_count(std::size_t num_samples, const FrontendConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filterbank in HTK mel space: n_mels rows x (fft_size/2 + 1) bins.
std::vector<std::vector<double>> mel_filterbank(const FrontendConfig& cfg);
/// Centre frequency of each filter, Hz.
std::vector<double> mel_centers_hz(const FrontendConfig& cfg);

/// Pre-emphasised, hop-spaced frames of frame_len_samples each.
std::vector<std::vector<double>> frame_signal(const Waveform& w, const FrontendConfig& cfg);

/// Hann window, zero-pad to fft_size, power spectrum, mel filterbank, ln(max(E, floor)).
std::vector<double> logmel(std::span<const double> frame, const FrontendConfig& cfg);

/// frame_signal + logmel for every frame (OpenMP across frames).
FeatureSequence featurize(const Waveform& w, const FrontendConfig& cfg, std::string source_id = {});
/// Frame-by-frame serial path; reference for featurize().
FeatureSequence featurize_serial(const Waveform& w, const FrontendConfig& cfg, std::string source_id = {});

}  // namespace mlnet
