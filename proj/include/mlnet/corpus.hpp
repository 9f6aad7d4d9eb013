// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mlnet/frontend.hpp"

namespace mlnet {

/// Per-sample speech activity, 1 = speech.
using SpeechMask = std::vector<std::uint8_t>;

struct MixSpec {
  double snr_db_min = -5.0;
  double snr_db_max = 20.0;
  double silence_pad_s = 2.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LabeledUtterance {
  FeatureSequence features;
  std::vector<std::uint8_t> labels;  // one per frame
  std::string source_id;
};

struct MaskedWaveform {
  Waveform wave;
  SpeechMask mask;
};

/// [pad zeros] ++ w ++ [pad zeros]. `mask` marks speech inside `w`; empty
/// means all of `w` is speech.
MaskedWaveform pad_silence(const Waveform& w, const MixSpec& spec, std::span<const std::uint8_t> mask = {});

/// Mean square of `w` over samples where mask == 1 (all samples if mask is empty).
double active_power(std::span<const double> w, std::span<const std::uint8_t> mask = {});

struct MixResult {
  Waveform mixed;
  double gain = 0.0;     // noise gain g, so clean/(g*noise) hits the target SNR
  double rescale = 1.0;  // joint factor applied to avoid clipping (<= 1)
};

/// clean + g*noise at the requested SNR, measured over the speech-active
/// region. Noise shorter than clean is tiled. Throws ContractError when either
/// power is zero or the sample rates differ.
MixResult mix_noise(const Waveform& clean, const Waveform& noise, double snr_db,
                    std::span<const std::uint8_t> mask = {});

/// SNR in dB of clean vs noise over the active region.
double measure_snr_db(std::span<const double> clean, std::span<const double> noise,
                      std::span<const std::uint8_t> mask = {});

/// Frame t is speech iff strictly more than half its samples are speech.
std::vector<std::uint8_t> label_frames(std::span<const std::uint8_t> mask, const FrontendConfig& cfg);

enum class NoiseKind { White, Pink, Babble };
const char* noise_kind_name(NoiseKind k);

/// A synthetic utterance before featurization.
struct SynthUtterance {
  std::string id;
  Waveform wave;  // padded and mixed
  SpeechMask mask;
  double snr_db = 0.0;
  NoiseKind noise = NoiseKind::White;
};

/// Harmonic speech surrogate: 3-5 harmonics of f0 in [80, 300] Hz with 2-8 Hz AM.
Waveform synth_speech(std::uint64_t seed, double seconds, int sample_rate);
Waveform synth_noise(std::uint64_t seed, NoiseKind kind, std::size_t num_samples, int sample_rate);

SynthUtterance synth_utterance(const MixSpec& spec, std::size_t index, int sample_rate);
/// n utterances; utterance i depends only on (spec.seed, i).
std::vector<SynthUtterance> synth_waveforms(std::size_t n, const MixSpec& spec, int sample_rate = 16000,
                                            std::size_t first_index = 0);

LabeledUtterance label_utterance(const Waveform& wave, std::span<const std::uint8_t> mask, const FrontendConfig& cfg,
                                 std::string id);
std::vector<LabeledUtterance> synth_corpus(std::size_t n, const MixSpec& spec, const FrontendConfig& cfg,
                                           std::size_t first_index = 0);

struct TrainDevSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
};
/// Seeded shuffle, then round(n * dev_fraction) (at least 1 when n >= 2) go to dev.
TrainDevSplit split_train_dev(std::size_t n, std::uint64_t seed, double dev_fraction = 0.05);

// On-disk formats.

/// Run-length text: "#mlnet-mask 1", sample count, then "value length" lines.
void write_mask(const std::filesystem::path& path, std::span<const std::uint8_t> mask);
SpeechMask read_mask(const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  std::filesystem::path wav;   // resolved against the manifest directory on read
  std::filesystem::path mask;
  std::string split;           // train | dev | eval
  double snr_db = 0.0;
};

/// TSV with a "#mlnet-manifest 1" header line and a column header.
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace mlnet
