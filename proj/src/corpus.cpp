// SPDX-License-Identifier: Apache-2.0
#include "mlnet/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "mlnet/error.hpp"

namespace mlnet {
namespace {

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t index, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), stream};
  return std::mt19937_64(seq);
}

bool active(std::span<const std::uint8_t> mask, std::size_t i) { return mask.empty() || mask[i] != 0; }

void check_mask(std::span<const std::uint8_t> mask, std::size_t n, const char* op) {
  if (!mask.empty() && mask.size() != n) {
    throw ContractError(std::string(op) + ": mask has " + std::to_string(mask.size()) + " entries for " +
                        std::to_string(n) + " samples");
  }
}

constexpr double kPeakLimit = 0.99;

}  // namespace

void MixSpec::validate() const {
  if (!(snr_db_min <= snr_db_max)) throw ContractError("MixSpec: snr_db_min > snr_db_max");
  if (!(silence_pad_s >= 0.0)) throw ContractError("MixSpec: silence_pad_s must be >= 0");
}

MaskedWaveform pad_silence(const Waveform& w, const MixSpec& spec, std::span<const std::uint8_t> mask) {
  spec.validate();
  if (w.samples.empty()) throw ContractError("pad_silence: empty waveform");
  check_mask(mask, w.samples.size(), "pad_silence");
  const auto pad = static_cast<std::size_t>(std::lround(spec.silence_pad_s * w.sample_rate));
  MaskedWaveform out;
  out.wave.sample_rate = w.sample_rate;
  out.wave.samples.assign(pad, 0.0);
  out.wave.samples.insert(out.wave.samples.end(), w.samples.begin(), w.samples.end());
  out.wave.samples.resize(out.wave.samples.size() + pad, 0.0);
  out.mask.assign(pad, 0);
  if (mask.empty()) {
    out.mask.resize(pad + w.samples.size(), 1);
  } else {
    out.mask.insert(out.mask.end(), mask.begin(), mask.end());
  }
  out.mask.resize(out.wave.samples.size(), 0);
  return out;
}

double active_power(std::span<const double> w, std::span<const std::uint8_t> mask) {
  check_mask(mask, w.size(), "active_power");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (active(mask, i)) {
      acc += w[i] * w[i];
      ++n;
    }
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

double measure_snr_db(std::span<const double> clean, std::span<const double> noise, std::span<const std::uint8_t> mask) {
  if (clean.size() != noise.size()) throw ContractError("measure_snr_db: length mismatch");
  return 10.0 * std::log10(active_power(clean, mask) / active_power(noise, mask));
}

MixResult mix_noise(const Waveform& clean, const Waveform& noise, double snr_db, std::span<const std::uint8_t> mask) {
  if (clean.sample_rate != noise.sample_rate) {
    throw ContractError("mix_noise: sample rates differ (" + std::to_string(clean.sample_rate) + " vs " +
                        std::to_string(noise.sample_rate) + ")");
  }
  if (clean.samples.empty() || noise.samples.empty()) throw ContractError("mix_noise: empty input");
  check_mask(mask, clean.samples.size(), "mix_noise");

  const std::size_t n = clean.samples.size();
  std::vector<double> tiled(n);
  for (std::size_t i = 0; i < n; ++i) tiled[i] = noise.samples[i % noise.samples.size()];

  const double pc = active_power(clean.samples, mask);
  const double pn = active_power(tiled, mask);
  if (!(pc > 0.0)) throw ContractError("mix_noise: clean signal has zero power over the speech region");
  if (!(pn > 0.0)) throw ContractError("mix_noise: noise has zero power over the speech region");

  MixResult r;
  r.gain = std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
  r.mixed.sample_rate = clean.sample_rate;
  r.mixed.samples.resize(n);
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r.mixed.samples[i] = clean.samples[i] + r.gain * tiled[i];
    peak = std::max(peak, std::abs(r.mixed.samples[i]));
  }
  if (peak > kPeakLimit) {
    r.rescale = kPeakLimit / peak;
    for (auto& s : r.mixed.samples) s *= r.rescale;
  }
  return r;
}

std::vector<std::uint8_t> label_frames(std::span<const std::uint8_t> mask, const FrontendConfig& cfg) {
  const std::size_t count = frame_count(mask.size(), cfg);
  const std::size_t len = cfg.frame_len_samples();
  const std::size_t hop = cfg.hop_samples();
  std::vector<std::uint8_t> labels(count);
  for (std::size_t t = 0; t < count; ++t) {
    std::size_t on = 0;
    for (std::size_t i = t * hop; i < t * hop + len; ++i) on += mask[i] ? 1 : 0;
    labels[t] = 2 * on > len ? 1 : 0;
  }
  return labels;
}

const char* noise_kind_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::White: return "white";
    case NoiseKind::Pink: return "pink";
    case NoiseKind::Babble: return "babble";
  }
  return "?";
}

Waveform synth_speech(std::uint64_t seed, double seconds, int sample_rate) {
  auto rng = derived_rng(seed, 0, 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  const double f0 = uniform(80.0, 300.0);
  const int harmonics = 3 + static_cast<int>(rng() % 3);
  const double am_rate = uniform(2.0, 8.0);
  const double am_phase = uniform(0.0, 2.0 * std::numbers::pi);
  const double vibrato = uniform(0.0, 0.03);
  std::vector<double> amp(static_cast<std::size_t>(harmonics));
  std::vector<double> phase(amp.size());
  for (std::size_t h = 0; h < amp.size(); ++h) {
    amp[h] = uniform(0.5, 1.0) / static_cast<double>(h + 1);
    phase[h] = uniform(0.0, 2.0 * std::numbers::pi);
  }

  Waveform w;
  w.sample_rate = sample_rate;
  const auto n = static_cast<std::size_t>(std::lround(seconds * sample_rate));
  w.samples.resize(n);
  const double dt = 1.0 / sample_rate;
  const double ramp = 0.01 * sample_rate;
  double theta = 0.0;  // running phase of the fundamental
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const double f = f0 * (1.0 + vibrato * std::sin(2.0 * std::numbers::pi * 3.0 * t));
    theta += 2.0 * std::numbers::pi * f * dt;
    double s = 0.0;
    for (std::size_t h = 0; h < amp.size(); ++h) s += amp[h] * std::sin(static_cast<double>(h + 1) * theta + phase[h]);
    const double env = 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * am_rate * t + am_phase);
    const double edge = std::min({1.0, static_cast<double>(i) / ramp, static_cast<double>(n - 1 - i) / ramp});
    w.samples[i] = s * env * edge;
  }
  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::abs(s));
  const double target = uniform(0.3, 0.6);
  if (peak > 0.0) {
    for (auto& s : w.samples) s *= target / peak;
  }
  return w;
}

Waveform synth_noise(std::uint64_t seed, NoiseKind kind, std::size_t num_samples, int sample_rate) {
  auto rng = derived_rng(seed, 0, 2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(num_samples);
  switch (kind) {
    case NoiseKind::White:
      for (auto& s : w.samples) s = gauss(rng);
      break;
    case NoiseKind::Pink: {
      // Kellet's economy 1/f filter.
      double b0 = 0, b1 = 0, b2 = 0;
      for (auto& s : w.samples) {
        const double x = gauss(rng);
        b0 = 0.99765 * b0 + x * 0.0990460;
        b1 = 0.96300 * b1 + x * 0.2965164;
        b2 = 0.57000 * b2 + x * 1.0526913;
        s = b0 + b1 + b2 + x * 0.1848;
      }
      break;
    }
    case NoiseKind::Babble: {
      // Band-limited noise (two-pole low-pass minus a one-pole low-pass)
      // under a slow random-rate envelope.
      const double rate = 1.0 + 3.0 * u01(rng);
      const double ph = 2.0 * std::numbers::pi * u01(rng);
      double lp1 = 0, lp2 = 0, lo = 0;
      for (std::size_t i = 0; i < num_samples; ++i) {
        const double x = gauss(rng);
        lp1 += 0.35 * (x - lp1);
        lp2 += 0.35 * (lp1 - lp2);
        lo += 0.02 * (x - lo);
        const double env = 1.0 + 0.6 * std::sin(2.0 * std::numbers::pi * rate * static_cast<double>(i) / sample_rate + ph);
        w.samples[i] = (lp2 - lo) * env;
      }
      break;
    }
  }
  return w;
}

// Position in [0, 1) of utterance `index` on the SNR range: a randomly offset
// golden-ratio sequence. Each draw is uniform over seeds, and any run of
// consecutive indices covers the range evenly, so corpus mean SNR sits at the
// midpoint instead of wandering by range/sqrt(12 n).
static double snr_position(std::uint64_t seed, std::size_t index) {
  auto rng = derived_rng(seed, 0, 4);
  const double offset = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  constexpr double kGolden = 0.6180339887498949;
  const double x = offset + kGolden * static_cast<double>(index);
  return x - std::floor(x);
}

SynthUtterance synth_utterance(const MixSpec& spec, std::size_t index, int sample_rate) {
  spec.validate();
  auto rng = derived_rng(spec.seed, index, 0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double seconds = 0.5 + 2.5 * u01(rng);
  const double snr = spec.snr_db_min + (spec.snr_db_max - spec.snr_db_min) * snr_position(spec.seed, index);
  const auto kind = static_cast<NoiseKind>(rng() % 3);
  const std::uint64_t speech_seed = rng();
  const std::uint64_t noise_seed = rng();

  const Waveform speech = synth_speech(speech_seed, seconds, sample_rate);
  MaskedWaveform padded = pad_silence(speech, spec);
  const Waveform noise = synth_noise(noise_seed, kind, padded.wave.samples.size(), sample_rate);
  MixResult mix = mix_noise(padded.wave, noise, snr, padded.mask);

  SynthUtterance u;
  u.id = "utt" + std::to_string(spec.seed) + "_" + std::to_string(index);
  u.wave = std::move(mix.mixed);
  u.mask = std::move(padded.mask);
  u.snr_db = snr;
  u.noise = kind;
  return u;
}

std::vector<SynthUtterance> synth_waveforms(std::size_t n, const MixSpec& spec, int sample_rate, std::size_t first_index) {
  spec.validate();
  std::vector<SynthUtterance> out(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    out[static_cast<std::size_t>(i)] = synth_utterance(spec, first_index + static_cast<std::size_t>(i), sample_rate);
  }
  return out;
}

LabeledUtterance label_utterance(const Waveform& wave, std::span<const std::uint8_t> mask, const FrontendConfig& cfg,
                                 std::string id) {
  if (mask.size() != wave.samples.size()) {
    throw ContractError("label_utterance: mask length " + std::to_string(mask.size()) + " != " +
                        std::to_string(wave.samples.size()) + " samples for " + id);
  }
  LabeledUtterance u;
  u.features = featurize(wave, cfg, id);
  u.labels = label_frames(mask, cfg);
  u.source_id = std::move(id);
  return u;
}

std::vector<LabeledUtterance> synth_corpus(std::size_t n, const MixSpec& spec, const FrontendConfig& cfg,
                                           std::size_t first_index) {
  if (n == 0) throw ContractError("synth_corpus: need at least one utterance");
  auto waves = synth_waveforms(n, spec, cfg.sample_rate, first_index);
  std::vector<LabeledUtterance> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = label_utterance(waves[i].wave, waves[i].mask, cfg, waves[i].id);
  return out;
}

TrainDevSplit split_train_dev(std::size_t n, std::uint64_t seed, double dev_fraction) {
  if (!(dev_fraction >= 0.0 && dev_fraction < 1.0)) throw ContractError("split_train_dev: dev_fraction must be in [0,1)");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto rng = derived_rng(seed, n, 3);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_dev = static_cast<std::size_t>(std::lround(dev_fraction * static_cast<double>(n)));
  if (n >= 2 && dev_fraction > 0.0) n_dev = std::clamp<std::size_t>(n_dev, 1, n - 1);
  TrainDevSplit s;
  s.dev.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_dev));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_dev), order.end());
  std::sort(s.dev.begin(), s.dev.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

void write_mask(const std::filesystem::path& path, std::span<const std::uint8_t> mask) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write mask file " + path.string());
  out << "#mlnet-mask 1\n" << mask.size() << "\n";
  std::size_t i = 0;
  while (i < mask.size()) {
    std::size_t j = i;
    while (j < mask.size() && (mask[j] != 0) == (mask[i] != 0)) ++j;
    out << (mask[i] ? 1 : 0) << ' ' << (j - i) << '\n';
    i = j;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

SpeechMask read_mask(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mask file " + path.string());
  std::string magic;
  int version = 0;
  std::size_t total = 0;
  if (!(in >> magic >> version >> total) || magic != "#mlnet-mask" || version != 1) {
    throw IoError("bad mask header in " + path.string());
  }
  SpeechMask mask;
  mask.reserve(total);
  int value = 0;
  std::size_t run = 0;
  while (in >> value >> run) {
    if (value != 0 && value != 1) throw IoError("mask value must be 0 or 1 in " + path.string());
    mask.insert(mask.end(), run, static_cast<std::uint8_t>(value));
  }
  if (mask.size() != total) {
    throw IoError("mask run lengths sum to " + std::to_string(mask.size()) + ", header says " + std::to_string(total) +
                  " in " + path.string());
  }
  return mask;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "#mlnet-manifest 1\n";
  out << "id\twav\tmask\tsplit\tsnr_db\n";
  out.precision(17);
  for (const auto& e : entries) {
    out << e.id << '\t' << e.wav.generic_string() << '\t' << e.mask.generic_string() << '\t' << e.split << '\t'
        << e.snr_db << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "#mlnet-manifest 1") throw IoError("bad manifest header in " + path.string());
  if (!std::getline(in, line)) throw IoError("missing column header in " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    ManifestEntry e;
    std::string wav, mask, snr;
    if (!std::getline(row, e.id, '\t') || !std::getline(row, wav, '\t') || !std::getline(row, mask, '\t') ||
        !std::getline(row, e.split, '\t') || !std::getline(row, snr)) {
      throw IoError("malformed manifest row at " + path.string() + ":" + std::to_string(lineno));
    }
    e.wav = std::filesystem::path(wav).is_absolute() ? std::filesystem::path(wav) : base / wav;
    e.mask = std::filesystem::path(mask).is_absolute() ? std::filesystem::path(mask) : base / mask;
    try {
      e.snr_db = std::stod(snr);
    } catch (const std::exception&) {
      throw IoError("bad snr_db at " + path.string() + ":" + std::to_string(lineno));
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace mlnet
