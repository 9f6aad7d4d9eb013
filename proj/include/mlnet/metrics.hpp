// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mlnet {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

/// Predict speech iff prob >= theta.
ConfusionCounts confusion(std::span<const double> probs, std::span<const std::uint8_t> labels, double theta);

/// 2TP / (2TP + FP + FN); with an empty denominator, 1 if FP = FN = 0.
double f1(const ConfusionCounts& c);

/// 0.75 * P_miss + 0.25 * P_false_alarm. A rate whose class is absent counts as 0.
double dcf(const ConfusionCounts& c);

/// True when the recording lacks speech frames or non-speech frames.
bool dcf_degenerate(const ConfusionCounts& c);

struct ScoredRecording {
  std::string id;
  std::vector<double> probs;
  std::vector<std::uint8_t> labels;
};

struct RecordingScore {
  std::string id;
  ConfusionCounts counts;
  double f1 = 0.0;
  double dcf = 0.0;
  bool degenerate = false;
};

struct EvalReport {
  double theta = 0.5;
  std::vector<RecordingScore> recordings;
  double mean_f1 = 0.0;   // macro: mean of per-recording values
  double mean_dcf = 0.0;
  double micro_f1 = 0.0;  // pooled counts
  double micro_dcf = 0.0;
  std::size_t degenerate_count = 0;
};

/// Per-recording metrics, then their unweighted mean.
EvalReport evaluate(std::span<const ScoredRecording> recordings, double theta);

/// Tab-separated report, metrics as percentages. `micro` switches the summary row.
std::string report_tsv(const EvalReport& r, bool micro = false);
/// JSON report, metrics as fractions.
std::string report_json(const EvalReport& r, bool micro = false);

}  // namespace mlnet
