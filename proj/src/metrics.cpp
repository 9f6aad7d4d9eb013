// SPDX-License-Identifier: Apache-2.0
#include "mlnet/metrics.hpp"

#include <json.hpp>

#include <cstdio>
#include <sstream>

#include "mlnet/error.hpp"

namespace mlnet {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

ConfusionCounts confusion(std::span<const double> probs, std::span<const std::uint8_t> labels, double theta) {
  if (probs.size() != labels.size()) {
    throw ContractError("confusion: " + std::to_string(probs.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
  }
  if (!(theta >= 0.0 && theta <= 1.0)) throw ContractError("confusion: theta must be in [0, 1]");
  ConfusionCounts c;
  for (std::size_t t = 0; t < probs.size(); ++t) {
    const bool pred = probs[t] >= theta;
    const bool truth = labels[t] != 0;
    if (pred && truth) {
      ++c.tp;
    } else if (pred) {
      ++c.fp;
    } else if (truth) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

double f1(const ConfusionCounts& c) {
  const auto denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return (c.fp == 0 && c.fn == 0) ? 1.0 : 0.0;
  return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

double dcf(const ConfusionCounts& c) {
  const double p_miss = (c.tp + c.fn) ? static_cast<double>(c.fn) / static_cast<double>(c.tp + c.fn) : 0.0;
  const double p_fa = (c.fp + c.tn) ? static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn) : 0.0;
  return 0.75 * p_miss + 0.25 * p_fa;
}

bool dcf_degenerate(const ConfusionCounts& c) { return c.tp + c.fn == 0 || c.fp + c.tn == 0; }

EvalReport evaluate(std::span<const ScoredRecording> recordings, double theta) {
  if (recordings.empty()) throw ContractError("evaluate: no recordings");
  EvalReport r;
  r.theta = theta;
  ConfusionCounts pooled;
  for (const auto& rec : recordings) {
    RecordingScore s;
    s.id = rec.id;
    s.counts = confusion(rec.probs, rec.labels, theta);
    s.f1 = f1(s.counts);
    s.dcf = dcf(s.counts);
    s.degenerate = dcf_degenerate(s.counts);
    if (s.degenerate) ++r.degenerate_count;
    pooled += s.counts;
    r.mean_f1 += s.f1;
    r.mean_dcf += s.dcf;
    r.recordings.push_back(std::move(s));
  }
  r.mean_f1 /= static_cast<double>(recordings.size());
  r.mean_dcf /= static_cast<double>(recordings.size());
  r.micro_f1 = f1(pooled);
  r.micro_dcf = dcf(pooled);
  return r;
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

std::string report_tsv(const EvalReport& r, bool micro) {
  std::ostringstream os;
  os << "id\tf1\tdcf\ttp\tfp\tfn\ttn\tdegenerate\n";
  for (const auto& s : r.recordings) {
    os << s.id << '\t' << pct(s.f1) << '\t' << pct(s.dcf) << '\t' << s.counts.tp << '\t' << s.counts.fp << '\t'
       << s.counts.fn << '\t' << s.counts.tn << '\t' << (s.degenerate ? 1 : 0) << '\n';
  }
  os << (micro ? "MICRO" : "MEAN") << '\t' << pct(micro ? r.micro_f1 : r.mean_f1) << '\t'
     << pct(micro ? r.micro_dcf : r.mean_dcf) << "\t\t\t\t\t" << r.degenerate_count << '\n';
  return os.str();
}

std::string report_json(const EvalReport& r, bool micro) {
  nlohmann::json j;
  j["format"] = "mlnet-eval";
  j["version"] = 1;
  j["theta"] = r.theta;
  j["averaging"] = micro ? "micro" : "macro";
  auto& rows = j["recordings"] = nlohmann::json::array();
  for (const auto& s : r.recordings) {
    rows.push_back({{"id", s.id},
                    {"f1", s.f1},
                    {"dcf", s.dcf},
                    {"tp", s.counts.tp},
                    {"fp", s.counts.fp},
                    {"fn", s.counts.fn},
                    {"tn", s.counts.tn},
                    {"degenerate", s.degenerate}});
  }
  j["summary"] = {{"f1", micro ? r.micro_f1 : r.mean_f1},
                  {"dcf", micro ? r.micro_dcf : r.mean_dcf},
                  {"macro_f1", r.mean_f1},
                  {"macro_dcf", r.mean_dcf},
                  {"micro_f1", r.micro_f1},
                  {"micro_dcf", r.micro_dcf},
                  {"recordings", r.recordings.size()},
                  {"degenerate", r.degenerate_count}};
  return j.dump(2) + "\n";
}

}  // namespace mlnet
