// SPDX-License-Identifier: Apache-2.0
#include "mlnet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include "mlnet/error.hpp"
#include "mlnet/feature_io.hpp"
#include "mlnet/metrics.hpp"
#include "mlnet/model.hpp"
#include "mlnet/training.hpp"
#include "mlnet/wav.hpp"

namespace mlnet::cli {
namespace fs = std::filesystem;

namespace {

/// Bad input from the operator: missing files, unusable arguments.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw UsageError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

// ---------------------------------------------------------------------------
// Option groups shared by several subcommands

void add_frontend_options(CLI::App* app, FrontendConfig& f) {
  app->add_option("--sample-rate", f.sample_rate, "Expected sample rate (Hz)");
  app->add_option("--n-mels", f.n_mels, "Mel bands");
  app->add_option("--frame-ms", f.frame_len_ms, "Frame length (ms)");
  app->add_option("--hop-ms", f.hop_ms, "Frame shift (ms)");
  app->add_option("--fft-size", f.fft_size, "FFT size (samples)");
  app->add_option("--preemphasis", f.preemphasis, "Pre-emphasis coefficient");
  app->add_option("--log-floor", f.log_floor, "Energy floor before the log");
  app->add_option("--fmin", f.mel_fmin, "Lowest mel filter edge (Hz)");
  app->add_option("--fmax", f.mel_fmax, "Highest mel filter edge (Hz, 0 = Nyquist)");
  app->add_flag("--normalize", f.normalize, "Per-utterance mean/variance normalization");
}

struct ModelArgs {
  ModelConfig cfg;
  std::string variant = "full_attention";
  bool single_sigmoid = false;

  ModelConfig resolve(int n_mels) const {
    ModelConfig c = cfg;
    c.variant = parse_variant(variant);
    c.double_sigmoid = !single_sigmoid;
    c.n_mels = n_mels;
    c.validate();
    return c;
  }
};

void add_model_options(CLI::App* app, ModelArgs& m) {
  app->add_option("--variant", m.variant, "bilstm_base | gated_unit | non_attention | full_attention");
  app->add_option("--receptive-fields", m.cfg.receptive_fields, "Branch half-widths (frames)")->delimiter(',');
  app->add_option("--gated-dim", m.cfg.gated_dim, "Gated unit output width");
  app->add_option("--attn-hidden", m.cfg.attn_hidden, "Attention hidden width");
  app->add_option("--lstm-hidden", m.cfg.lstm_hidden, "LSTM units per direction");
  app->add_option("--lstm-layers", m.cfg.lstm_layers, "Stacked Bi-LSTM layers");
  app->add_option("--fc-hidden", m.cfg.fc_hidden, "Classifier hidden width");
  app->add_flag("--single-sigmoid", m.single_sigmoid, "Normalize a_t directly instead of sigmoid(a_t)");
}

void add_train_options(CLI::App* app, TrainConfig& t) {
  app->add_option("--epochs", t.epochs, "Training epochs")->check(CLI::PositiveNumber);
  app->add_option("--batch-size", t.batch_size, "Utterances per Adam step")->check(CLI::PositiveNumber);
  app->add_option("--lr", t.lr, "Adam learning rate");
  app->add_option("--beta1", t.beta1, "Adam beta1");
  app->add_option("--beta2", t.beta2, "Adam beta2");
  app->add_option("--eps", t.eps, "Adam epsilon");
  app->add_option("--clip-lo", t.clip_lo, "Per-element gradient clamp, lower");
  app->add_option("--clip-hi", t.clip_hi, "Per-element gradient clamp, upper");
  app->add_option("--attention-weight", t.attention_weight, "Weight of the attention loss");
  app->add_option("--theta", t.theta, "Decision threshold for dev metrics");
  app->add_option("--seed", t.seed, "Random seed");
}

std::string describe(const TrainConfig& t) {
  std::ostringstream os;
  os << "lr=" << t.lr << " batch_size=" << t.batch_size << " epochs=" << t.epochs << " clip=[" << t.clip_lo << ","
     << t.clip_hi << "] beta1=" << t.beta1 << " beta2=" << t.beta2 << " eps=" << t.eps
     << " attention_weight=" << t.attention_weight << " theta=" << t.theta << " seed=" << t.seed;
  return os.str();
}

std::string one_line(std::string text) {
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

// ---------------------------------------------------------------------------
// mix

struct MixArgs {
  fs::path out;
  std::size_t n = 0;
  std::size_t n_eval = 0;
  MixSpec spec;
  double dev_fraction = 0.05;
  bool force = false;
  int sample_rate = 16000;
  fs::path clean;
  fs::path clean_mask;
  fs::path noise;
  std::optional<double> snr;
  std::string split = "eval";
};

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw UsageError("output directory " + dir.string() + " is not empty (use --force)");
  }
  fs::create_directories(dir / "wav");
  fs::create_directories(dir / "mask");
}

ManifestEntry write_utterance(const fs::path& dir, const std::string& id, const Waveform& w, const SpeechMask& mask,
                              const std::string& split, double snr) {
  ManifestEntry e;
  e.id = id;
  e.wav = fs::path("wav") / (id + ".wav");
  e.mask = fs::path("mask") / (id + ".mask");
  e.split = split;
  e.snr_db = snr;
  write_wav(dir / e.wav, w);
  write_mask(dir / e.mask, mask);
  return e;
}

int cmd_mix(const MixArgs& a, std::ostream& out) {
  a.spec.validate();
  std::vector<ManifestEntry> entries;
  if (!a.clean.empty()) {
    if (a.noise.empty()) throw UsageError("--clean needs --noise");
    require_file(a.clean, "clean WAV");
    require_file(a.noise, "noise WAV");
    prepare_out_dir(a.out, a.force);
    const Waveform clean = read_wav(a.clean);
    const Waveform noise = read_wav(a.noise);
    SpeechMask mask;
    if (!a.clean_mask.empty()) mask = read_mask(a.clean_mask);
    const auto padded = pad_silence(clean, a.spec, mask);
    double snr = 0.0;
    if (a.snr) {
      snr = *a.snr;
    } else {
      std::mt19937_64 rng(a.spec.seed);
      snr = std::uniform_real_distribution<double>(a.spec.snr_db_min, a.spec.snr_db_max)(rng);
    }
    const auto mixed = mix_noise(padded.wave, noise, snr, padded.mask);
    entries.push_back(write_utterance(a.out, a.clean.stem().string(), mixed.mixed, padded.mask, a.split, snr));
  } else {
    if (a.n == 0) throw UsageError("--n must be >= 1");
    prepare_out_dir(a.out, a.force);
    const auto waves = synth_waveforms(a.n + a.n_eval, a.spec, a.sample_rate);
    const auto split = split_train_dev(a.n, a.spec.seed, a.dev_fraction);
    std::vector<std::string> tags(waves.size(), "eval");
    for (auto i : split.train) tags[i] = "train";
    for (auto i : split.dev) tags[i] = "dev";
    for (std::size_t i = 0; i < waves.size(); ++i) {
      entries.push_back(write_utterance(a.out, waves[i].id, waves[i].wave, waves[i].mask, tags[i], waves[i].snr_db));
    }
  }
  write_manifest(a.out / "manifest.tsv", entries);
  double mean_snr = 0.0;
  for (const auto& e : entries) mean_snr += e.snr_db;
  mean_snr /= static_cast<double>(entries.size());
  out << "wrote " << entries.size() << " utterances to " << a.out.string() << " (mean SNR " << mean_snr << " dB)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// featurize

struct FeaturizeArgs {
  fs::path wav;
  fs::path out;
  FrontendConfig frontend;
};

Waveform read_input_wav(const fs::path& p) {
  require_file(p, "WAV");
  try {
    return read_wav(p);
  } catch (const IoError& e) {
    throw UsageError(e.what());
  }
}

int cmd_featurize(const FeaturizeArgs& a, std::ostream& out) {
  const Waveform w = read_input_wav(a.wav);
  FrontendConfig f = a.frontend;
  f.validate();
  const auto feats = featurize(w, f, a.wav.stem().string());
  write_feature_dump(a.out, feats);
  out << "wrote " << feats.num_frames << "x" << feats.num_mels << " features to " << a.out.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train / ablate

std::vector<ManifestEntry> read_input_manifest(const fs::path& p) {
  require_file(p, "manifest");
  try {
    return read_manifest(p);
  } catch (const IoError& e) {
    throw UsageError(e.what());
  }
}

struct TrainArgs {
  fs::path manifest;
  fs::path out;
  FrontendConfig frontend;
  ModelArgs model;
  TrainConfig train;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const auto entries = read_input_manifest(a.manifest);
  FrontendConfig f = a.frontend;
  f.validate();
  const ModelConfig mc = a.model.resolve(f.n_mels);
  a.train.validate();
  out << "# train " << describe(a.train) << "\n# model " << one_line(mc.to_text()) << "\n";
  const auto train_set = load_split(entries, "train", f);
  const auto dev_set = load_split(entries, "dev", f);
  if (train_set.empty()) throw UsageError("manifest has no 'train' utterances");
  out << "# " << train_set.size() << " train / " << dev_set.size() << " dev utterances\n";
  out << "epoch\ttrain_loss\tdev_f1\tdev_dcf\n";
  TrainOptions opts;
  opts.out_dir = a.out;
  opts.log = &out;
  const auto res = train(train_set, dev_set, a.train, mc, opts);
  out << "# best epoch " << res.best_epoch << " -> " << (a.out / "best.mlnt").string() << "\n";
  return kExitOk;
}

struct AblateArgs {
  fs::path manifest;
  fs::path out;
  fs::path json;
  FrontendConfig frontend;
  ModelArgs model;
  TrainConfig train;
  std::string units = "percent";
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const auto entries = read_input_manifest(a.manifest);
  FrontendConfig f = a.frontend;
  f.validate();
  a.train.validate();
  if (a.units != "percent" && a.units != "fraction") throw UsageError("--units must be percent or fraction");
  const auto train_set = load_split(entries, "train", f);
  const auto dev_set = load_split(entries, "dev", f);
  const auto eval_set = load_split(entries, "eval", f);
  if (train_set.empty()) throw UsageError("manifest has no 'train' utterances");
  const double unit = a.units == "percent" ? 100.0 : 1.0;

  nlohmann::json rows = nlohmann::json::array();
  out << "variant\tdev_f1\teval_f1\tdev_dcf\teval_dcf\n";
  for (Variant v : kAllVariants) {
    ModelArgs m = a.model;
    m.variant = std::string(variant_name(v));
    const ModelConfig mc = m.resolve(f.n_mels);
    TrainOptions opts;
    if (!a.out.empty()) opts.out_dir = a.out / variant_name(v);
    const auto res = train(train_set, dev_set, a.train, mc, opts);
    auto score = [&](std::span<const LabeledUtterance> set) -> std::pair<double, double> {
      if (set.empty()) return {std::nan(""), std::nan("")};
      const auto r = evaluate_model(set, mc, res.best_params, a.train.theta);
      return {r.mean_f1, r.mean_dcf};
    };
    const auto [dev_f1, dev_dcf] = score(dev_set);
    const auto [eval_f1, eval_dcf] = score(eval_set);
    char line[256];
    std::snprintf(line, sizeof line, "%s\t%.2f\t%.2f\t%.2f\t%.2f\n", std::string(variant_name(v)).c_str(),
                  unit * dev_f1, unit * eval_f1, unit * dev_dcf, unit * eval_dcf);
    out << line << std::flush;
    auto num = [](double x) { return std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x); };
    rows.push_back({{"variant", variant_name(v)},
                    {"dev_f1", num(dev_f1)},
                    {"eval_f1", num(eval_f1)},
                    {"dev_dcf", num(dev_dcf)},
                    {"eval_dcf", num(eval_dcf)},
                    {"best_epoch", res.best_epoch}});
  }
  if (!a.json.empty()) {
    std::ofstream js(a.json);
    if (!js) throw IoError("cannot write " + a.json.string());
    js << nlohmann::json{{"format", "mlnet-ablation"}, {"version", 1}, {"seed", a.train.seed}, {"rows", rows}}.dump(2)
       << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval / predict

Checkpoint read_input_checkpoint(const fs::path& p, const fs::path& model_config) {
  require_file(p, "checkpoint");
  try {
    if (!model_config.empty()) {
      require_file(model_config, "model config");
      return load_checkpoint(p, ModelConfig::from_text(read_text(model_config)));
    }
    return load_checkpoint(p);
  } catch (const IoError& e) {
    throw UsageError(e.what());
  }
}

struct EvalArgs {
  fs::path checkpoint;
  fs::path manifest;
  fs::path model_config;
  fs::path json;
  fs::path tsv;
  std::string split = "eval";
  double theta = 0.5;
  bool micro = false;
  bool oracle_labels = false;
  FrontendConfig frontend;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (!(a.theta >= 0.0 && a.theta <= 1.0)) throw UsageError("--theta must be in [0, 1]");
  const auto ck = read_input_checkpoint(a.checkpoint, a.model_config);
  const auto entries = read_input_manifest(a.manifest);
  FrontendConfig f = a.frontend;
  f.n_mels = ck.config.n_mels;
  f.validate();
  const auto corpus = load_split(entries, a.split, f);
  if (corpus.empty()) throw UsageError("manifest has no utterances in split '" + a.split + "'");
  std::vector<ScoredRecording> scored;
  if (a.oracle_labels) {
    for (const auto& u : corpus) {
      scored.push_back({u.source_id, std::vector<double>(u.labels.begin(), u.labels.end()), u.labels});
    }
  } else {
    scored = score_corpus(corpus, ck.config, ck.params);
  }
  const auto report = evaluate(scored, a.theta);
  const auto tsv = report_tsv(report, a.micro);
  out << tsv;
  if (!a.tsv.empty()) {
    std::ofstream o(a.tsv);
    if (!(o << tsv)) throw IoError("cannot write " + a.tsv.string());
  }
  if (!a.json.empty()) {
    std::ofstream o(a.json);
    if (!(o << report_json(report, a.micro))) throw IoError("cannot write " + a.json.string());
  }
  return kExitOk;
}

struct PredictArgs {
  fs::path wav;
  fs::path checkpoint;
  fs::path out;
  double theta = 0.5;
  bool dump_attention = false;
  FrontendConfig frontend;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  if (!(a.theta >= 0.0 && a.theta <= 1.0)) throw UsageError("--theta must be in [0, 1]");
  const auto ck = read_input_checkpoint(a.checkpoint, {});
  const Waveform w = read_input_wav(a.wav);
  FrontendConfig f = a.frontend;
  f.n_mels = ck.config.n_mels;
  f.validate();
  const auto feats = featurize(w, f, a.wav.stem().string());
  std::ofstream file;
  std::ostream* dst = &out;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw IoError("cannot write " + a.out.string());
    dst = &file;
  }
  if (feats.num_frames == 0) return kExitOk;
  const auto pred = predict(feats, ck.config, ck.params);
  const bool with_att = a.dump_attention && pred.trace.num_frames == feats.num_frames;
  if (a.dump_attention && !with_att) throw UsageError("--dump-attention needs a full_attention checkpoint");
  char buf[64];
  for (std::size_t t = 0; t < feats.num_frames; ++t) {
    std::snprintf(buf, sizeof buf, "%.3f\t%.6f\t%d", feats.frame_times[t], pred.probs[t], pred.probs[t] >= a.theta ? 1 : 0);
    *dst << buf;
    if (with_att) {
      for (std::size_t i = 0; i < pred.trace.num_branches; ++i) {
        std::snprintf(buf, sizeof buf, "\t%.8f", pred.trace.weight(t, i));
        *dst << buf;
      }
    }
    *dst << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// --config handling: key=value lines become --key=value tokens placed before
// the explicit flags, which therefore win.

std::vector<std::string> inject_config(const CLI::App& app, std::vector<std::string> args) {
  if (args.empty()) return args;
  const CLI::App* sub = nullptr;
  std::size_t sub_pos = 0;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (!args[i].empty() && args[i][0] != '-') {
      sub = app.get_subcommand_no_throw(args[i]);
      sub_pos = i;
      break;
    }
  }
  if (!sub) return args;
  fs::path config;
  std::vector<std::string> rest;
  for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config.empty()) return args;
  std::istringstream in(read_text(config));
  std::vector<std::string> injected;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line.erase(0, line.find_first_not_of(" \t\r"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config " + config.string() + ": expected key=value, got '" + line + "'");
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    std::replace(key.begin(), key.end(), '_', '-');
    std::string value = line.substr(eq + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    if (key == "config" || !sub->get_option_no_throw("--" + key)) {
      throw ConfigError("config " + config.string() + ": unknown key '" + key + "' for '" + sub->get_name() + "'");
    }
    injected.push_back("--" + key + "=" + value);
  }
  std::vector<std::string> merged(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(sub_pos + 1));
  merged.insert(merged.end(), injected.begin(), injected.end());
  merged.insert(merged.end(), rest.begin(), rest.end());
  return merged;
}

}  // namespace

std::vector<LabeledUtterance> load_split(std::span<const ManifestEntry> entries, std::string_view split,
                                         const FrontendConfig& cfg) {
  std::vector<const ManifestEntry*> picked;
  for (const auto& e : entries) {
    if (split == "all" || e.split == split) picked.push_back(&e);
  }
  std::vector<LabeledUtterance> out(picked.size());
  // Reading is serial; featurization parallelizes inside.
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const auto& e = *picked[i];
    const Waveform w = read_wav(e.wav);
    const SpeechMask mask = read_mask(e.mask);
    out[i] = label_utterance(w, mask, cfg, e.id);
  }
  return out;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MLNET voice activity detection: corpus synthesis, training, evaluation"};
  app.name("mlnet");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  MixArgs mix;
  auto* mix_cmd = app.add_subcommand("mix", "Synthesize a labeled noisy corpus (or mix one clean/noise pair)");
  mix_cmd->add_option("--out", mix.out, "Output directory")->required();
  mix_cmd->add_option("--n", mix.n, "Train+dev utterances to synthesize")->check(CLI::PositiveNumber);
  mix_cmd->add_option("--n-eval", mix.n_eval, "Extra held-out 'eval' utterances");
  mix_cmd->add_option("--seed", mix.spec.seed, "Random seed");
  mix_cmd->add_option("--snr-min", mix.spec.snr_db_min, "Lowest mixing SNR (dB)");
  mix_cmd->add_option("--snr-max", mix.spec.snr_db_max, "Highest mixing SNR (dB)");
  mix_cmd->add_option("--pad", mix.spec.silence_pad_s, "Silence added before and after speech (s)");
  mix_cmd->add_option("--dev-fraction", mix.dev_fraction, "Share of the --n utterances tagged 'dev'");
  mix_cmd->add_option("--sample-rate", mix.sample_rate, "Sample rate of synthesized audio (Hz)");
  mix_cmd->add_option("--clean", mix.clean, "Clean speech WAV to mix instead of synthesizing");
  mix_cmd->add_option("--clean-mask", mix.clean_mask, "Per-sample speech mask for --clean (default: all speech)");
  mix_cmd->add_option("--noise", mix.noise, "Noise WAV for --clean");
  mix_cmd->add_option("--snr", mix.snr, "Fixed SNR for --clean (default: drawn from [snr-min, snr-max])");
  mix_cmd->add_option("--split", mix.split, "Split tag for --clean");
  mix_cmd->add_flag("--force", mix.force, "Allow a non-empty output directory");
  mix_cmd->add_option("--config", "key=value file merged under these flags");

  FeaturizeArgs feat;
  auto* feat_cmd = app.add_subcommand("featurize", "Write the log-mel feature dump (MLFB) of a WAV file");
  feat_cmd->add_option("--wav", feat.wav, "Input WAV")->required();
  feat_cmd->add_option("--out", feat.out, "Output .mlfb file")->required();
  add_frontend_options(feat_cmd, feat.frontend);
  feat_cmd->add_option("--config", "key=value file merged under these flags");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model on the 'train' split, selecting on 'dev'");
  train_cmd->add_option("--manifest", tr.manifest, "Corpus manifest")->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint/log directory")->required();
  add_model_options(train_cmd, tr.model);
  add_train_options(train_cmd, tr.train);
  add_frontend_options(train_cmd, tr.frontend);
  train_cmd->add_option("--config", "key=value file merged under these flags");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a manifest split (F1, DCF)");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Model checkpoint (.mlnt)")->required();
  eval_cmd->add_option("--manifest", ev.manifest, "Corpus manifest")->required();
  eval_cmd->add_option("--split", ev.split, "train | dev | eval | all");
  eval_cmd->add_option("--theta", ev.theta, "Decision threshold");
  eval_cmd->add_option("--json", ev.json, "Write the JSON report here");
  eval_cmd->add_option("--tsv", ev.tsv, "Write the TSV report here");
  eval_cmd->add_option("--model-config", ev.model_config, "Require the checkpoint to match this key=value model config");
  eval_cmd->add_flag("--micro", ev.micro, "Summarize with pooled counts instead of per-recording means");
  eval_cmd->add_flag("--oracle-labels", ev.oracle_labels, "Score the reference labels themselves (pipeline check)");
  add_frontend_options(eval_cmd, ev.frontend);
  eval_cmd->add_option("--config", "key=value file merged under these flags");

  PredictArgs pr;
  auto* pred_cmd = app.add_subcommand("predict", "Per-frame speech probabilities for one WAV");
  pred_cmd->add_option("--wav", pr.wav, "Input WAV")->required();
  pred_cmd->add_option("--checkpoint", pr.checkpoint, "Model checkpoint (.mlnt)")->required();
  pred_cmd->add_option("--out", pr.out, "Output TSV (default: stdout)");
  pred_cmd->add_option("--theta", pr.theta, "Decision threshold");
  pred_cmd->add_flag("--dump-attention", pr.dump_attention, "Append the branch weights p_t of each frame");
  add_frontend_options(pred_cmd, pr.frontend);
  pred_cmd->add_option("--config", "key=value file merged under these flags");

  AblateArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and score all four model variants");
  ablate_cmd->add_option("--manifest", ab.manifest, "Corpus manifest")->required();
  ablate_cmd->add_option("--out", ab.out, "Checkpoint directory (one subdirectory per variant)");
  ablate_cmd->add_option("--json", ab.json, "Write the comparison as JSON");
  ablate_cmd->add_option("--units", ab.units, "percent | fraction");
  add_model_options(ablate_cmd, ab.model);
  add_train_options(ablate_cmd, ab.train);
  add_frontend_options(ablate_cmd, ab.frontend);
  ablate_cmd->add_option("--config", "key=value file merged under these flags");

  try {
    auto args = inject_config(app, raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const std::exception& e) {
    err << "mlnet: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*mix_cmd) return cmd_mix(mix, out);
    if (*feat_cmd) return cmd_featurize(feat, out);
    if (*train_cmd) return cmd_train(tr, out);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*pred_cmd) return cmd_predict(pr, out);
    if (*ablate_cmd) return cmd_ablate(ab, out);
  } catch (const UsageError& e) {
    err << "mlnet: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "mlnet: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractError& e) {
    err << "mlnet: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "mlnet: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace mlnet::cli
