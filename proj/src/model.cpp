// SPDX-License-Identifier: Apache-2.0
#include "mlnet/model.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "mlnet/error.hpp"

namespace mlnet {

using ad::Trans;
using ad::Var;

// ---------------------------------------------------------------------------
// Config

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::BilstmBase: return "bilstm_base";
    case Variant::GatedUnit: return "gated_unit";
    case Variant::NonAttention: return "non_attention";
    case Variant::FullAttention: return "full_attention";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected bilstm_base, gated_unit, non_attention or full_attention)");
}

void ModelConfig::validate() const {
  if (receptive_fields.empty()) throw ConfigError("model: receptive_fields is empty");
  for (std::size_t i = 0; i < receptive_fields.size(); ++i) {
    if (receptive_fields[i] < 0) throw ConfigError("model: receptive fields must be >= 0");
    if (i && receptive_fields[i] <= receptive_fields[i - 1]) {
      throw ConfigError("model: receptive fields must be strictly increasing");
    }
  }
  if (n_mels < 1 || gated_dim < 1 || attn_hidden < 1 || lstm_hidden < 1 || lstm_layers < 1 || fc_hidden < 1) {
    throw ConfigError("model: every layer width must be >= 1");
  }
}

std::vector<int> ModelConfig::branch_fields() const {
  switch (variant) {
    case Variant::BilstmBase: return {};
    case Variant::GatedUnit: return {max_field()};
    case Variant::NonAttention:
    case Variant::FullAttention: break;
  }
  return receptive_fields;
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "receptive_fields=";
  for (std::size_t i = 0; i < receptive_fields.size(); ++i) os << (i ? "," : "") << receptive_fields[i];
  os << "\nn_mels=" << n_mels << "\ngated_dim=" << gated_dim << "\nattn_hidden=" << attn_hidden
     << "\nlstm_hidden=" << lstm_hidden << "\nlstm_layers=" << lstm_layers << "\nfc_hidden=" << fc_hidden
     << "\nvariant=" << variant_name(variant) << "\ndouble_sigmoid=" << (double_sigmoid ? 1 : 0) << "\n";
  return os.str();
}

namespace {

int parse_int(std::string_view key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("model config: bad integer for " + std::string(key) + ": '" + v + "'");
  }
}

}  // namespace

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model config: expected key=value, got '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "receptive_fields") {
      cfg.receptive_fields.clear();
      std::istringstream parts(val);
      std::string item;
      while (std::getline(parts, item, ',')) cfg.receptive_fields.push_back(parse_int(key, item));
    } else if (key == "n_mels") {
      cfg.n_mels = parse_int(key, val);
    } else if (key == "gated_dim") {
      cfg.gated_dim = parse_int(key, val);
    } else if (key == "attn_hidden") {
      cfg.attn_hidden = parse_int(key, val);
    } else if (key == "lstm_hidden") {
      cfg.lstm_hidden = parse_int(key, val);
    } else if (key == "lstm_layers") {
      cfg.lstm_layers = parse_int(key, val);
    } else if (key == "fc_hidden") {
      cfg.fc_hidden = parse_int(key, val);
    } else if (key == "variant") {
      cfg.variant = parse_variant(val);
    } else if (key == "double_sigmoid") {
      cfg.double_sigmoid = parse_int(key, val) != 0;
    } else {
      throw ConfigError("model config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Params

template <class Real>
std::size_t Params<Real>::total_elements() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

template <class Real>
const Tensor<Real>& Params<Real>::get(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return tensors[i];
  }
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

template <class Real>
Tensor<Real>& Params<Real>::get(std::string_view name) {
  return const_cast<Tensor<Real>&>(std::as_const(*this).get(name));
}

template <class Real>
bool Params<Real>::contains(std::string_view name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

template <class Real>
void Params<Real>::add(std::string name, Tensor<Real> t) {
  if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  names.push_back(std::move(name));
  tensors.push_back(std::move(t));
}

template <class Real>
Params<Real> Params<Real>::zeros_like() const {
  Params<Real> z;
  z.names = names;
  for (const auto& t : tensors) z.tensors.emplace_back(t.shape);
  return z;
}

template <class To, class From>
Params<To> convert_params(const Params<From>& p) {
  Params<To> out;
  out.names = p.names;
  for (const auto& t : p.tensors) {
    out.tensors.emplace_back(t.shape, std::vector<To>(t.data.begin(), t.data.end()));
  }
  return out;
}

namespace {

std::string gate_prefix(int r) { return "gate.r" + std::to_string(r) + "."; }
std::string lstm_prefix(int layer, bool backward) {
  return "lstm" + std::to_string(layer) + (backward ? ".bw." : ".fw.");
}

std::size_t window_width(const ModelConfig& cfg, int r) {
  return static_cast<std::size_t>(cfg.n_mels) * static_cast<std::size_t>(2 * r + 1);
}

}  // namespace

std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& cfg) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.gated_dim);
  const auto h = static_cast<std::size_t>(cfg.lstm_hidden);
  std::vector<std::pair<std::string, Shape>> out;
  if (cfg.variant == Variant::BilstmBase) {
    out.push_back({"base.W", {d, window_width(cfg, cfg.max_field())}});
    out.push_back({"base.b", {d}});
  }
  for (int r : cfg.branch_fields()) {
    const auto pre = gate_prefix(r);
    out.push_back({pre + "W_f", {d, window_width(cfg, r)}});
    out.push_back({pre + "b_f", {d}});
    out.push_back({pre + "W_g", {d, window_width(cfg, r)}});
    out.push_back({pre + "b_g", {d}});
  }
  if (cfg.variant == Variant::FullAttention) {
    const auto nb = cfg.num_branches();
    const auto hid = static_cast<std::size_t>(cfg.attn_hidden);
    out.push_back({"attn.W0", {hid, nb}});
    out.push_back({"attn.b0", {hid}});
    out.push_back({"attn.W1", {nb, hid}});
    out.push_back({"attn.b1", {nb}});
  }
  for (int l = 0; l < cfg.lstm_layers; ++l) {
    const std::size_t in = l == 0 ? d : 2 * h;
    for (bool bw : {false, true}) {
      const auto pre = lstm_prefix(l, bw);
      out.push_back({pre + "W_x", {4 * h, in}});
      out.push_back({pre + "W_h", {4 * h, h}});
      out.push_back({pre + "b", {4 * h}});
    }
  }
  const auto fc = static_cast<std::size_t>(cfg.fc_hidden);
  out.push_back({"head.W_fc", {fc, 2 * h}});
  out.push_back({"head.b_fc", {fc}});
  out.push_back({"head.w_out", {1, fc}});
  out.push_back({"head.b_out", {1}});
  return out;
}

MlnetParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> weight(-0.05f, 0.05f);
  MlnetParams p;
  for (auto& [name, shape] : param_layout(cfg)) {
    Tensor<float> t(shape);
    if (shape.size() == 1) {
      std::fill(t.data.begin(), t.data.end(), 0.1f);
    } else {
      for (auto& v : t.data) v = weight(rng);
    }
    p.add(name, std::move(t));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Binding

template <class Real>
Var<Real> BoundParams<Real>::operator[](std::string_view name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw ContractError("parameter '" + std::string(name) + "' is not bound");
  return it->second;
}

template <class Real>
BoundParams<Real> bind_params(ad::Graph<Real>& g, const Params<Real>& p) {
  BoundParams<Real> b;
  for (std::size_t i = 0; i < p.size(); ++i) {
    b.vars.emplace(p.names[i], g.leaf_view(p.tensors[i].shape, p.tensors[i].data));
    b.order.push_back(p.names[i]);
  }
  return b;
}

template <class Real>
Params<Real> collect_grads(const BoundParams<Real>& bound, const Params<Real>& like) {
  Params<Real> out = like.zeros_like();
  for (std::size_t i = 0; i < like.size(); ++i) {
    auto gr = bound[like.names[i]].grad();
    if (!gr.empty()) std::copy(gr.begin(), gr.end(), out.tensors[i].data.begin());
  }
  return out;
}

template <class Real>
Tensor<Real> context_windows(const FeatureSequence& fs, int r) {
  if (r < 0) throw ContractError("context_windows: negative receptive field");
  const std::size_t t_count = fs.num_frames;
  const std::size_t m = fs.num_mels;
  const std::size_t width = m * static_cast<std::size_t>(2 * r + 1);
  Tensor<Real> out({t_count, width});
  const auto last = static_cast<std::ptrdiff_t>(t_count) - 1;
  for (std::size_t t = 0; t < t_count; ++t) {
    Real* dst = out.data.data() + t * width;
    for (int o = -r; o <= r; ++o) {
      const auto src = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(t) + o, 0, last);
      const auto frame = fs.frame(static_cast<std::size_t>(src));
      std::copy(frame.begin(), frame.end(), dst + static_cast<std::size_t>(o + r) * m);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layers

namespace {

template <class Real>
Var<Real> affine(Var<Real> x, Var<Real> w, Var<Real> b) {
  return ad::matmul(x, w, Trans::No, Trans::Yes) + b;
}

// Shared two-layer net of the attention module, applied row-wise.
template <class Real>
Var<Real> attention_mlp(Var<Real> d, const BoundParams<Real>& p) {
  auto hidden = ad::leaky_relu(affine(d, p["attn.W0"], p["attn.b0"]), 0.01);
  return affine(hidden, p["attn.W1"], p["attn.b1"]);
}

// One direction of one LSTM layer over the whole sequence.
template <class Real>
Var<Real> lstm_direction(Var<Real> x, const BoundParams<Real>& p, const std::string& pre, std::size_t hidden,
                         bool reverse) {
  const std::size_t t_count = x.shape()[0];
  const std::size_t h = hidden;
  auto xproj = affine(x, p[pre + "W_x"], p[pre + "b"]);  // [T, 4H]
  auto wh_t = ad::transpose(p[pre + "W_h"]);              // [H, 4H]
  std::vector<Var<Real>> outs(t_count);
  std::optional<Var<Real>> hprev;
  std::optional<Var<Real>> cprev;
  for (std::size_t step = 0; step < t_count; ++step) {
    const std::size_t t = reverse ? t_count - 1 - step : step;
    auto pre_act = ad::slice(xproj, 0, t, t + 1);
    if (hprev) pre_act = pre_act + ad::matmul(*hprev, wh_t);
    auto hc = ad::lstm_cell(pre_act, cprev ? &*cprev : nullptr);
    auto hcur = ad::slice(hc, 1, 0, h);
    auto c = ad::slice(hc, 1, h, 2 * h);
    outs[t] = hcur;
    hprev = hcur;
    cprev = c;
  }
  return ad::concat<Real>(outs, 0);
}

}  // namespace

template <class Real>
Var<Real> gated_affine_forward(Var<Real> windows, const BoundParams<Real>& p, int r) {
  const auto pre = gate_prefix(r);
  auto wf = p[pre + "W_f"];
  if (windows.shape().size() != 2 || windows.shape()[1] != wf.shape()[1]) {
    throw ContractError("gated_affine_forward: windows " + shape_str(windows.shape()) + " do not match " + pre +
                        "W_f " + shape_str(wf.shape()));
  }
  auto f = ad::tanh(affine(windows, wf, p[pre + "b_f"]));
  auto gate = ad::sigmoid(affine(windows, p[pre + "W_g"], p[pre + "b_g"]));
  return f * gate;
}

template <class Real>
AttentionOutput<Real> attention_forward(Var<Real> q, const BoundParams<Real>& p, bool double_sigmoid,
                                        const Tensor<Real>* forced_weights) {
  if (q.shape().size() != 3) throw ContractError("attention_forward: q must be [T, branches, D], got " + shape_str(q.shape()));
  auto avg = ad::mean_axis(q, 2);  // [T, nb]
  auto mx = ad::max_axis(q, 2);    // [T, nb]
  AttentionOutput<Real> out;
  out.raw = ad::sigmoid(attention_mlp(avg, p) + attention_mlp(mx, p));
  auto s = double_sigmoid ? ad::sigmoid(out.raw) : out.raw;
  const std::size_t t_count = q.shape()[0];
  const std::size_t nb = q.shape()[1];
  out.weights = ad::div(s, ad::reshape(ad::sum_axis(s, 1), {t_count, 1}));
  Var<Real> w = out.weights;
  if (forced_weights) {
    const Shape expect{t_count, nb};
    if (forced_weights->shape != expect) {
      throw ContractError("attention_forward: forced weights " + shape_str(forced_weights->shape) + ", expected " +
                          shape_str(expect));
    }
    w = q.graph->constant(*forced_weights);
  }
  out.fused = ad::sum_axis(q * ad::reshape(w, {t_count, nb, 1}), 1);
  return out;
}

template <class Real>
Var<Real> non_attention_forward(Var<Real> q) {
  if (q.shape().size() != 3) throw ContractError("non_attention_forward: q must be [T, branches, D]");
  return ad::mean_axis(q, 1);
}

template <class Real>
Var<Real> classifier_forward(Var<Real> seq, const BoundParams<Real>& p, const ModelConfig& cfg) {
  if (seq.shape().size() != 2 || seq.shape()[0] == 0) {
    throw ContractError("classifier_forward: need a non-empty [T, D] sequence, got " + shape_str(seq.shape()));
  }
  const auto h = static_cast<std::size_t>(cfg.lstm_hidden);
  Var<Real> x = seq;
  for (int l = 0; l < cfg.lstm_layers; ++l) {
    auto fw = lstm_direction(x, p, lstm_prefix(l, false), h, false);
    auto bw = lstm_direction(x, p, lstm_prefix(l, true), h, true);
    const Var<Real> both[] = {fw, bw};
    x = ad::concat<Real>(both, 1);
  }
  auto hidden = ad::leaky_relu(affine(x, p["head.W_fc"], p["head.b_fc"]), 0.01);
  auto logit = affine(hidden, p["head.w_out"], p["head.b_out"]);  // [T, 1]
  return ad::reshape(ad::sigmoid(logit), {seq.shape()[0]});
}

template <class Real>
ForwardResult<Real> mlnet_forward(ad::Graph<Real>& g, const FeatureSequence& fs, const ModelConfig& cfg,
                                  const BoundParams<Real>& p, const ForwardOptions& opts) {
  cfg.validate();
  if (fs.num_frames == 0) throw ContractError("mlnet_forward: empty feature sequence");
  if (fs.num_mels != static_cast<std::size_t>(cfg.n_mels)) {
    throw ContractError("mlnet_forward: features have " + std::to_string(fs.num_mels) + " mels, model expects " +
                        std::to_string(cfg.n_mels));
  }
  const std::size_t t_count = fs.num_frames;
  const auto d = static_cast<std::size_t>(cfg.gated_dim);
  ForwardResult<Real> res;
  Var<Real> fused;

  if (cfg.variant == Variant::BilstmBase) {
    auto x = g.constant(context_windows<Real>(fs, cfg.max_field()));
    fused = ad::tanh(affine(x, p["base.W"], p["base.b"]));
  } else {
    std::vector<Var<Real>> branches;
    for (int r : cfg.branch_fields()) {
      auto x = g.constant(context_windows<Real>(fs, r));
      branches.push_back(ad::reshape(gated_affine_forward(x, p, r), {t_count, 1, d}));
    }
    auto q = ad::concat<Real>(branches, 1);  // [T, nb, D]
    switch (cfg.variant) {
      case Variant::GatedUnit:
        fused = ad::reshape(q, {t_count, d});
        break;
      case Variant::NonAttention:
        fused = non_attention_forward(q);
        break;
      case Variant::FullAttention: {
        std::optional<Tensor<Real>> uniform;
        if (opts.force_uniform_attention) {
          uniform.emplace(Shape{t_count, branches.size()}, Real(1) / static_cast<Real>(branches.size()));
        }
        auto att = attention_forward(q, p, cfg.double_sigmoid, uniform ? &*uniform : nullptr);
        fused = att.fused;
        res.attention = att;
        break;
      }
      case Variant::BilstmBase:
        break;
    }
  }
  res.probs = classifier_forward(fused, p, cfg);
  return res;
}

template <class Real>
AttentionTrace make_trace(const AttentionOutput<Real>& att) {
  AttentionTrace tr;
  tr.num_frames = att.raw.shape()[0];
  tr.num_branches = att.raw.shape()[1];
  auto a = att.raw.value();
  auto w = att.weights.value();
  tr.raw.assign(a.begin(), a.end());
  tr.weights.assign(w.begin(), w.end());
  return tr;
}

template <class Real>
Prediction predict(const FeatureSequence& fs, const ModelConfig& cfg, const Params<Real>& params,
                   const ForwardOptions& opts) {
  ad::Graph<Real> g(false);
  const auto bound = bind_params(g, params);
  const auto res = mlnet_forward(g, fs, cfg, bound, opts);
  Prediction out;
  auto pv = res.probs.value();
  out.probs.assign(pv.begin(), pv.end());
  if (res.attention) out.trace = make_trace(*res.attention);
  return out;
}

// ---------------------------------------------------------------------------

template struct Params<float>;
template struct Params<double>;
template Params<double> convert_params<double, float>(const Params<float>&);
template Params<float> convert_params<float, double>(const Params<double>&);
template Params<float> convert_params<float, float>(const Params<float>&);
template Params<double> convert_params<double, double>(const Params<double>&);

#define MLNET_INSTANTIATE_MODEL(R)                                                                              \
  template struct BoundParams<R>;                                                                               \
  template BoundParams<R> bind_params<R>(ad::Graph<R>&, const Params<R>&);                                      \
  template Params<R> collect_grads<R>(const BoundParams<R>&, const Params<R>&);                                 \
  template Tensor<R> context_windows<R>(const FeatureSequence&, int);                                           \
  template Var<R> gated_affine_forward<R>(Var<R>, const BoundParams<R>&, int);                                  \
  template AttentionOutput<R> attention_forward<R>(Var<R>, const BoundParams<R>&, bool, const Tensor<R>*);      \
  template Var<R> non_attention_forward<R>(Var<R>);                                                             \
  template Var<R> classifier_forward<R>(Var<R>, const BoundParams<R>&, const ModelConfig&);                     \
  template ForwardResult<R> mlnet_forward<R>(ad::Graph<R>&, const FeatureSequence&, const ModelConfig&,         \
                                             const BoundParams<R>&, const ForwardOptions&);                     \
  template AttentionTrace make_trace<R>(const AttentionOutput<R>&);                                             \
  template Prediction predict<R>(const FeatureSequence&, const ModelConfig&, const Params<R>&, const ForwardOptions&);

MLNET_INSTANTIATE_MODEL(float)
MLNET_INSTANTIATE_MODEL(double)

#undef MLNET_INSTANTIATE_MODEL

}  // namespace mlnet
