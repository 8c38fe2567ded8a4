#include "fusecap/fusion.hpp"

#include "fusecap/errors.hpp"
#include "fusecap/lstm.hpp"
#include "fusecap/ops.hpp"

namespace fusecap {
namespace {

const char* scheme_prefix(FusionKind kind) {
  switch (kind) {
    case FusionKind::Simple: return "fusion.sf.";
    case FusionKind::Cold: return "fusion.cf.";
    case FusionKind::Hierarchical: return "fusion.hf.";
    default: throw ConfigError("fusion kind 'none' has no fusion parameters");
  }
}

void check_inputs(const Tensor& h_lstm, const Tensor& h_mlm, const FusionParams& p) {
  const auto& c = p.config();
  if (h_lstm.cols() != c.lstm_dim || h_mlm.cols() != c.mlm_dim || h_lstm.rank() != h_mlm.rank() ||
      h_lstm.rows() != h_mlm.rows()) {
    throw ConfigError("fusion inputs " + shape_string(h_lstm.shape()) + " and " +
                      shape_string(h_mlm.shape()) + " do not match configured dims (" +
                      std::to_string(c.lstm_dim) + ", " + std::to_string(c.mlm_dim) + ")");
  }
}

Tensor gated_affine(const Tensor& x, const FusionParams& p, const char* w, const char* b) {
  return nn::affine(x, p.get(w).tensor, p.get(b).tensor);
}

Tensor vocab_head(const Tensor& feature, const FusionParams& p, bool training, Rng* rng) {
  Tensor h = feature;
  if (training && p.config().dropout > 0.0) {
    if (!rng) throw ConfigError("training-mode dropout needs an Rng");
    h = nn::dropout(feature, p.config().dropout, true, *rng);
  }
  return gated_affine(h, p, "W_out", "b_out");
}

void require_kind(const FusionParams& p, FusionKind kind) {
  if (p.config().kind != kind) {
    throw ConfigError("fusion parameters were built for '" + to_string(p.config().kind) +
                      "', not '" + to_string(kind) + "'");
  }
}

}  // namespace

std::string to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::None: return "none";
    case FusionKind::Simple: return "simple";
    case FusionKind::Cold: return "cold";
    case FusionKind::Hierarchical: return "hier";
  }
  return "none";
}

FusionKind parse_fusion_kind(std::string_view name) {
  if (name == "none") return FusionKind::None;
  if (name == "simple") return FusionKind::Simple;
  if (name == "cold") return FusionKind::Cold;
  if (name == "hier" || name == "hierarchical") return FusionKind::Hierarchical;
  throw ConfigError("unknown fusion kind '" + std::string(name) +
                    "'; valid values: none, simple, cold, hier");
}

std::string fusion_label(FusionKind kind) {
  switch (kind) {
    case FusionKind::None: return "BL";
    case FusionKind::Simple: return "SF";
    case FusionKind::Cold: return "CF";
    case FusionKind::Hierarchical: return "HF";
  }
  return "BL";
}

FusionParams::FusionParams(ParameterStore& store, const FusionConfig& config, Rng& rng)
    : config_(config) {
  if (config.lstm_dim == 0 || config.mlm_dim == 0 || config.vocab_size < 2) {
    throw ConfigError("fusion dims must be positive and the vocabulary at least 2");
  }
  if (!(config.dropout >= 0.0 && config.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  const std::size_t H = config.lstm_dim, M = config.mlm_dim, D = H + M, V = config.vocab_size;
  const std::string prefix = scheme_prefix(config.kind);

  auto add = [&](const std::string& role, std::size_t in, std::size_t out, const std::string& bias,
                 std::vector<double> bias_init = {}) {
    if (bias_init.empty()) bias_init.assign(out, 0.0);
    by_role_.emplace_back(role, &store.add(prefix + role, {in, out}, xavier_uniform(in, out, rng)));
    by_role_.emplace_back(bias, &store.add(prefix + bias, {out}, std::move(bias_init)));
  };
  switch (config.kind) {
    case FusionKind::Simple:
      add("W_g", D, D, "b_g");
      break;
    case FusionKind::Cold:
      add("W_lm", M, M, "b_lm");
      add("W_g", H + M, M, "b_g");
      add("W_r", D, D, "b_r");
      break;
    case FusionKind::Hierarchical: {
      // The relu gates and the gating half of the output GLU start open, as
      // with the LSTM forget bias.
      add("W_left", D, D, "b_left", std::vector<double>(D, 1.0));
      add("W_right", D, D, "b_right", std::vector<double>(D, 1.0));
      std::vector<double> b_lp(2 * D, 0.0);
      std::fill(b_lp.begin() + static_cast<std::ptrdiff_t>(D), b_lp.end(), 1.0);
      add("W_lp", D, 2 * D, "b_lp", std::move(b_lp));
      break;
    }
    case FusionKind::None:
      break;
  }
  by_role_.emplace_back("W_out", &store.add("fusion.out.W", {D, V}, xavier_uniform(D, V, rng)));
  by_role_.emplace_back("b_out", &store.add("fusion.out.b", {V}, std::vector<double>(V, 0.0)));
}

const Parameter& FusionParams::get(const std::string& role) const {
  for (const auto& [name, p] : by_role_) {
    if (name == role) return *p;
  }
  throw ConfigError("fusion scheme '" + to_string(config_.kind) + "' has no parameter " + role);
}

std::vector<std::string> FusionParams::roles() const {
  std::vector<std::string> out;
  for (const auto& [name, p] : by_role_) out.push_back(name);
  return out;
}

const Tensor& FusionOutput::at(const std::string& name) const {
  for (const auto& [n, t] : trace) {
    if (n == name) return t;
  }
  throw StateError("no fusion intermediate named " + name);
}

FusionOutput simple_fuse(const Tensor& h_lstm, const Tensor& h_mlm, const FusionParams& p,
                         bool training, Rng* rng) {
  require_kind(p, FusionKind::Simple);
  check_inputs(h_lstm, h_mlm, p);
  Tensor g = nn::relu(gated_affine(nn::concat_last(h_lstm, h_mlm), p, "W_g", "b_g"));
  FusionOutput out;
  out.features = g;
  out.logits = vocab_head(g, p, training, rng);
  out.trace = {{"g", g}};
  return out;
}

FusionOutput cold_fuse(const Tensor& h_lstm, const Tensor& h_mlm, const FusionParams& p,
                       bool training, Rng* rng) {
  require_kind(p, FusionKind::Cold);
  check_inputs(h_lstm, h_mlm, p);
  Tensor h_lm = nn::relu(gated_affine(h_mlm, p, "W_lm", "b_lm"));
  Tensor g = nn::relu(gated_affine(nn::concat_last(h_lstm, h_lm), p, "W_g", "b_g"));
  Tensor h_cf = nn::concat_last(h_lstm, nn::hadamard(g, h_lm));
  Tensor r = nn::relu(gated_affine(h_cf, p, "W_r", "b_r"));
  FusionOutput out;
  out.features = r;
  out.logits = vocab_head(r, p, training, rng);
  out.trace = {{"h_lm", h_lm}, {"g", g}, {"h_cf", h_cf}, {"r", r}};
  return out;
}

FusionOutput hier_fuse(const Tensor& h_lstm, const Tensor& h_mlm, const FusionParams& p,
                       bool training, Rng* rng) {
  require_kind(p, FusionKind::Hierarchical);
  check_inputs(h_lstm, h_mlm, p);
  Tensor h_c = nn::concat_last(h_mlm, h_lstm);
  Tensor gate_left = nn::relu(gated_affine(h_c, p, "W_left", "b_left"));
  Tensor gate_right = nn::relu(gated_affine(h_c, p, "W_right", "b_right"));
  Tensor g_left = nn::hadamard(gate_left, h_c);
  Tensor g_right = nn::hadamard(h_c, gate_right);
  Tensor g_c = nn::glu(nn::concat_last(g_left, g_right));
  Tensor g_lp = gated_affine(g_c, p, "W_lp", "b_lp");
  Tensor g_f = nn::glu(g_lp);
  FusionOutput out;
  out.features = g_f;
  out.logits = vocab_head(g_f, p, training, rng);
  out.trace = {{"h_c", h_c},         {"gate_left", gate_left}, {"gate_right", gate_right},
               {"g_left", g_left},   {"g_right", g_right},     {"g_c", g_c},
               {"g_lp", g_lp},       {"g_f", g_f}};
  return out;
}

FusionOutput fuse(FusionKind kind, const Tensor& h_lstm, const Tensor& h_mlm,
                  const FusionParams& p, bool training, Rng* rng) {
  switch (kind) {
    case FusionKind::Simple: return simple_fuse(h_lstm, h_mlm, p, training, rng);
    case FusionKind::Cold: return cold_fuse(h_lstm, h_mlm, p, training, rng);
    case FusionKind::Hierarchical: return hier_fuse(h_lstm, h_mlm, p, training, rng);
    case FusionKind::None: break;
  }
  throw ConfigError("fused_logits called with fusion kind 'none'; the baseline uses its own head");
}

Tensor fused_logits(FusionKind kind, const Tensor& h_lstm, const Tensor& h_mlm,
                    const FusionParams& p, bool training, Rng* rng) {
  return fuse(kind, h_lstm, h_mlm, p, training, rng).logits;
}

}  // namespace fusecap
