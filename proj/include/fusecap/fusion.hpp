#pragma once

// Fusion of the decoder's top hidden state with the frozen masked LM's state.
//
// With D = H + H_m and σ = relu throughout:
//   Simple:        g    = σ(W_g [h_lstm; h_mlm] + b_g)                        (D)
//   Cold:          h_lm = σ(W_lm h_mlm + b_lm)                                (H_m)
//                  g    = σ(W_g [h_lstm; h_lm] + b_g)                         (H_m)
//                  h_cf = [h_lstm; g ∘ h_lm]                                   (D)
//                  r    = σ(W_r h_cf + b_r)                                    (D)
//   Hierarchical:  h_c     = [h_mlm; h_lstm]                                   (D)
//                  g_left  = σ(W_left h_c + b_left) ∘ h_c                      (D)
//                  g_right = h_c ∘ σ(W_right h_c + b_right)                    (D)
//                  g_c     = GLU([g_left; g_right])                            (D)
//                  g_lp    = W_lp g_c + b_lp                                   (2D)
//                  g_f     = GLU(g_lp)                                         (D)
// Every scheme ends in logits = dropout(feature)·W_out + b_out.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fusecap/rng.hpp"
#include "fusecap/tensor.hpp"

namespace fusecap {

enum class FusionKind { None, Simple, Cold, Hierarchical };

/// "none" | "simple" | "cold" | "hier".
std::string to_string(FusionKind kind);
/// Accepts the names above (and "hierarchical"); throws ConfigError otherwise.
FusionKind parse_fusion_kind(std::string_view name);
/// Table-style row label: BL, SF, CF, HF.
std::string fusion_label(FusionKind kind);

struct FusionConfig {
  FusionKind kind = FusionKind::Simple;
  std::size_t lstm_dim = 128;
  std::size_t mlm_dim = 128;
  std::size_t vocab_size = 0;
  double dropout = 0.5;
};

/// Learnable W/b sets of one scheme plus the shared vocabulary head, registered
/// under "fusion.<sf|cf|hf>.*" and "fusion.out.*".
class FusionParams {
 public:
  FusionParams() = default;
  FusionParams(ParameterStore& store, const FusionConfig& config, Rng& rng);

  const FusionConfig& config() const { return config_; }
  std::size_t feature_dim() const { return config_.lstm_dim + config_.mlm_dim; }
  /// Parameter for a role such as "W_g", "b_lm" or "W_out".
  const Parameter& get(const std::string& role) const;
  std::vector<std::string> roles() const;

 private:
  FusionConfig config_;
  std::vector<std::pair<std::string, const Parameter*>> by_role_;
};

struct FusionOutput {
  Tensor features;  // g (simple), r (cold) or g_f (hierarchical)
  Tensor logits;
  /// Named intermediates, e.g. {"g", ...} or {"h_lm", "g", "h_cf", "r"}.
  std::vector<std::pair<std::string, Tensor>> trace;

  const Tensor& at(const std::string& name) const;
};

// h_lstm is [H] or [B×H]; h_mlm is [H_m] or [B×H_m]. Dropout needs `rng` when training.
FusionOutput simple_fuse(const Tensor& h_lstm, const Tensor& h_mlm, const FusionParams& p,
                         bool training, Rng* rng = nullptr);
FusionOutput cold_fuse(const Tensor& h_lstm, const Tensor& h_mlm, const FusionParams& p,
                       bool training, Rng* rng = nullptr);
FusionOutput hier_fuse(const Tensor& h_lstm, const Tensor& h_mlm, const FusionParams& p,
                       bool training, Rng* rng = nullptr);

/// Dispatch on kind; FusionKind::None is a usage error (ConfigError).
FusionOutput fuse(FusionKind kind, const Tensor& h_lstm, const Tensor& h_mlm,
                  const FusionParams& p, bool training, Rng* rng = nullptr);
Tensor fused_logits(FusionKind kind, const Tensor& h_lstm, const Tensor& h_mlm,
                    const FusionParams& p, bool training, Rng* rng = nullptr);

}  // namespace fusecap
