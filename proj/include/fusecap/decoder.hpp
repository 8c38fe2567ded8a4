#pragma once

#include <span>
#include <utility>

#include "fusecap/lstm.hpp"
#include "fusecap/ops.hpp"

namespace fusecap {

struct DecoderConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t feature_dim = 64;
  std::size_t num_layers = 2;
  double dropout = 0.5;
  /// Own H->V output head; only the fusion-free baseline uses one.
  bool with_head = true;
};

/// Token embeddings, image projector and 2-layer LSTM caption decoder.
/// Image features are the step-0 input; tokens follow from step 1.
class DecoderModel {
 public:
  DecoderModel() = default;
  DecoderModel(ParameterStore& store, const DecoderConfig& config, Rng& rng);

  const DecoderConfig& config() const { return config_; }

  /// Affine projection F -> E of [F] or [B×F] features. Throws ConfigError on width mismatch.
  Tensor encode_image(const Tensor& features) const;
  Tensor embed(std::span<const TokenId> ids) const;
  LSTMState initial_state(std::size_t batch) const { return lstm_.zeros(batch); }
  /// Returns (h_top, state').
  std::pair<Tensor, LSTMState> step(const Tensor& input, const LSTMState& state) const;
  /// Baseline vocabulary head: dropout(h_top)·W + b.
  Tensor head_logits(const Tensor& h_top, bool training, Rng* rng) const;

 private:
  DecoderConfig config_;
  const Parameter* embedding_ = nullptr;
  const Parameter* image_w_ = nullptr;
  const Parameter* image_b_ = nullptr;
  const Parameter* head_w_ = nullptr;
  const Parameter* head_b_ = nullptr;
  LSTMStack lstm_;
};

/// Uniform(-0.1, 0.1) embedding table.
std::vector<double> uniform_embedding(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace fusecap
