#include "fusecap/decoder.hpp"

#include "fusecap/errors.hpp"

namespace fusecap {

std::vector<double> uniform_embedding(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform(-0.1, 0.1);
  return v;
}

DecoderModel::DecoderModel(ParameterStore& store, const DecoderConfig& config, Rng& rng)
    : config_(config) {
  if (config.vocab_size < 2) throw ConfigError("decoder vocabulary too small");
  if (config.embed_dim == 0 || config.feature_dim == 0) throw ConfigError("decoder dims must be positive");
  if (!(config.dropout >= 0.0 && config.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  const auto V = config.vocab_size, E = config.embed_dim, F = config.feature_dim,
             H = config.hidden_dim;
  embedding_ = &store.add("decoder.embed", {V, E}, uniform_embedding(V, E, rng));
  image_w_ = &store.add("decoder.image.W", {F, E}, xavier_uniform(F, E, rng));
  image_b_ = &store.add("decoder.image.b", {E}, std::vector<double>(E, 0.0));
  lstm_ = LSTMStack(store, "decoder.lstm", E, H, config.num_layers, rng);
  if (config.with_head) {
    head_w_ = &store.add("decoder.head.W", {H, V}, xavier_uniform(H, V, rng));
    head_b_ = &store.add("decoder.head.b", {V}, std::vector<double>(V, 0.0));
  }
}

Tensor DecoderModel::encode_image(const Tensor& features) const {
  if (features.cols() != config_.feature_dim) {
    throw ConfigError("image features have width " + std::to_string(features.cols()) +
                      ", model expects " + std::to_string(config_.feature_dim));
  }
  return nn::affine(features, image_w_->tensor, image_b_->tensor);
}

Tensor DecoderModel::embed(std::span<const TokenId> ids) const {
  return nn::embedding(embedding_->tensor, ids);
}

std::pair<Tensor, LSTMState> DecoderModel::step(const Tensor& input, const LSTMState& state) const {
  if (input.rank() != 2) throw DimensionError("decoder_step expects a [batch × E] input");
  return lstm_.step(input, state);
}

Tensor DecoderModel::head_logits(const Tensor& h_top, bool training, Rng* rng) const {
  if (!head_w_) throw StateError("decoder was built without an output head");
  Tensor h = h_top;
  if (training && config_.dropout > 0.0) {
    if (!rng) throw ConfigError("training-mode dropout needs an Rng");
    h = nn::dropout(h_top, config_.dropout, true, *rng);
  }
  return nn::affine(h, head_w_->tensor, head_b_->tensor);
}

}  // namespace fusecap
