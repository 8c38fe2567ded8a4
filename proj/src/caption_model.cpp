#include "fusecap/caption_model.hpp"

#include "fusecap/errors.hpp"

namespace fusecap {

nlohmann::json CaptionModelConfig::to_json() const {
  return {{"vocab_size", decoder.vocab_size},
          {"embed_dim", decoder.embed_dim},
          {"hidden_dim", decoder.hidden_dim},
          {"feature_dim", decoder.feature_dim},
          {"num_layers", decoder.num_layers},
          {"dropout", decoder.dropout},
          {"fusion", to_string(fusion)},
          {"mlm_dim", mlm_dim},
          {"fusion_dropout", fusion_dropout},
          {"seed", seed},
          {"vocab", vocab}};
}

CaptionModelConfig CaptionModelConfig::from_json(const nlohmann::json& j) {
  CaptionModelConfig c;
  c.decoder.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.decoder.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.decoder.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.decoder.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.decoder.num_layers = j.at("num_layers").get<std::size_t>();
  c.decoder.dropout = j.at("dropout").get<double>();
  c.fusion = parse_fusion_kind(j.at("fusion").get<std::string>());
  c.decoder.with_head = c.fusion == FusionKind::None;
  c.mlm_dim = j.at("mlm_dim").get<std::size_t>();
  c.fusion_dropout = j.at("fusion_dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.vocab = j.at("vocab").get<std::vector<std::string>>();
  return c;
}

CaptionModel::CaptionModel(CaptionModelConfig config) : config_(std::move(config)) {
  config_.decoder.with_head = config_.fusion == FusionKind::None;
  if (!config_.vocab.empty() && config_.vocab.size() != config_.decoder.vocab_size) {
    throw ConfigError("vocabulary list does not match vocab_size");
  }
  Rng rng(config_.seed);
  decoder_ = DecoderModel(store_, config_.decoder, rng);
  if (fused()) {
    FusionConfig fc;
    fc.kind = config_.fusion;
    fc.lstm_dim = config_.decoder.hidden_dim;
    fc.mlm_dim = config_.mlm_dim;
    fc.vocab_size = config_.decoder.vocab_size;
    fc.dropout = config_.fusion_dropout;
    fusion_.emplace(store_, fc, rng);
  }
}

const FusionParams& CaptionModel::fusion() const {
  if (!fusion_) throw StateError("baseline model has no fusion module");
  return *fusion_;
}

Tensor CaptionModel::logits(const Tensor& h_top, const Tensor* h_mlm, bool training,
                            Rng* rng) const {
  if (!fused()) return decoder_.head_logits(h_top, training, rng);
  if (!h_mlm) throw StateError("fusion model needs the MLM hidden state");
  return fused_logits(config_.fusion, h_top, *h_mlm, *fusion_, training, rng);
}

}  // namespace fusecap
