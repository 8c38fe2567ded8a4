#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusecap/decoder.hpp"
#include "fusecap/fusion.hpp"
#include "fusecap/vocab.hpp"

namespace fusecap {

struct CaptionModelConfig {
  DecoderConfig decoder;
  FusionKind fusion = FusionKind::None;
  std::size_t mlm_dim = 128;  // width of the MLM state consumed by the fusion layer
  double fusion_dropout = 0.5;
  std::uint64_t seed = 1;
  std::vector<std::string> vocab;  // token list in id order

  nlohmann::json to_json() const;
  static CaptionModelConfig from_json(const nlohmann::json& j);
};

/// Decoder plus either its own head (baseline) or a fusion module.
class CaptionModel {
 public:
  explicit CaptionModel(CaptionModelConfig config);

  CaptionModel(const CaptionModel&) = delete;
  CaptionModel& operator=(const CaptionModel&) = delete;
  CaptionModel(CaptionModel&&) = default;
  CaptionModel& operator=(CaptionModel&&) = default;

  const CaptionModelConfig& config() const { return config_; }
  FusionKind kind() const { return config_.fusion; }
  bool fused() const { return config_.fusion != FusionKind::None; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const DecoderModel& decoder() const { return decoder_; }
  /// Throws StateError for the baseline.
  const FusionParams& fusion() const;
  Vocab vocab() const { return Vocab::from_tokens(config_.vocab); }

  /// Next-token logits from the decoder's top state. Fusion models require `h_mlm`.
  Tensor logits(const Tensor& h_top, const Tensor* h_mlm, bool training, Rng* rng) const;

 private:
  CaptionModelConfig config_;
  ParameterStore store_;
  DecoderModel decoder_;
  std::optional<FusionParams> fusion_;
};

}  // namespace fusecap
