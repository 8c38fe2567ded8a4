#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "fusecap/caption_model.hpp"
#include "fusecap/lstm.hpp"
#include "fusecap/mlm.hpp"
#include "fusecap/vocab.hpp"

namespace fusecap {

struct BeamConfig {
  std::size_t beam_width = 5;
  std::size_t max_len = 40;  // generated tokens, <eos> included
  bool length_normalization = false;

  void validate() const;
};

struct DecodeResult {
  TokenSeq tokens;  // <start> w1 ... [<eos>]
  double log_prob = 0.0;
  bool finished = false;
};

/// Autoregressive scorer behind greedy and beam search. Hypotheses carry an
/// opaque state; `advance` scores generated position `step` for a batch of
/// hypotheses given the token each emitted last (ignored at step 0).
class StepModel {
 public:
  struct State {
    virtual ~State() = default;
  };
  using StatePtr = std::shared_ptr<const State>;

  virtual ~StepModel() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual StatePtr initial_state() const = 0;
  /// Returns one log-probability row per hypothesis and fills `next` with the
  /// successor states. Banned tokens carry -inf.
  virtual std::vector<std::vector<double>> advance(std::span<const StatePtr> states,
                                                   std::span<const TokenId> prev,
                                                   std::size_t step,
                                                   std::vector<StatePtr>& next) const = 0;
};

/// Argmax per step (ties -> smaller id) until <eos> or max_len tokens.
DecodeResult greedy_decode(const StepModel& model, std::size_t max_len);

/// Beam search over summed log-probs. Candidates are ranked by score, then
/// smaller token id; hypotheses ending in <eos> leave the beam and shrink it.
/// Returns the best finished hypothesis (ties -> shorter), else the best
/// unfinished one at max_len.
DecodeResult beam_search(const StepModel& model, const BeamConfig& config);

/// Caption model driven from image features; fusion models read the MLM state
/// from `mlm_context` (one row per step) or from a constant vector.
class CaptionStepModel : public StepModel {
 public:
  /// Baseline: no MLM input.
  CaptionStepModel(const CaptionModel& model, std::span<const double> features);

  std::size_t vocab_size() const override;
  StatePtr initial_state() const override;
  std::vector<std::vector<double>> advance(std::span<const StatePtr> states,
                                           std::span<const TokenId> prev, std::size_t step,
                                           std::vector<StatePtr>& next) const override;

  /// MLM state used at `step`; fusion models must override via a provider.
  using MlmProvider = std::function<Tensor(std::size_t step)>;
  void set_mlm_provider(MlmProvider provider) { mlm_provider_ = std::move(provider); }

 private:
  const CaptionModel& model_;
  Tensor features_;
  MlmProvider mlm_provider_;
};

/// Greedy / beam captioning with a baseline model.
DecodeResult greedy_decode(const CaptionModel& model, std::span<const double> features,
                           std::size_t max_len);
DecodeResult beam_search(const CaptionModel& model, std::span<const double> features,
                         const BeamConfig& config);

/// MLM input at decoding step t: the draft with position t+1 replaced by
/// [MASK] while t+1 is inside the draft (the <eos> slot included); beyond that
/// the [MASK] follows the draft's last word and precedes <eos>.
TokenSeq masked_draft(std::span<const TokenId> draft, std::size_t step);

struct EmendOptions {
  /// Ablation hook: use this constant MLM state instead of encoding the draft.
  std::optional<std::vector<double>> constant_mlm_state;
};

/// Re-decodes `draft` with a fusion model. The decoder conditions on its own
/// emitted tokens; at every step the frozen MLM reads the masked draft (one
/// MLM state per step, shared by all beam hypotheses). Throws InputError on an
/// empty draft and ConfigError on a baseline model.
DecodeResult emend(const CaptionModel& model, const ToyMLM& mlm, std::span<const double> features,
                   std::span<const TokenId> draft, const BeamConfig& config,
                   const EmendOptions& options = {});

}  // namespace fusecap
