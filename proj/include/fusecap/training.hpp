#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusecap/caption_model.hpp"
#include "fusecap/dataset.hpp"
#include "fusecap/mlm.hpp"
#include "fusecap/vocab.hpp"

namespace fusecap {

struct TrainConfig {
  double lr = 5e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 7;
  std::size_t halve_patience = 2;
  std::size_t stop_patience = 4;
  bool strict_improvement = true;
  std::uint64_t seed = 1;
  FusionKind fusion = FusionKind::None;
  double dropout = 0.5;
  double clip_norm = 0.0;  // <= 0 disables clipping
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t num_layers = 2;
  /// Greedy decoding length cap for validation; 0 means twice the longest
  /// training caption.
  std::size_t val_max_len = 0;

  /// Throws ConfigError on lr <= 0, zero batch/epochs/patience, stop < halve,
  /// or a dropout rate outside [0, 1).
  void validate() const;
  nlohmann::json to_json() const;
  /// Starts from `base` and overrides only the keys present in `j`.
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
  static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }
};

struct ScheduleDecision {
  double lr = 0.0;
  bool halved = false;
  bool stop = false;
  std::size_t stale_epochs = 0;  // trailing epochs without improvement
};

/// Learning-rate schedule over the validation history (oldest first). An epoch
/// improves when its score beats every earlier one (strictly, unless `strict`
/// is false); the first epoch always improves. The rate halves when exactly
/// `halve_patience` trailing epochs failed to improve; training stops once
/// `stop_patience` have. Throws InputError on an empty history.
ScheduleDecision schedule_step(std::span<const double> history, double lr,
                               std::size_t halve_patience = 2, std::size_t stop_patience = 4,
                               bool strict = true);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean token cross-entropy
  double val_bleu4 = 0.0;
  double lr = 0.0;          // rate used during this epoch
  bool lr_halved = false;   // halving decided after this epoch
  double seconds = 0.0;
};

struct TrainReport {
  std::string fusion;
  std::uint64_t seed = 0;
  double initial_loss = 0.0;  // mean token cross-entropy of the untrained model
  std::vector<EpochRecord> epochs;
  std::string stop_reason;  // "max_epochs" | "early_stop"
  std::size_t best_epoch = 0;
  double wall_seconds = 0.0;
  std::string mlm_checksum_before;
  std::string mlm_checksum_after;

  nlohmann::json to_json() const;
};

struct TrainData {
  Vocab vocab;
  std::vector<CaptionExample> train;
  std::vector<CaptionExample> val;
};

struct TrainResult {
  CaptionModel model;
  TrainReport report;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Longest tokenized training caption (<start> and <eos> included).
std::size_t longest_caption(const TrainData& data);

/// Teacher-forced cross-entropy over every training reference; validation
/// BLEU-4 of greedy captions drives the schedule; best epoch restored.
TrainResult train_baseline(const TrainData& data, const TrainConfig& config,
                           const EpochCallback& on_epoch = {});

/// MLM states of every training and validation reference, shareable by
/// fusion runs that use the same MLM and data.
struct FusionCache {
  std::vector<Tensor> train;
  std::vector<Tensor> val;
  std::string mlm_checksum;
};
FusionCache build_fusion_cache(const TrainData& data, const ToyMLM& mlm);

/// Same loop for a fusion model. At step t of a reference the frozen MLM reads
/// the reference with position t+1 masked. Validation emends `val_drafts`
/// (aligned with data.val) greedily. Throws StateError for an unfrozen MLM and
/// if its checksum changes during training.
TrainResult train_fusion(const TrainData& data, const ToyMLM& mlm,
                         const std::vector<TokenSeq>& val_drafts, const TrainConfig& config,
                         const EpochCallback& on_epoch = {}, const FusionCache* cache = nullptr);

/// Mean token cross-entropy of `model` on `examples` (no dropout).
double evaluate_loss(const CaptionModel& model, const ToyMLM* mlm,
                     const std::vector<CaptionExample>& examples, const Vocab& vocab);

}  // namespace fusecap
