#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fusecap/lstm.hpp"
#include "fusecap/vocab.hpp"

namespace fusecap {

struct MlmConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t num_layers = 2;
  std::uint64_t seed = 1;
};

/// Small bidirectional masked language model standing in for a pretrained
/// encoder. Forward and backward 2-layer LSTM stacks read the sequence from
/// opposite ends; their top states at the masked position are combined by an
/// affine layer (2H_m -> H_m). A V-way head predicts the masked token.
class ToyMLM {
 public:
  explicit ToyMLM(const MlmConfig& config);

  ToyMLM(const ToyMLM&) = delete;
  ToyMLM& operator=(const ToyMLM&) = delete;
  ToyMLM(ToyMLM&&) = default;
  ToyMLM& operator=(ToyMLM&&) = default;

  const MlmConfig& config() const { return config_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  /// Combined hidden state [H_m] at the single [MASK] position of `tokens`.
  /// Throws InputError unless exactly one [MASK] is present.
  Tensor encode(std::span<const TokenId> tokens) const;

  /// Row p-1 holds encode(seq with position p replaced by [MASK]) for p = 1..L-1.
  /// Costs O(L) cell steps by reusing the unmasked prefix/suffix states.
  /// Constant result (no graph).
  Tensor encode_all_masks(std::span<const TokenId> seq) const;
  /// encode_all_masks for equal-length sequences in one batched pass.
  std::vector<Tensor> encode_all_masks_batch(const std::vector<TokenSeq>& seqs) const;

  /// Combined states [B×H_m] for equal-length sequences, row r read at masked_at[r].
  /// Records a graph when the parameters are trainable.
  Tensor encode_batch(const std::vector<TokenSeq>& seqs,
                      std::span<const std::size_t> masked_at) const;

  /// V-way prediction head on combined states.
  Tensor predict_logits(const Tensor& hidden) const;

  void freeze();
  /// True when every parameter carries frozen=true.
  bool frozen() const;
  /// SHA-256 over parameter names, shapes and values.
  std::string checksum() const;

 private:
  MlmConfig config_;
  ParameterStore store_;
  const Parameter* embedding_ = nullptr;
  LSTMStack forward_;
  LSTMStack backward_;
  const Parameter* combine_w_ = nullptr;
  const Parameter* combine_b_ = nullptr;
  const Parameter* head_w_ = nullptr;
  const Parameter* head_b_ = nullptr;
};

struct MlmPretrainConfig {
  std::size_t epochs = 4;
  std::size_t batch_size = 32;
  double lr = 2e-3;
  std::uint64_t seed = 1;
};

struct MlmEpoch {
  double loss = 0.0;      // mean masked-token cross-entropy
  double accuracy = 0.0;  // masked-token argmax accuracy during the epoch
};

struct MlmPretrainReport {
  double initial_loss = 0.0;  // mean loss of the untrained model on one masking pass
  std::vector<MlmEpoch> epochs;
};

/// Masks one uniformly chosen position (1..L-1) per sequence per epoch and
/// minimises cross-entropy of the masked token. Freezes every parameter at the end.
/// Throws InputError on an empty corpus or sequences shorter than 2.
MlmPretrainReport mlm_pretrain(ToyMLM& mlm, const std::vector<TokenSeq>& corpus,
                               const MlmPretrainConfig& config);

/// Fraction of (sequence, position) pairs whose masked token is the head's argmax.
double mlm_masked_accuracy(const ToyMLM& mlm, const std::vector<TokenSeq>& corpus);

}  // namespace fusecap
