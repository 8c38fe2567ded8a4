#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fusecap/rng.hpp"
#include "fusecap/tensor.hpp"

namespace fusecap {

using TokenId = std::int32_t;

namespace nn {

/// While alive, operations on this thread record no graph even when their
/// inputs require gradients (inference over trainable weights).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// False inside a NoGradGuard.
bool recording();

/// a[m×k] · b[k×n]. Both operands must be rank 2.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x·W + b with b broadcast over rows. x may be rank 1 ([d_in]) or rank 2.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

/// One LSTM cell update with gate order (i, f, g, o). x [B×D], h and c [B×H],
/// W [(D+H)×4H] acting on [x; h], b [4H]. Returns [B×2H] holding h' then c'.
Tensor lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const Tensor& w,
                 const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);

/// Concatenation along the last axis; leading dims must agree.
Tensor concat_last(const Tensor& a, const Tensor& b);
/// Columns [begin, begin+len) of the last axis.
Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t len);

Tensor hadamard(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

/// Splits the last axis into halves (a, b) and returns a ∘ sigmoid(b).
Tensor glu(const Tensor& x);

/// Inverted dropout; identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

/// Rows of `table` selected by `ids` -> [ids.size() × table.cols()].
Tensor embedding(const Tensor& table, std::span<const TokenId> ids);

/// Row r of the result is row r of sources[which[r]]. All sources share a shape.
Tensor pick_rows(std::span<const Tensor> sources, std::span<const std::size_t> which);

inline constexpr TokenId kIgnoreTarget = -1;

/// Summed negative log-likelihood of `targets` under row-wise softmax(logits).
/// Rows whose target is kIgnoreTarget contribute nothing. Returns a scalar.
Tensor softmax_xent(const Tensor& logits, std::span<const TokenId> targets);
/// Single-row convenience: logits of shape [V] or [1×V].
Tensor softmax_xent(const Tensor& logits, TokenId target);

/// Row-wise softmax of the values (no graph).
std::vector<double> softmax_rows(const Tensor& logits);
/// Numerically stable log-softmax of one row.
std::vector<double> log_softmax(std::span<const double> row);

}  // namespace nn
}  // namespace fusecap
