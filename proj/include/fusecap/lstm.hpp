#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fusecap/rng.hpp"
#include "fusecap/tensor.hpp"

namespace fusecap {

/// Per-layer hidden and cell states, each [batch × hidden].
struct LSTMState {
  std::vector<Tensor> h;
  std::vector<Tensor> c;
};

/// Xavier-uniform initial values for a [fan_in × fan_out] weight.
std::vector<double> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Stacked unidirectional LSTM. Layer l owns "<prefix>.<l>.W" of shape
/// [(in_l + H) × 4H] and "<prefix>.<l>.b" of shape [4H], gate order (i, f, g, o),
/// with the forget-gate bias initialised to +1.
class LSTMStack {
 public:
  LSTMStack() = default;
  LSTMStack(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
            std::size_t hidden_dim, std::size_t num_layers, Rng& rng);

  LSTMState zeros(std::size_t batch) const;
  /// One time step through every layer; returns the top layer's h and the new state.
  std::pair<Tensor, LSTMState> step(const Tensor& input, const LSTMState& state) const;

  std::size_t hidden_dim() const { return hidden_; }
  std::size_t num_layers() const { return weights_.size(); }

  /// Re-binds parameter pointers after the owning store was rebuilt.
  void bind(ParameterStore& store, const std::string& prefix);

 private:
  std::size_t hidden_ = 0;
  std::vector<const Parameter*> weights_;
  std::vector<const Parameter*> biases_;
};

}  // namespace fusecap
