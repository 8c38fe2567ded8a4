#include "fusecap/lstm.hpp"

#include <cmath>

#include "fusecap/errors.hpp"
#include "fusecap/ops.hpp"

namespace fusecap {

std::vector<double> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (auto& v : w) v = rng.uniform(-limit, limit);
  return w;
}

LSTMStack::LSTMStack(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                     std::size_t hidden_dim, std::size_t num_layers, Rng& rng)
    : hidden_(hidden_dim) {
  if (hidden_dim == 0 || num_layers == 0 || input_dim == 0) {
    throw ConfigError("LSTM dimensions must be positive");
  }
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::size_t in = (l == 0 ? input_dim : hidden_dim) + hidden_dim;
    auto w = xavier_uniform(in, 4 * hidden_dim, rng);
    std::vector<double> b(4 * hidden_dim, 0.0);
    for (std::size_t j = hidden_dim; j < 2 * hidden_dim; ++j) b[j] = 1.0;
    const auto base = prefix + "." + std::to_string(l);
    weights_.push_back(&store.add(base + ".W", {in, 4 * hidden_dim}, std::move(w)));
    biases_.push_back(&store.add(base + ".b", {4 * hidden_dim}, std::move(b)));
  }
}

void LSTMStack::bind(ParameterStore& store, const std::string& prefix) {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto base = prefix + "." + std::to_string(l);
    weights_[l] = store.find(base + ".W");
    biases_[l] = store.find(base + ".b");
    if (!weights_[l] || !biases_[l]) throw StateError("missing LSTM parameters under " + base);
  }
}

LSTMState LSTMStack::zeros(std::size_t batch) const {
  LSTMState s;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    s.h.push_back(Tensor::zeros({batch, hidden_}));
    s.c.push_back(Tensor::zeros({batch, hidden_}));
  }
  return s;
}

std::pair<Tensor, LSTMState> LSTMStack::step(const Tensor& input, const LSTMState& state) const {
  if (state.h.size() != weights_.size() || state.c.size() != weights_.size()) {
    throw DimensionError("LSTM state has the wrong number of layers");
  }
  const std::size_t H = hidden_;
  LSTMState next;
  Tensor x = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Tensor hc = nn::lstm_cell(x, state.h[l], state.c[l], weights_[l]->tensor, biases_[l]->tensor);
    Tensor h = nn::slice_last(hc, 0, H);
    Tensor c = nn::slice_last(hc, H, H);
    next.h.push_back(h);
    next.c.push_back(c);
    x = h;
  }
  return {x, std::move(next)};
}

}  // namespace fusecap
