#include "fusecap/optim.hpp"

#include <cmath>

#include "fusecap/errors.hpp"

namespace fusecap {

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  if (state.t == 0) {
    state.m.clear();
    state.v.clear();
    for (const auto* p : params) {
      state.m.emplace_back(p->tensor.size(), 0.0);
      state.v.emplace_back(p->tensor.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw StateError("optimizer state tracks " + std::to_string(state.m.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    if (state.m[i].size() != p->tensor.size()) {
      throw StateError("optimizer state shape mismatch for " + p->name);
    }
    if (!p->frozen && !p->tensor.has_grad()) {
      throw StateError("missing gradient for trainable parameter " + p->name);
    }
  }

  state.t += 1;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter* p = params[i];
    if (p->frozen) {
      p->tensor.clear_grad();
      continue;
    }
    auto w = p->tensor.mutable_values();
    auto g = p->tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
    p->tensor.clear_grad();
  }
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) {
    if (!p->tensor.has_grad()) continue;
    for (double g : p->tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto* p : params) {
      if (!p->tensor.has_grad()) continue;
      for (double& g : p->tensor.mutable_grad()) g *= f;
    }
  }
  return norm;
}

void zero_grads(std::span<Parameter* const> params) {
  for (auto* p : params) p->tensor.clear_grad();
}

}  // namespace fusecap
