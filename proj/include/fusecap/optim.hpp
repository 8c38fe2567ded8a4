#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fusecap/tensor.hpp"

namespace fusecap {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates, one slot per parameter in the order passed to adam_step.
struct AdamState {
  explicit AdamState(AdamConfig config = {}) : config(config) {}

  AdamConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

/// Bias-corrected Adam update of every non-frozen parameter, then clears all
/// gradients. Frozen parameters are left bit-identical. Throws StateError when a
/// non-frozen parameter has no gradient or the state was built for other shapes.
void adam_step(std::span<Parameter* const> params, AdamState& state);

/// Rescales gradients so their global L2 norm is at most max_norm; returns the
/// norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

void zero_grads(std::span<Parameter* const> params);

}  // namespace fusecap
