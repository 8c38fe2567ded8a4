#pragma once

#include <functional>
#include <span>

#include "fusecap/tensor.hpp"

namespace fusecap {

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `f` must rebuild its graph from `inputs` on every call.
/// Returns max over all input coordinates of
///   |g_ad - g_fd| / max(1e-6, |g_ad| + |g_fd|).
/// The floor keeps rounding noise on near-zero gradients from reading as error.
/// Throws NumericError when f is non-finite at any probe point.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double step = 1e-5);

}  // namespace fusecap
