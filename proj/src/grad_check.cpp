#include "fusecap/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "fusecap/errors.hpp"

namespace fusecap {
namespace {

double evaluate(const std::function<Tensor()>& f) {
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: function is not finite at probe point");
  return v;
}

}  // namespace

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double step) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.clear_grad();
  }
  Tensor out = f();
  if (!std::isfinite(out.item())) throw NumericError("grad_check: function is not finite");
  out.backward();

  std::vector<std::vector<double>> analytic;
  for (auto& x : inputs) {
    if (x.has_grad()) {
      auto g = x.grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(x.size(), 0.0);
    }
    x.clear_grad();
  }

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto vals = inputs[i].mutable_values();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double orig = vals[j];
      vals[j] = orig + step;
      const double up = evaluate(f);
      vals[j] = orig - step;
      const double down = evaluate(f);
      vals[j] = orig;
      const double fd = (up - down) / (2.0 * step);
      const double ad = analytic[i][j];
      const double err = std::abs(ad - fd) / std::max(1e-6, std::abs(ad) + std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace fusecap
