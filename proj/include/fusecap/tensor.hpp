#pragma once

// Dense row-major tensors with a reverse-mode autodiff tape.
//
// A Tensor is a cheap handle onto a shared graph node. Operations in
// fusecap::nn record a backward closure only when at least one operand
// requires a gradient, so inference over frozen weights builds no graph.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fusecap {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  /// Throws DimensionError unless product(shape) == values.size() and every dim > 0.
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  /// Product of all dimensions except the last.
  std::size_t rows() const;
  /// Size of the last dimension.
  std::size_t cols() const;

  std::span<const double> values() const;
  /// Direct write access; intended for leaves (parameters, grad-check probes).
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void clear_grad();

  /// Seeds d(self)/d(self) = 1 and propagates through the recorded graph.
  /// Requires a single-element tensor.
  void backward() const;

  /// Copy of the values with no graph attached.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// A named trainable (or frozen) leaf tensor.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;

  void freeze() {
    frozen = true;
    tensor.set_requires_grad(false);
    tensor.clear_grad();
  }
  void unfreeze() {
    frozen = false;
    tensor.set_requires_grad(true);
  }
};

/// Owns a model's parameters in registration order; names are unique.
class ParameterStore {
 public:
  Parameter& add(std::string name, Shape shape, std::vector<double> values);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const { return params_.size(); }

  /// Parameters whose name starts with `prefix`.
  std::vector<Parameter*> with_prefix(const std::string& prefix);

  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

}  // namespace fusecap
