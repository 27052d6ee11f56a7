#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace unisal {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor;

namespace detail {

/// Vector-Jacobian product of one recorded operation.
///
/// Receives the forward output, the gradient flowing into that output and
/// one gradient buffer per input. A buffer is empty when the corresponding
/// input does not take part in differentiation.
using BackwardFn = std::function<void(std::span<const double> out,
                                      std::span<const double> grad_out,
                                      std::span<const std::span<double>> grad_in)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t sequence = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

}  // namespace detail

/// Dense row-major tensor of 64-bit reals participating in reverse-mode
/// differentiation.
///
/// Tensor is a handle: copies alias the same storage. Operations return new
/// tensors and, while gradient recording is enabled and some input requires a
/// gradient, remember how to propagate gradients back to their inputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view of the storage. Meant for leaves (parameters, buffers,
  /// inputs); mutating a recorded intermediate invalidates its gradient.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Copy of the values that is cut off from the tape.
  Tensor detach() const;
  /// Deep copy keeping the requires_grad flag, cut off from the tape.
  Tensor clone() const;

  /// Stable identity of the underlying storage.
  const void* id() const { return node_.get(); }

  /// Records a new operation. `inputs` may contain undefined tensors, which
  /// receive empty gradient buffers.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            const std::vector<Tensor>& inputs,
                            detail::BackwardFn backward);

  friend void backward(const Tensor& loss);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Propagates d(loss)/d(x) into every reachable tensor that requires a
/// gradient. Leaf gradients accumulate across calls; intermediate gradients
/// are released once consumed.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables operation recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace unisal
