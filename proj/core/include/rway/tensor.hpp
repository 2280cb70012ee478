// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rway {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

/// Arguments handed to a node's backward function.
struct BackwardArgs {
  std::span<const double> out;         ///< forward value of the node
  std::span<const double> grad;        ///< dL/d(out)
  std::span<double* const> input_grads;  ///< per input; nullptr when not needed
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

struct GradFn {
  const char* name = "";
  std::vector<Tensor> inputs;
  BackwardFn apply;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until the first backward reaches it
  std::shared_ptr<GradFn> grad_fn;
};

}  // namespace detail

/// Dense row-major tensor of doubles with optional reverse-mode gradients.
///
/// Tensor is a shared handle; copies alias the same storage. Values are
/// immutable once constructed, except for leaves updated by an optimizer via
/// mutable_data(). Gradients only accumulate into leaves marked with
/// requires_grad_(); intermediate results carry a grad_fn instead.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// In-place access for optimizer updates; only legal on leaves.
  std::span<double> mutable_data();

  double item() const;
  double operator()(std::size_t i, std::size_t j) const;
  double operator()(std::size_t i, std::size_t j, std::size_t k) const;

  /// True for marked leaves and for any result computed from one.
  bool requires_grad() const noexcept;
  bool is_leaf() const noexcept;
  Tensor& requires_grad_(bool flag = true);

  bool has_grad() const noexcept;
  /// Copy of the accumulated gradient, zeros if nothing accumulated yet.
  Tensor grad() const;
  std::span<const double> grad_data() const;
  void zero_grad();

  /// Same values, cut from the tape.
  Tensor detach() const;
  Tensor clone() const;
  /// Same values, new shape; gradients flow through.
  Tensor reshape(Shape shape) const;

  /// Reverse pass from a scalar.
  void backward() const;
  /// Reverse pass with an explicit cotangent of this tensor's shape.
  void backward(const Tensor& cotangent) const;

  detail::TensorImpl* impl() const noexcept { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>, const char*,
                            detail::BackwardFn);

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Builds an op result. The backward function is attached only if some input
/// requires grad. Throws NumericError if the data holds NaN or Inf.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   const char* name, detail::BackwardFn backward);

bool any_requires_grad(std::initializer_list<Tensor> inputs) noexcept;

/// While alive, ops on this thread skip the tape (evaluation mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active() noexcept;

 private:
  bool previous_;
};

/// Exact elementwise equality of shape and bits.
bool bit_equal(const Tensor& a, const Tensor& b) noexcept;
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace rway
