// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "rway/tensor.hpp"

namespace rway {

/// Default central-difference steps: gradients of scalar losses use 1e-5,
/// Jacobians of vector maps use 1e-6. Acceptance tolerances assume these.
inline constexpr double kGradientStep = 1e-5;
inline constexpr double kJacobianStep = 1e-6;

using VectorFn = std::function<Tensor(const Tensor&)>;
using ScalarFn = std::function<double(const Tensor&)>;

/// Central-difference Jacobian, shape (numel(f(x)) x numel(x)).
/// Throws NumericError naming the perturbed input index when f returns NaN/Inf.
Tensor jacobian_fd(const VectorFn& f, const Tensor& x, double step = kJacobianStep);

/// Central-difference gradient of a scalar function, same shape as x.
Tensor gradient_fd(const ScalarFn& f, const Tensor& x, double step = kGradientStep);

/// Jacobian from the tape: one reverse pass per output component. f receives
/// a fresh leaf that requires grad.
Tensor jacobian_tape(const VectorFn& f, const Tensor& x);

/// Largest |a - b| / max(|a|, |b|, floor) over all entries.
double max_relative_error(const Tensor& a, const Tensor& b, double floor);

}  // namespace rway
