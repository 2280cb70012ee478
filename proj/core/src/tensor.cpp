// SPDX-License-Identifier: Apache-2.0
#include "rway/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "rway/error.hpp"
#include "rway/rng.hpp"

namespace rway {

using detail::TensorImpl;

std::size_t shape_numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({m, n}, std::move(data));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  std::vector<double> data(shape_numel(shape));
  for (auto& x : data) x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> data(shape_numel(shape));
  for (auto& x : data) x = lo + (hi - lo) * rng.uniform();
  return Tensor(std::move(shape), std::move(data));
}

namespace {

const TensorImpl& checked(const std::shared_ptr<TensorImpl>& impl) {
  if (!impl) throw ContractError("use of an undefined tensor");
  return *impl;
}

}  // namespace

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range for shape " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const double> Tensor::data() const { return checked(impl_).data; }

std::span<double> Tensor::mutable_data() {
  checked(impl_);
  if (impl_->grad_fn) throw ContractError("mutable_data() on a non-leaf tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::operator()(std::size_t i, std::size_t j) const {
  const auto& s = shape();
  if (s.size() != 2 || i >= s[0] || j >= s[1]) throw DimensionError("bad 2-d index");
  return impl_->data[i * s[1] + j];
}

double Tensor::operator()(std::size_t i, std::size_t j, std::size_t k) const {
  const auto& s = shape();
  if (s.size() != 3 || i >= s[0] || j >= s[1] || k >= s[2]) throw DimensionError("bad 3-d index");
  return impl_->data[(i * s[1] + j) * s[2] + k];
}

bool Tensor::requires_grad() const noexcept {
  return impl_ && (impl_->requires_grad || impl_->grad_fn);
}

bool Tensor::is_leaf() const noexcept { return impl_ && !impl_->grad_fn; }

Tensor& Tensor::requires_grad_(bool flag) {
  checked(impl_);
  if (impl_->grad_fn) throw ContractError("requires_grad_() on a non-leaf tensor");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const noexcept { return impl_ && !impl_->grad.empty(); }

Tensor Tensor::grad() const {
  const auto& impl = checked(impl_);
  if (impl.grad.empty()) return zeros(impl.shape);
  return Tensor(impl.shape, impl.grad);
}

std::span<const double> Tensor::grad_data() const { return checked(impl_).grad; }

void Tensor::zero_grad() {
  checked(impl_);
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& impl = checked(impl_);
  return Tensor(impl.shape, impl.data);
}

Tensor Tensor::clone() const {
  const auto& impl = checked(impl_);
  Tensor t(impl.shape, impl.data);
  t.impl_->requires_grad = impl.requires_grad && !impl.grad_fn;
  return t;
}

Tensor Tensor::reshape(Shape shape) const {
  const auto& impl = checked(impl_);
  if (shape_numel(shape) != impl.data.size()) {
    throw DimensionError("cannot reshape " + shape_str(impl.shape) + " to " + shape_str(shape));
  }
  return make_result(std::move(shape), impl.data, {*this}, "reshape",
                     [](const detail::BackwardArgs& a) {
                       double* g = a.input_grads[0];
                       for (std::size_t i = 0; i < a.grad.size(); ++i) g[i] += a.grad[i];
                     });
}

namespace {
thread_local bool t_no_grad = false;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(t_no_grad) { t_no_grad = true; }
NoGradGuard::~NoGradGuard() { t_no_grad = previous_; }
bool NoGradGuard::active() noexcept { return t_no_grad; }

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   const char* name, detail::BackwardFn backward) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw NumericError(std::string(name) + ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
  Tensor out(std::move(shape), std::move(data));
  const bool taped = !t_no_grad && std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (taped) {
    auto fn = std::make_shared<detail::GradFn>();
    fn->name = name;
    fn->inputs = std::move(inputs);
    fn->apply = std::move(backward);
    out.impl_->grad_fn = std::move(fn);
  }
  return out;
}

bool any_requires_grad(std::initializer_list<Tensor> inputs) noexcept {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ContractError("backward() needs a scalar, got shape " + shape_str(shape()));
  }
  backward(Tensor::full(shape(), 1.0));
}

void Tensor::backward(const Tensor& cotangent) const {
  const auto& root = checked(impl_);
  if (cotangent.shape() != root.shape) {
    throw DimensionError("cotangent shape " + shape_str(cotangent.shape()) +
                         " does not match " + shape_str(root.shape));
  }
  if (!requires_grad()) throw ContractError("backward() on a tensor outside the tape");

  // Iterative post-order DFS gives a topological order of the graph.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* fn = node->grad_fn.get();
    if (fn && next < fn->inputs.size()) {
      TensorImpl* child = fn->inputs[next++].impl();
      if (child && (child->requires_grad || child->grad_fn) && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  std::unordered_map<TensorImpl*, std::vector<double>> interior;
  auto buffer_for = [&](TensorImpl* t) -> double* {
    if (!t->grad_fn) {
      if (t->grad.size() != t->data.size()) t->grad.assign(t->data.size(), 0.0);
      return t->grad.data();
    }
    auto& g = interior[t];
    if (g.empty()) g.assign(t->data.size(), 0.0);
    return g.data();
  };

  {
    double* g = buffer_for(impl_.get());
    const auto seed = cotangent.data();
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
  }

  std::vector<double*> input_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->grad_fn) continue;
    auto found = interior.find(node);
    if (found == interior.end()) continue;
    const auto& fn = *node->grad_fn;
    input_grads.assign(fn.inputs.size(), nullptr);
    for (std::size_t i = 0; i < fn.inputs.size(); ++i) {
      TensorImpl* in = fn.inputs[i].impl();
      if (in && (in->requires_grad || in->grad_fn)) input_grads[i] = buffer_for(in);
    }
    // buffer_for may rehash the map; look the node up again.
    const auto& grad = interior.at(node);
    fn.apply(detail::BackwardArgs{node->data, grad, input_grads});
    interior.erase(node);
  }
}

bool bit_equal(const Tensor& a, const Tensor& b) noexcept {
  if (!a.defined() || !b.defined()) return a.defined() == b.defined();
  if (a.shape() != b.shape()) return false;
  const auto x = a.data();
  const auto y = b.data();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  double m = 0.0;
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

}  // namespace rway
