#include "limn/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "limn/error.hpp"

namespace limn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
}
}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != data.size())
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return from({rows, cols}, std::move(data));
}

Tensor Tensor::scalar(double v) { return from({1, 1}, {v}); }

std::size_t Tensor::rows() const { return impl_->shape[0]; }

std::size_t Tensor::cols() const {
  const auto& s = impl_->shape;
  if (s.size() == 1) return 1;
  std::size_t c = 1;
  for (std::size_t i = 1; i < s.size(); ++i) c *= s[i];
  return c;
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

std::span<double> Tensor::mutable_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() const {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>(*impl_);
  return Tensor(std::move(impl));
}

void Graph::push(Tensor& out, bool any_grad, BackwardFn fn) {
  if (consumed_) throw StateError("graph already consumed by backward(); start a new forward pass");
  if (!record_ || !any_grad) return;
  out.set_requires_grad(true);
  nodes_.push_back({out, std::move(fn)});
}

void Graph::record(Tensor& out, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  push(out, any, std::move(fn));
}

void Graph::record(Tensor& out, const std::vector<Tensor>& inputs, BackwardFn fn) {
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  push(out, any, std::move(fn));
}

void Graph::backward(const Tensor& loss) {
  if (consumed_) throw StateError("backward() called twice on the same graph");
  if (loss.size() != 1) throw DimensionError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  consumed_ = true;
  Tensor seed = loss;
  if (!seed.requires_grad()) return;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->out.has_grad()) it->fn();
  }
  nodes_.clear();
}

}  // namespace limn
