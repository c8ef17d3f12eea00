#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace limn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Reference-counted handle onto a dense row-major double buffer. Copies of a
// Tensor alias the same storage; use clone() for an independent value.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor scalar(double v);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t size() const { return impl_->data.size(); }
  // 2-D views; a 1-D tensor of length n reads as n x 1.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  // Allocates a zeroed gradient buffer on first use.
  std::span<double> mutable_grad() const;
  void zero_grad() const;

  Tensor clone() const;
  // Same storage identity.
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Tape of recorded operations for one forward pass. A graph is single-use:
// after backward() it refuses both further recording and a second backward.
class Graph {
 public:
  using BackwardFn = std::function<void()>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  // Registers `out` as produced from `inputs`. The backward rule is kept only
  // when recording and at least one input requires a gradient, in which case
  // `out` is marked as requiring one too.
  void record(Tensor& out, std::initializer_list<const Tensor*> inputs, BackwardFn fn);
  void record(Tensor& out, const std::vector<Tensor>& inputs, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and replays the tape in exact reverse order.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  void push(Tensor& out, bool any_grad, BackwardFn fn);

  struct Node {
    Tensor out;
    BackwardFn fn;
  };
  bool record_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
};

}  // namespace limn
