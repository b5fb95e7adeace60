#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "csdasa/errors.hpp"

namespace csdasa {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  // Gradient buffer, allocated lazily by GradTape::backward. Empty means
  // "no gradient has been produced", which readers treat as zero.
  std::vector<double> grad;
  // Parents and the backward closure exist only on op nodes that sit on a
  // differentiable path; constant subgraphs carry values alone.
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major float64 tensor with reverse-mode differentiation. Values are
// immutable once produced by an op; leaves expose mutable_data() so loaders
// and the optimizer can update parameters between forward passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  // Validates finiteness: parameter/input tensors must not carry NaN or Inf.
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  std::int64_t dim(int i) const;
  std::int64_t numel() const;

  std::span<const double> data() const;
  // Leaf access for parameter updates and deserialization. Calling this on an
  // op node would invalidate recorded gradients, so it is rejected.
  std::span<double> mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool v);

  // Accumulated gradient after GradTape::backward; empty when the tensor was
  // not reached (frozen or constant), which readers must treat as zero.
  std::span<const double> grad() const;

  double item() const;
  double at(std::initializer_list<std::int64_t> idx) const;

  // Identity of the underlying node; stable across parameter mutation.
  const void* id() const { return node_.get(); }

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Records the op DAG reachable from a scalar root and runs reverse-mode
// accumulation over it. Construction walks the graph once; backward() zeroes
// the recorded gradients and refills them, so each call yields fresh
// gradients for every requires_grad tensor reachable from the root.
class GradTape {
 public:
  explicit GradTape(const Tensor& root);
  void backward();
  std::size_t node_count() const { return order_.size(); }

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<detail::Node*> order_;  // topological, root last
};

// Convenience: build the tape and run it.
void backward(const Tensor& loss);

// ---- elementwise ----
// Shapes must match exactly, except that a size-1 tensor broadcasts against
// anything (scalar broadcast). General broadcasting is intentionally absent.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);

// x: [n, d...], w: [d...] broadcast over the leading axis. Used for peephole
// weights and bias rows.
Tensor mul_bcast0(const Tensor& x, const Tensor& w);
Tensor add_bcast0(const Tensor& x, const Tensor& b);

// ---- linear algebra ----
// Batched matrix product: a [..,m,k] x b [..,k,n] -> [..,m,n]; leading dims
// must match exactly.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);

// Softmax over the last axis, max-subtracted for stability.
Tensor softmax_last(const Tensor& x);

// ---- convolution ----
// input [n,c_in,w,h], kernels [c_out,c_in,k,k] with k odd, optional bias
// [c_out]; zero "same" padding so the spatial extent is preserved.
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias);
Tensor conv2d(const Tensor& input, const Tensor& kernels);

// ---- shape ops ----
Tensor reshape(const Tensor& x, Shape shape);
// Concatenate along axis 1 (channels); all other extents must match.
Tensor concat_axis1(const Tensor& a, const Tensor& b);
// Slice [i0,i1) along axis 1.
Tensor slice_axis1(const Tensor& x, std::int64_t i0, std::int64_t i1);
// x [n,t,...] -> element at time index t_idx: [n,...].
Tensor select_axis1(const Tensor& x, std::int64_t t_idx);
// Stack equal-shaped [n,...] tensors into [n,t,...].
Tensor stack_axis1(const std::vector<Tensor>& xs);

// ---- reductions ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

namespace detail {
// Shared op-node factory. The backward closure reads out.grad and accumulates
// into whichever parents require grad; it is dropped entirely when no parent
// does, so constant subgraphs are freed eagerly.
Tensor make_op(Shape shape, std::vector<double> value,
               std::vector<Tensor> parents,
               std::function<void(Node&)> backward_from_parents);
}  // namespace detail

}  // namespace csdasa
