#include "csdasa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace csdasa {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape_valid(const Shape& shape) {
  for (std::int64_t d : shape) {
    if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
  }
}

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> data,
                                        bool requires_grad) {
  check_shape_valid(shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                          requires_grad));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v),
                          requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  for (double v : data) {
    if (!std::isfinite(v)) throw DataError("non-finite value in tensor construction");
  }
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double v) { return Tensor::from_data({1}, {v}); }

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
std::int64_t Tensor::dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
std::int64_t Tensor::numel() const { return node_->numel(); }

std::span<const double> Tensor::data() const { return {node_->value.data(), node_->value.size()}; }

std::span<double> Tensor::mutable_data() {
  if (node_->backward) {
    throw ContractError("mutable_data() is only valid on leaf tensors");
  }
  return {node_->value.data(), node_->value.size()};
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (node_->backward) {
    throw ContractError("set_requires_grad() is only valid on leaf tensors");
  }
  node_->requires_grad = v;
  if (!v) node_->grad.clear();
}

std::span<const double> Tensor::grad() const { return {node_->grad.data(), node_->grad.size()}; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() requires a single-element tensor, got " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  const Shape& s = node_->shape;
  if (idx.size() != s.size()) throw ContractError("at(): index rank mismatch");
  std::int64_t flat = 0;
  std::size_t k = 0;
  for (std::int64_t i : idx) {
    if (i < 0 || i >= s[k]) throw ContractError("at(): index out of bounds");
    flat = flat * s[k] + i;
    ++k;
  }
  return node_->value[static_cast<std::size_t>(flat)];
}

namespace detail {

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_from_parents) {
  check_shape_valid(shape);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  for (const Tensor& p : parents) {
    if (p.requires_grad()) {
      needs = true;
      break;
    }
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const Tensor& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward_from_parents);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

GradTape::GradTape(const Tensor& root) {
  if (!root.defined()) throw ContractError("GradTape: undefined root");
  if (root.numel() != 1) {
    throw ContractError("GradTape: root must be scalar, got " + shape_str(root.shape()));
  }
  root_ = root.node();
  if (!root_->requires_grad) return;

  // Iterative post-order DFS; reversed later so consumers run before their
  // parents during accumulation.
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root_.get(), 0);
  visited.insert(root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next].get();
      ++next;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

void GradTape::backward() {
  if (order_.empty()) return;  // constant root: nothing requires grad
  for (detail::Node* n : order_) n->grad.assign(n->value.size(), 0.0);
  root_->grad[0] = 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

void backward(const Tensor& loss) {
  GradTape tape(loss);
  tape.backward();
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace {

enum class BinOp { Add, Sub, Mul };

bool is_scalar(const Tensor& t) { return t.numel() == 1; }

void accumulate_scaled(detail::Node& dst, std::span<const double> src, double s) {
  dst.ensure_grad();
  const std::size_t n = src.size();
  for (std::size_t i = 0; i < n; ++i) dst.grad[i] += s * src[i];
}

Tensor binary_ew(const Tensor& a, const Tensor& b, BinOp op) {
  const bool as = is_scalar(a), bs = is_scalar(b);
  if (!as && !bs && a.shape() != b.shape()) {
    throw DimensionError("elementwise shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const Tensor& big = bs ? a : b;
  const std::int64_t n = big.numel();
  std::vector<double> out(static_cast<std::size_t>(n));
  const auto av = a.data();
  const auto bv = b.data();
  switch (op) {
    case BinOp::Add:
      if (as && !bs)
        for (std::int64_t i = 0; i < n; ++i) out[i] = av[0] + bv[i];
      else if (bs && !as)
        for (std::int64_t i = 0; i < n; ++i) out[i] = av[i] + bv[0];
      else
        for (std::int64_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
      break;
    case BinOp::Sub:
      if (as && !bs)
        for (std::int64_t i = 0; i < n; ++i) out[i] = av[0] - bv[i];
      else if (bs && !as)
        for (std::int64_t i = 0; i < n; ++i) out[i] = av[i] - bv[0];
      else
        for (std::int64_t i = 0; i < n; ++i) out[i] = av[i] - bv[i];
      break;
    case BinOp::Mul:
      if (as && !bs)
        for (std::int64_t i = 0; i < n; ++i) out[i] = av[0] * bv[i];
      else if (bs && !as)
        for (std::int64_t i = 0; i < n; ++i) out[i] = av[i] * bv[0];
      else
        for (std::int64_t i = 0; i < n; ++i) out[i] = av[i] * bv[i];
      break;
  }

  auto an = a.node();
  auto bn = b.node();
  return detail::make_op(big.shape(), std::move(out), {a, b},
                         [an, bn, op, as, bs](detail::Node& o) {
    const auto g = std::span<const double>(o.grad.data(), o.grad.size());
    const std::size_t n = g.size();
    if (an->requires_grad) {
      an->ensure_grad();
      if (op == BinOp::Mul) {
        if (as && !bs) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) acc += g[i] * bn->value[i];
          an->grad[0] += acc;
        } else if (bs && !as) {
          for (std::size_t i = 0; i < n; ++i) an->grad[i] += g[i] * bn->value[0];
        } else {
          for (std::size_t i = 0; i < n; ++i) an->grad[i] += g[i] * bn->value[i];
        }
      } else {
        if (as && !bs) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) acc += g[i];
          an->grad[0] += acc;
        } else {
          for (std::size_t i = 0; i < n; ++i) an->grad[i] += g[i];
        }
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      const double sign = (op == BinOp::Sub) ? -1.0 : 1.0;
      if (op == BinOp::Mul) {
        if (bs && !as) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) acc += g[i] * an->value[i];
          bn->grad[0] += acc;
        } else if (as && !bs) {
          for (std::size_t i = 0; i < n; ++i) bn->grad[i] += g[i] * an->value[0];
        } else {
          for (std::size_t i = 0; i < n; ++i) bn->grad[i] += g[i] * an->value[i];
        }
      } else {
        if (bs && !as) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) acc += g[i];
          bn->grad[0] += sign * acc;
        } else {
          for (std::size_t i = 0; i < n; ++i) bn->grad[i] += sign * g[i];
        }
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_ew(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_ew(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_ew(a, b, BinOp::Mul); }

Tensor scale(const Tensor& a, double s) {
  const std::int64_t n = a.numel();
  std::vector<double> out(static_cast<std::size_t>(n));
  const auto av = a.data();
  for (std::int64_t i = 0; i < n; ++i) out[i] = s * av[i];
  auto an = a.node();
  return detail::make_op(a.shape(), std::move(out), {a}, [an, s](detail::Node& o) {
    if (an->requires_grad) accumulate_scaled(*an, {o.grad.data(), o.grad.size()}, s);
  });
}

namespace {

Tensor unary_ew(const Tensor& x, double (*f)(double),
                double (*df_from_y)(double, double)) {
  const std::int64_t n = x.numel();
  std::vector<double> out(static_cast<std::size_t>(n));
  const auto xv = x.data();
  for (std::int64_t i = 0; i < n; ++i) out[i] = f(xv[i]);
  auto xn = x.node();
  return detail::make_op(x.shape(), std::move(out), {x}, [xn, df_from_y](detail::Node& o) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const std::size_t n = o.grad.size();
    for (std::size_t i = 0; i < n; ++i) {
      xn->grad[i] += o.grad[i] * df_from_y(o.value[i], xn->value[i]);
    }
  });
}

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary_ew(x, &stable_sigmoid, [](double y, double) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_ew(
      x, [](double v) { return std::tanh(v); },
      [](double y, double) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary_ew(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double, double xin) { return xin > 0.0 ? 1.0 : 0.0; });
}

namespace {

void check_bcast0(const Tensor& x, const Tensor& w, const char* what) {
  if (x.rank() < 2 || w.rank() + 1 != x.rank() ||
      !std::equal(w.shape().begin(), w.shape().end(), x.shape().begin() + 1)) {
    throw DimensionError(std::string(what) + ": shape " + shape_str(w.shape()) +
                         " does not broadcast over " + shape_str(x.shape()));
  }
}

}  // namespace

Tensor mul_bcast0(const Tensor& x, const Tensor& w) {
  check_bcast0(x, w, "mul_bcast0");
  const std::int64_t n = x.dim(0);
  const std::int64_t inner = w.numel();
  std::vector<double> out(static_cast<std::size_t>(n * inner));
  const auto xv = x.data();
  const auto wv = w.data();
  for (std::int64_t b = 0; b < n; ++b) {
    const double* xr = xv.data() + b * inner;
    double* orow = out.data() + b * inner;
    for (std::int64_t i = 0; i < inner; ++i) orow[i] = xr[i] * wv[i];
  }
  auto xn = x.node();
  auto wn = w.node();
  return detail::make_op(x.shape(), std::move(out), {x, w},
                         [xn, wn, n, inner](detail::Node& o) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::int64_t b = 0; b < n; ++b) {
        const double* g = o.grad.data() + b * inner;
        double* dx = xn->grad.data() + b * inner;
        for (std::int64_t i = 0; i < inner; ++i) dx[i] += g[i] * wn->value[i];
      }
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      for (std::int64_t b = 0; b < n; ++b) {
        const double* g = o.grad.data() + b * inner;
        const double* xr = xn->value.data() + b * inner;
        for (std::int64_t i = 0; i < inner; ++i) wn->grad[i] += g[i] * xr[i];
      }
    }
  });
}

Tensor add_bcast0(const Tensor& x, const Tensor& b) {
  check_bcast0(x, b, "add_bcast0");
  const std::int64_t n = x.dim(0);
  const std::int64_t inner = b.numel();
  std::vector<double> out(static_cast<std::size_t>(n * inner));
  const auto xv = x.data();
  const auto bv = b.data();
  for (std::int64_t r = 0; r < n; ++r) {
    const double* xr = xv.data() + r * inner;
    double* orow = out.data() + r * inner;
    for (std::int64_t i = 0; i < inner; ++i) orow[i] = xr[i] + bv[i];
  }
  auto xn = x.node();
  auto bn = b.node();
  return detail::make_op(x.shape(), std::move(out), {x, b},
                         [xn, bn, n, inner](detail::Node& o) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      const std::size_t total = o.grad.size();
      for (std::size_t i = 0; i < total; ++i) xn->grad[i] += o.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::int64_t r = 0; r < n; ++r) {
        const double* g = o.grad.data() + r * inner;
        for (std::int64_t i = 0; i < inner; ++i) bn->grad[i] += g[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// matmul / transpose / softmax
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank()) {
    throw DimensionError("matmul: ranks must match and be >= 2, got " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  const int r = a.rank();
  for (int i = 0; i + 2 < r; ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw DimensionError("matmul: batch dims differ: " + shape_str(a.shape()) + " vs " +
                           shape_str(b.shape()));
    }
  }
  const std::int64_t m = a.dim(r - 2), k = a.dim(r - 1);
  const std::int64_t k2 = b.dim(r - 2), n = b.dim(r - 1);
  if (k != k2) {
    throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  std::int64_t batch = 1;
  for (int i = 0; i + 2 < r; ++i) batch *= a.dim(i);

  Shape out_shape(a.shape());
  out_shape[static_cast<std::size_t>(r - 1)] = n;
  std::vector<double> out(static_cast<std::size_t>(batch * m * n), 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::int64_t bt = 0; bt < batch; ++bt) {
    const double* A = av.data() + bt * m * k;
    const double* B = bv.data() + bt * k * n;
    double* C = out.data() + bt * m * n;
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const double aik = A[i * k + kk];
        const double* brow = B + kk * n;
        double* crow = C + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
      }
    }
  }

  auto an = a.node();
  auto bn = b.node();
  return detail::make_op(std::move(out_shape), std::move(out), {a, b},
                         [an, bn, batch, m, k, n](detail::Node& o) {
    // dA = dC.B^T, dB = A^T.dC
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::int64_t bt = 0; bt < batch; ++bt) {
        const double* G = o.grad.data() + bt * m * n;
        const double* B = bn->value.data() + bt * k * n;
        double* dA = an->grad.data() + bt * m * k;
        for (std::int64_t i = 0; i < m; ++i) {
          for (std::int64_t kk = 0; kk < k; ++kk) {
            const double* grow = G + i * n;
            const double* brow = B + kk * n;
            double acc = 0.0;
            for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            dA[i * k + kk] += acc;
          }
        }
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::int64_t bt = 0; bt < batch; ++bt) {
        const double* G = o.grad.data() + bt * m * n;
        const double* A = an->value.data() + bt * m * k;
        double* dB = bn->grad.data() + bt * k * n;
        for (std::int64_t i = 0; i < m; ++i) {
          const double* grow = G + i * n;
          for (std::int64_t kk = 0; kk < k; ++kk) {
            const double aik = A[i * k + kk];
            double* drow = dB + kk * n;
            for (std::int64_t j = 0; j < n; ++j) drow[j] += aik * grow[j];
          }
        }
      }
    }
  });
}

namespace {

void transpose_copy(const double* src, double* dst, std::int64_t batch, std::int64_t m,
                    std::int64_t n) {
  for (std::int64_t bt = 0; bt < batch; ++bt) {
    const double* S = src + bt * m * n;
    double* D = dst + bt * m * n;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) D[j * m + i] = S[i * n + j];
  }
}

}  // namespace

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2: rank must be >= 2");
  const int r = x.rank();
  const std::int64_t m = x.dim(r - 2), n = x.dim(r - 1);
  std::int64_t batch = 1;
  for (int i = 0; i + 2 < r; ++i) batch *= x.dim(i);
  Shape out_shape(x.shape());
  std::swap(out_shape[static_cast<std::size_t>(r - 2)], out_shape[static_cast<std::size_t>(r - 1)]);
  std::vector<double> out(x.data().size());
  transpose_copy(x.data().data(), out.data(), batch, m, n);
  auto xn = x.node();
  return detail::make_op(std::move(out_shape), std::move(out), {x},
                         [xn, batch, m, n](detail::Node& o) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    // upstream is [..,n,m]; transpose back and accumulate
    for (std::int64_t bt = 0; bt < batch; ++bt) {
      const double* G = o.grad.data() + bt * m * n;
      double* dx = xn->grad.data() + bt * m * n;
      for (std::int64_t j = 0; j < n; ++j)
        for (std::int64_t i = 0; i < m; ++i) dx[i * n + j] += G[j * m + i];
    }
  });
}

Tensor softmax_last(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("softmax_last: rank must be >= 1");
  const std::int64_t n = x.dim(x.rank() - 1);
  const std::int64_t rows = x.numel() / n;
  std::vector<double> out(x.data().size());
  const auto xv = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double* orow = out.data() + r * n;
    double mx = xr[0];
    for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, xr[i]);
    double denom = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      orow[i] = std::exp(xr[i] - mx);
      denom += orow[i];
    }
    const double inv = 1.0 / denom;
    for (std::int64_t i = 0; i < n; ++i) orow[i] *= inv;
  }
  auto xn = x.node();
  return detail::make_op(x.shape(), std::move(out), {x}, [xn, rows, n](detail::Node& o) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* y = o.value.data() + r * n;
      const double* g = o.grad.data() + r * n;
      double* dx = xn->grad.data() + r * n;
      double dot = 0.0;
      for (std::int64_t i = 0; i < n; ++i) dot += g[i] * y[i];
      for (std::int64_t i = 0; i < n; ++i) dx[i] += y[i] * (g[i] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// conv2d, zero "same" padding
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  std::int64_t n, cin, h, w, cout, k, pad;
};

ConvDims check_conv(const Tensor& input, const Tensor& kernels, const Tensor* bias) {
  if (input.rank() != 4) {
    throw DimensionError("conv2d: input must be [n,c_in,w,h], got " + shape_str(input.shape()));
  }
  if (kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3)) {
    throw DimensionError("conv2d: kernels must be [c_out,c_in,k,k], got " +
                         shape_str(kernels.shape()));
  }
  if (kernels.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: input channels " + std::to_string(input.dim(1)) +
                         " do not match kernel channels " + std::to_string(kernels.dim(1)));
  }
  const std::int64_t k = kernels.dim(2);
  if (k % 2 == 0) throw DimensionError("conv2d: kernel size must be odd for same padding");
  if (bias && (bias->rank() != 1 || bias->dim(0) != kernels.dim(0))) {
    throw DimensionError("conv2d: bias must be [c_out], got " + shape_str(bias->shape()));
  }
  return {input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernels.dim(0), k, k / 2};
}

// out[y][x] += w * in[y+dy-pad][x+dx-pad] over the valid window.
inline void conv_tap_accumulate(double* out_plane, const double* in_plane, double w,
                                std::int64_t h, std::int64_t wd, std::int64_t dy,
                                std::int64_t dx, std::int64_t pad) {
  const std::int64_t y0 = std::max<std::int64_t>(0, pad - dy);
  const std::int64_t y1 = std::min<std::int64_t>(h, h + pad - dy);
  const std::int64_t x0 = std::max<std::int64_t>(0, pad - dx);
  const std::int64_t x1 = std::min<std::int64_t>(wd, wd + pad - dx);
  for (std::int64_t y = y0; y < y1; ++y) {
    const double* irow = in_plane + (y + dy - pad) * wd + (dx - pad);
    double* orow = out_plane + y * wd;
    for (std::int64_t x = x0; x < x1; ++x) orow[x] += w * irow[x];
  }
}

// transposed tap: in_grad[y+dy-pad][x+dx-pad] += w * out_grad[y][x]
inline void conv_tap_scatter(double* in_grad_plane, const double* out_grad_plane, double w,
                             std::int64_t h, std::int64_t wd, std::int64_t dy, std::int64_t dx,
                             std::int64_t pad) {
  const std::int64_t y0 = std::max<std::int64_t>(0, pad - dy);
  const std::int64_t y1 = std::min<std::int64_t>(h, h + pad - dy);
  const std::int64_t x0 = std::max<std::int64_t>(0, pad - dx);
  const std::int64_t x1 = std::min<std::int64_t>(wd, wd + pad - dx);
  for (std::int64_t y = y0; y < y1; ++y) {
    double* irow = in_grad_plane + (y + dy - pad) * wd + (dx - pad);
    const double* orow = out_grad_plane + y * wd;
    for (std::int64_t x = x0; x < x1; ++x) irow[x] += w * orow[x];
  }
}

inline double conv_tap_dot(const double* out_grad_plane, const double* in_plane, std::int64_t h,
                           std::int64_t wd, std::int64_t dy, std::int64_t dx, std::int64_t pad) {
  const std::int64_t y0 = std::max<std::int64_t>(0, pad - dy);
  const std::int64_t y1 = std::min<std::int64_t>(h, h + pad - dy);
  const std::int64_t x0 = std::max<std::int64_t>(0, pad - dx);
  const std::int64_t x1 = std::min<std::int64_t>(wd, wd + pad - dx);
  double acc = 0.0;
  for (std::int64_t y = y0; y < y1; ++y) {
    const double* irow = in_plane + (y + dy - pad) * wd + (dx - pad);
    const double* orow = out_grad_plane + y * wd;
    for (std::int64_t x = x0; x < x1; ++x) acc += orow[x] * irow[x];
  }
  return acc;
}

Tensor conv2d_impl(const Tensor& input, const Tensor& kernels, const Tensor* bias) {
  const ConvDims d = check_conv(input, kernels, bias);
  const std::int64_t plane = d.h * d.w;
  std::vector<double> out(static_cast<std::size_t>(d.n * d.cout * plane), 0.0);
  const double* in = input.data().data();
  const double* ker = kernels.data().data();
  const double* bs = bias ? bias->data().data() : nullptr;

  for (std::int64_t b = 0; b < d.n; ++b) {
    for (std::int64_t co = 0; co < d.cout; ++co) {
      double* out_plane = out.data() + (b * d.cout + co) * plane;
      if (bs) {
        const double bval = bs[co];
        for (std::int64_t i = 0; i < plane; ++i) out_plane[i] = bval;
      }
      for (std::int64_t ci = 0; ci < d.cin; ++ci) {
        const double* in_plane = in + (b * d.cin + ci) * plane;
        const double* kslice = ker + (co * d.cin + ci) * d.k * d.k;
        for (std::int64_t dy = 0; dy < d.k; ++dy)
          for (std::int64_t dx = 0; dx < d.k; ++dx)
            conv_tap_accumulate(out_plane, in_plane, kslice[dy * d.k + dx], d.h, d.w, dy, dx,
                                d.pad);
      }
    }
  }

  std::vector<Tensor> parents{input, kernels};
  if (bias) parents.push_back(*bias);
  auto in_n = input.node();
  auto k_n = kernels.node();
  auto b_n = bias ? bias->node() : nullptr;
  Shape out_shape{d.n, d.cout, d.h, d.w};
  return detail::make_op(std::move(out_shape), std::move(out), std::move(parents),
                         [in_n, k_n, b_n, d, plane](detail::Node& o) {
    const double* gout = o.grad.data();
    if (in_n->requires_grad) {
      in_n->ensure_grad();
      for (std::int64_t b = 0; b < d.n; ++b) {
        for (std::int64_t co = 0; co < d.cout; ++co) {
          const double* gplane = gout + (b * d.cout + co) * plane;
          for (std::int64_t ci = 0; ci < d.cin; ++ci) {
            double* din_plane = in_n->grad.data() + (b * d.cin + ci) * plane;
            const double* kslice = k_n->value.data() + (co * d.cin + ci) * d.k * d.k;
            for (std::int64_t dy = 0; dy < d.k; ++dy)
              for (std::int64_t dx = 0; dx < d.k; ++dx)
                conv_tap_scatter(din_plane, gplane, kslice[dy * d.k + dx], d.h, d.w, dy, dx,
                                 d.pad);
          }
        }
      }
    }
    if (k_n->requires_grad) {
      k_n->ensure_grad();
      for (std::int64_t b = 0; b < d.n; ++b) {
        for (std::int64_t co = 0; co < d.cout; ++co) {
          const double* gplane = gout + (b * d.cout + co) * plane;
          for (std::int64_t ci = 0; ci < d.cin; ++ci) {
            const double* in_plane = in_n->value.data() + (b * d.cin + ci) * plane;
            double* dk = k_n->grad.data() + (co * d.cin + ci) * d.k * d.k;
            for (std::int64_t dy = 0; dy < d.k; ++dy)
              for (std::int64_t dx = 0; dx < d.k; ++dx)
                dk[dy * d.k + dx] += conv_tap_dot(gplane, in_plane, d.h, d.w, dy, dx, d.pad);
          }
        }
      }
    }
    if (b_n && b_n->requires_grad) {
      b_n->ensure_grad();
      for (std::int64_t b = 0; b < d.n; ++b) {
        for (std::int64_t co = 0; co < d.cout; ++co) {
          const double* gplane = gout + (b * d.cout + co) * plane;
          double acc = 0.0;
          for (std::int64_t i = 0; i < plane; ++i) acc += gplane[i];
          b_n->grad[static_cast<std::size_t>(co)] += acc;
        }
      }
    }
  });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  return conv2d_impl(input, kernels, &bias);
}

Tensor conv2d(const Tensor& input, const Tensor& kernels) {
  return conv2d_impl(input, kernels, nullptr);
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  check_shape_valid(shape);
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto xn = x.node();
  return detail::make_op(std::move(shape), std::move(out), {x}, [xn](detail::Node& o) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
  });
}

namespace {

void check_axis1(const Tensor& x, const char* what) {
  if (x.rank() < 2) throw DimensionError(std::string(what) + ": rank must be >= 2");
}

}  // namespace

Tensor concat_axis1(const Tensor& a, const Tensor& b) {
  check_axis1(a, "concat_axis1");
  check_axis1(b, "concat_axis1");
  if (a.rank() != b.rank() || a.dim(0) != b.dim(0)) {
    throw DimensionError("concat_axis1: shapes do not chain: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  for (int i = 2; i < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw DimensionError("concat_axis1: shapes do not chain: " + shape_str(a.shape()) +
                           " vs " + shape_str(b.shape()));
    }
  }
  const std::int64_t n = a.dim(0);
  std::int64_t inner = 1;
  for (int i = 2; i < a.rank(); ++i) inner *= a.dim(i);
  const std::int64_t ca = a.dim(1), cb = b.dim(1);
  Shape out_shape(a.shape());
  out_shape[1] = ca + cb;
  std::vector<double> out(static_cast<std::size_t>(n * (ca + cb) * inner));
  const auto av = a.data();
  const auto bv = b.data();
  for (std::int64_t r = 0; r < n; ++r) {
    std::copy_n(av.data() + r * ca * inner, ca * inner, out.data() + r * (ca + cb) * inner);
    std::copy_n(bv.data() + r * cb * inner, cb * inner,
                out.data() + r * (ca + cb) * inner + ca * inner);
  }
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op(std::move(out_shape), std::move(out), {a, b},
                         [an, bn, n, ca, cb, inner](detail::Node& o) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::int64_t r = 0; r < n; ++r) {
        const double* g = o.grad.data() + r * (ca + cb) * inner;
        double* da = an->grad.data() + r * ca * inner;
        for (std::int64_t i = 0; i < ca * inner; ++i) da[i] += g[i];
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::int64_t r = 0; r < n; ++r) {
        const double* g = o.grad.data() + r * (ca + cb) * inner + ca * inner;
        double* db = bn->grad.data() + r * cb * inner;
        for (std::int64_t i = 0; i < cb * inner; ++i) db[i] += g[i];
      }
    }
  });
}

Tensor slice_axis1(const Tensor& x, std::int64_t i0, std::int64_t i1) {
  check_axis1(x, "slice_axis1");
  const std::int64_t c = x.dim(1);
  if (i0 < 0 || i1 > c || i0 >= i1) {
    throw DimensionError("slice_axis1: invalid range [" + std::to_string(i0) + "," +
                         std::to_string(i1) + ") for extent " + std::to_string(c));
  }
  const std::int64_t n = x.dim(0);
  std::int64_t inner = 1;
  for (int i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  const std::int64_t cs = i1 - i0;
  Shape out_shape(x.shape());
  out_shape[1] = cs;
  std::vector<double> out(static_cast<std::size_t>(n * cs * inner));
  const auto xv = x.data();
  for (std::int64_t r = 0; r < n; ++r) {
    std::copy_n(xv.data() + (r * c + i0) * inner, cs * inner, out.data() + r * cs * inner);
  }
  auto xn = x.node();
  return detail::make_op(std::move(out_shape), std::move(out), {x},
                         [xn, n, c, i0, cs, inner](detail::Node& o) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::int64_t r = 0; r < n; ++r) {
      const double* g = o.grad.data() + r * cs * inner;
      double* dx = xn->grad.data() + (r * c + i0) * inner;
      for (std::int64_t i = 0; i < cs * inner; ++i) dx[i] += g[i];
    }
  });
}

Tensor select_axis1(const Tensor& x, std::int64_t t_idx) {
  check_axis1(x, "select_axis1");
  if (t_idx < 0 || t_idx >= x.dim(1)) {
    throw DimensionError("select_axis1: index " + std::to_string(t_idx) + " out of range for " +
                         shape_str(x.shape()));
  }
  Tensor sl = slice_axis1(x, t_idx, t_idx + 1);
  Shape out_shape;
  out_shape.push_back(x.dim(0));
  for (int i = 2; i < x.rank(); ++i) out_shape.push_back(x.dim(i));
  return reshape(sl, std::move(out_shape));
}

Tensor stack_axis1(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw DimensionError("stack_axis1: empty input");
  const Shape& s0 = xs[0].shape();
  for (const Tensor& x : xs) {
    if (x.shape() != s0) throw DimensionError("stack_axis1: shapes differ");
  }
  const std::int64_t n = s0[0];
  const std::int64_t t = static_cast<std::int64_t>(xs.size());
  std::int64_t inner = 1;
  for (std::size_t i = 1; i < s0.size(); ++i) inner *= s0[i];
  Shape out_shape;
  out_shape.push_back(n);
  out_shape.push_back(t);
  for (std::size_t i = 1; i < s0.size(); ++i) out_shape.push_back(s0[i]);
  std::vector<double> out(static_cast<std::size_t>(n * t * inner));
  for (std::int64_t ti = 0; ti < t; ++ti) {
    const auto xv = xs[static_cast<std::size_t>(ti)].data();
    for (std::int64_t r = 0; r < n; ++r) {
      std::copy_n(xv.data() + r * inner, inner, out.data() + (r * t + ti) * inner);
    }
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  nodes.reserve(xs.size());
  for (const Tensor& x : xs) nodes.push_back(x.node());
  return detail::make_op(std::move(out_shape), std::move(out), xs,
                         [nodes, n, t, inner](detail::Node& o) {
    for (std::int64_t ti = 0; ti < t; ++ti) {
      auto& xn = nodes[static_cast<std::size_t>(ti)];
      if (!xn->requires_grad) continue;
      xn->ensure_grad();
      for (std::int64_t r = 0; r < n; ++r) {
        const double* g = o.grad.data() + (r * t + ti) * inner;
        double* dx = xn->grad.data() + r * inner;
        for (std::int64_t i = 0; i < inner; ++i) dx[i] += g[i];
      }
    }
  });
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  auto xn = x.node();
  return detail::make_op({1}, {acc}, {x}, [xn](detail::Node& o) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const double g = o.grad[0];
    for (double& d : xn->grad) d += g;
  });
}

Tensor mean_all(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  acc *= inv;
  auto xn = x.node();
  return detail::make_op({1}, {acc}, {x}, [xn, inv](detail::Node& o) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const double g = o.grad[0] * inv;
    for (double& d : xn->grad) d += g;
  });
}

}  // namespace csdasa
