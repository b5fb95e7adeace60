#include "csdasa/attention.hpp"

namespace csdasa {

namespace {

// attention ops accept single samples [c,..] or batches [n,c,..]; singles are
// lifted to a batch of one and squeezed back.
struct Lift {
  Tensor batched;
  bool was_single;
};

Lift lift(const Tensor& x, int single_rank, const char* what) {
  if (x.rank() == single_rank) {
    Shape s;
    s.push_back(1);
    for (std::int64_t d : x.shape()) s.push_back(d);
    return {reshape(x, std::move(s)), true};
  }
  if (x.rank() == single_rank + 1) return {x, false};
  throw DimensionError(std::string(what) + ": unexpected rank for " + shape_str(x.shape()));
}

Tensor squeeze0(const Tensor& x) {
  Shape s(x.shape().begin() + 1, x.shape().end());
  return reshape(x, std::move(s));
}

}  // namespace

Tensor flatten_spatial(const Tensor& f) {
  if (f.rank() != 3 && f.rank() != 4) {
    throw DimensionError("flatten_spatial: expected [c,w,h] or [n,c,w,h], got " +
                         shape_str(f.shape()));
  }
  const int r = f.rank();
  Shape s(f.shape().begin(), f.shape().end() - 2);
  s.push_back(f.dim(r - 2) * f.dim(r - 1));
  return reshape(f, std::move(s));
}

Tensor unflatten_spatial(const Tensor& f, std::int64_t w, std::int64_t h) {
  if (f.rank() != 2 && f.rank() != 3) {
    throw DimensionError("unflatten_spatial: expected [c,L] or [n,c,L], got " +
                         shape_str(f.shape()));
  }
  const int r = f.rank();
  if (f.dim(r - 1) != w * h) {
    throw DimensionError("unflatten_spatial: L=" + std::to_string(f.dim(r - 1)) +
                         " does not factor as " + std::to_string(w) + "x" + std::to_string(h));
  }
  Shape s(f.shape().begin(), f.shape().end() - 1);
  s.push_back(w);
  s.push_back(h);
  return reshape(f, std::move(s));
}

Tensor attention_matrix(const Tensor& f_s, const Tensor& f_t) {
  auto ls = lift(f_s, 2, "attention_matrix");
  auto lt = lift(f_t, 2, "attention_matrix");
  if (ls.batched.shape() != lt.batched.shape()) {
    throw DimensionError("attention_matrix: feature shapes differ: " + shape_str(f_s.shape()) +
                         " vs " + shape_str(f_t.shape()));
  }
  Tensor scores = matmul(transpose_last2(ls.batched), lt.batched);  // [n,L,L]
  Tensor a = softmax_last(scores);
  return ls.was_single && lt.was_single ? squeeze0(a) : a;
}

Tensor apply_attention(const Tensor& f, const Tensor& a) {
  auto lf = lift(f, 2, "apply_attention");
  auto la = lift(a, 2, "apply_attention");
  const std::int64_t l = lf.batched.dim(2);
  if (la.batched.dim(1) != l || la.batched.dim(2) != l ||
      la.batched.dim(0) != lf.batched.dim(0)) {
    throw DimensionError("apply_attention: shapes do not chain: " + shape_str(f.shape()) +
                         " with " + shape_str(a.shape()));
  }
  // contract over A's normalized (row) axis: out[:,i] = sum_j F[:,j] A[i,j]
  Tensor out = matmul(lf.batched, transpose_last2(la.batched));
  return lf.was_single ? squeeze0(out) : out;
}

Tensor attended_concat(const Tensor& f2d, const Tensor& f_att) {
  auto la = lift(f2d, 3, "attended_concat");
  auto lb = lift(f_att, 3, "attended_concat");
  if (la.batched.shape() != lb.batched.shape()) {
    throw DimensionError("attended_concat: shapes differ: " + shape_str(f2d.shape()) + " vs " +
                         shape_str(f_att.shape()));
  }
  Tensor out = concat_axis1(la.batched, lb.batched);
  return la.was_single ? squeeze0(out) : out;
}

}  // namespace csdasa
