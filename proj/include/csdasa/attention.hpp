#pragma once

#include "csdasa/tensor.hpp"

namespace csdasa {

// Subject-to-subject spatial attention over flattened spatial positions.
// Feature maps [c,w,h] (or batched [n,c,w,h]) flatten to [c,L] with L = w*h;
// the attention matrix is L x L and row-stochastic: row i is source position
// i's distribution over target positions.

// [..,c,w,h] -> [..,c,L], row-major: element (c,i,j) lands at column i*h+j.
Tensor flatten_spatial(const Tensor& f);
Tensor unflatten_spatial(const Tensor& f, std::int64_t w, std::int64_t h);

// softmax over rows of F_S^T . F_T. Accepts [c,L] or [n,c,L]; returns [L,L]
// or [n,L,L].
Tensor attention_matrix(const Tensor& f_s, const Tensor& f_t);

// Attended features: position i becomes the A-row-i weighted mix of the
// input positions, i.e. out = F . A^T. Row-stochastic rows make every output
// position a convex combination of input positions, and A = I is a no-op.
Tensor apply_attention(const Tensor& f, const Tensor& a);

// [F, F_att] concatenated along channels: [..,c,w,h] x2 -> [..,2c,w,h],
// original features first.
Tensor attended_concat(const Tensor& f2d, const Tensor& f_att);

}  // namespace csdasa
