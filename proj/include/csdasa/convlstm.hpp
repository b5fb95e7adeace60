#pragma once

#include <vector>

#include "csdasa/rng.hpp"
#include "csdasa/tensor.hpp"

namespace csdasa {

// One ConvLSTM cell. Gates are convolutions over the input and previous
// hidden state plus element-wise peephole terms on the previous cell state:
//   i = sigma(W_ix*x + W_ih*h + W_ic.c + b_i)
//   f = sigma(W_fx*x + W_fh*h + W_fc.c + b_f)
//   o = sigma(W_ox*x + W_oh*h + W_oc.c + b_o)
//   g = tanh (W_gx*x + W_gh*h + b_g)
//   c' = f.c + i.g,  h' = o.tanh(c')
// Peephole weights are per-element maps over [hidden,w,h]; the output gate
// peephole reads the *previous* cell state.
struct ConvLSTMCellParams {
  Tensor w_ix, w_ih, w_fx, w_fh, w_ox, w_oh, w_gx, w_gh;  // [hid,cin|hid,k,k]
  Tensor w_ic, w_fc, w_oc;                                // [hid,w,h]
  Tensor b_i, b_f, b_o, b_g;                              // [hid]

  // Glorot-uniform kernels, zero biases and peepholes, forget bias +1.
  static ConvLSTMCellParams init(std::int64_t in_channels, std::int64_t hidden,
                                 std::int64_t kernel, std::int64_t w, std::int64_t h, Rng& rng,
                                 bool trainable = true);

  std::int64_t hidden_channels() const { return w_ix.dim(0); }
  std::vector<Tensor> parameters() const;
  void set_frozen(bool frozen);
};

struct ConvLSTMState {
  Tensor h;  // [n,hid,w,h]
  Tensor c;

  static ConvLSTMState zero(std::int64_t n, std::int64_t hidden, std::int64_t w, std::int64_t h);
};

ConvLSTMState cell_step(const Tensor& x, const ConvLSTMState& prev,
                        const ConvLSTMCellParams& params);

// Applies cell_step across time from a zero initial state; seq is
// [n,t,c_in,w,h] and the result is the full hidden sequence [n,t,hid,w,h].
Tensor layer_forward(const Tensor& seq, const ConvLSTMCellParams& params);

// Layer i consumes layer i-1's full hidden sequence.
Tensor stack_forward(const Tensor& seq, const std::vector<ConvLSTMCellParams>& layers);

void set_frozen(std::vector<ConvLSTMCellParams>& layers, bool frozen);

}  // namespace csdasa
