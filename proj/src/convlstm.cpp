#include "csdasa/convlstm.hpp"

#include <cmath>
#include <string>

namespace csdasa {

namespace {

Tensor glorot_conv(std::int64_t cout, std::int64_t cin, std::int64_t k, Rng& rng,
                   bool trainable) {
  const double limit = std::sqrt(6.0 / static_cast<double>((cin + cout) * k * k));
  std::vector<double> data(static_cast<std::size_t>(cout * cin * k * k));
  for (double& v : data) v = rng.uniform(-limit, limit);
  return Tensor::from_data({cout, cin, k, k}, std::move(data), trainable);
}

}  // namespace

ConvLSTMCellParams ConvLSTMCellParams::init(std::int64_t in_channels, std::int64_t hidden,
                                            std::int64_t kernel, std::int64_t w, std::int64_t h,
                                            Rng& rng, bool trainable) {
  ConvLSTMCellParams p;
  p.w_ix = glorot_conv(hidden, in_channels, kernel, rng, trainable);
  p.w_ih = glorot_conv(hidden, hidden, kernel, rng, trainable);
  p.w_fx = glorot_conv(hidden, in_channels, kernel, rng, trainable);
  p.w_fh = glorot_conv(hidden, hidden, kernel, rng, trainable);
  p.w_ox = glorot_conv(hidden, in_channels, kernel, rng, trainable);
  p.w_oh = glorot_conv(hidden, hidden, kernel, rng, trainable);
  p.w_gx = glorot_conv(hidden, in_channels, kernel, rng, trainable);
  p.w_gh = glorot_conv(hidden, hidden, kernel, rng, trainable);
  p.w_ic = Tensor::zeros({hidden, w, h}, trainable);
  p.w_fc = Tensor::zeros({hidden, w, h}, trainable);
  p.w_oc = Tensor::zeros({hidden, w, h}, trainable);
  p.b_i = Tensor::zeros({hidden}, trainable);
  p.b_f = Tensor::full({hidden}, 1.0, trainable);  // open forget gate at init
  p.b_o = Tensor::zeros({hidden}, trainable);
  p.b_g = Tensor::zeros({hidden}, trainable);
  return p;
}

std::vector<Tensor> ConvLSTMCellParams::parameters() const {
  return {w_ix, w_ih, w_fx, w_fh, w_ox, w_oh, w_gx, w_gh, w_ic, w_fc, w_oc, b_i, b_f, b_o, b_g};
}

void ConvLSTMCellParams::set_frozen(bool frozen) {
  for (Tensor p : parameters()) p.set_requires_grad(!frozen);
}

ConvLSTMState ConvLSTMState::zero(std::int64_t n, std::int64_t hidden, std::int64_t w,
                                  std::int64_t h) {
  return {Tensor::zeros({n, hidden, w, h}), Tensor::zeros({n, hidden, w, h})};
}

ConvLSTMState cell_step(const Tensor& x, const ConvLSTMState& prev,
                        const ConvLSTMCellParams& params) {
  if (x.rank() != 4) {
    throw DimensionError("cell_step: input must be [n,c_in,w,h], got " + shape_str(x.shape()));
  }
  if (prev.h.shape() != prev.c.shape()) {
    throw DimensionError("cell_step: inconsistent state shapes");
  }
  const Tensor& c_prev = prev.c;

  Tensor i_gate = sigmoid(add(add(conv2d(x, params.w_ix, params.b_i), conv2d(prev.h, params.w_ih)),
                              mul_bcast0(c_prev, params.w_ic)));
  Tensor f_gate = sigmoid(add(add(conv2d(x, params.w_fx, params.b_f), conv2d(prev.h, params.w_fh)),
                              mul_bcast0(c_prev, params.w_fc)));
  Tensor o_gate = sigmoid(add(add(conv2d(x, params.w_ox, params.b_o), conv2d(prev.h, params.w_oh)),
                              mul_bcast0(c_prev, params.w_oc)));
  Tensor g = tanh(add(conv2d(x, params.w_gx, params.b_g), conv2d(prev.h, params.w_gh)));
  Tensor c_next = add(mul(f_gate, c_prev), mul(i_gate, g));
  Tensor h_next = mul(o_gate, tanh(c_next));
  return {h_next, c_next};
}

Tensor layer_forward(const Tensor& seq, const ConvLSTMCellParams& params) {
  if (seq.rank() != 5) {
    throw DimensionError("layer_forward: sequence must be [n,t,c_in,w,h], got " +
                         shape_str(seq.shape()));
  }
  const std::int64_t n = seq.dim(0), t = seq.dim(1), w = seq.dim(3), h = seq.dim(4);
  if (t < 1) throw DataError("layer_forward: empty sequence");

  ConvLSTMState state = ConvLSTMState::zero(n, params.hidden_channels(), w, h);
  std::vector<Tensor> hidden;
  hidden.reserve(static_cast<std::size_t>(t));
  for (std::int64_t ti = 0; ti < t; ++ti) {
    state = cell_step(select_axis1(seq, ti), state, params);
    hidden.push_back(state.h);
  }
  return stack_axis1(hidden);
}

Tensor stack_forward(const Tensor& seq, const std::vector<ConvLSTMCellParams>& layers) {
  if (layers.empty()) throw ConfigError("stack_forward: no layers");
  Tensor cur = seq;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (cur.dim(2) != layers[i].w_ix.dim(1)) {
      throw ConfigError("stack_forward: layer " + std::to_string(i) + " expects " +
                        std::to_string(layers[i].w_ix.dim(1)) + " channels, got " +
                        std::to_string(cur.dim(2)));
    }
    cur = layer_forward(cur, layers[i]);
  }
  return cur;
}

void set_frozen(std::vector<ConvLSTMCellParams>& layers, bool frozen) {
  for (auto& layer : layers) layer.set_frozen(frozen);
}

}  // namespace csdasa
