#include <doctest.h>

#include <cmath>
#include <vector>

#include "csdasa/adam.hpp"
#include "csdasa/convlstm.hpp"
#include "csdasa/grad_check.hpp"
#include "csdasa/losses.hpp"
#include "csdasa/rng.hpp"
#include "csdasa/tensor.hpp"

using namespace csdasa;

namespace {

// ---------------------------------------------------------------------------
// Straight-line re-implementation of the cell equations, independent of the
// tensor library: plain buffers, its own convolution and activations.
// ---------------------------------------------------------------------------

struct OracleBuf {
  std::vector<double> v;
  std::int64_t c, h, w;  // [c,h,w], batch handled outside

  double& at(std::int64_t ci, std::int64_t y, std::int64_t x) {
    return v[static_cast<std::size_t>((ci * h + y) * w + x)];
  }
  double get(std::int64_t ci, std::int64_t y, std::int64_t x) const {
    return v[static_cast<std::size_t>((ci * h + y) * w + x)];
  }
};

OracleBuf make_buf(std::int64_t c, std::int64_t h, std::int64_t w) {
  return {std::vector<double>(static_cast<std::size_t>(c * h * w), 0.0), c, h, w};
}

// same-padded cross-correlation, one kernel tensor [cout,cin,k,k]
OracleBuf oracle_conv(const OracleBuf& in, const std::vector<double>& ker, std::int64_t cout,
                      std::int64_t k) {
  OracleBuf out = make_buf(cout, in.h, in.w);
  const std::int64_t pad = k / 2;
  for (std::int64_t co = 0; co < cout; ++co)
    for (std::int64_t y = 0; y < in.h; ++y)
      for (std::int64_t x = 0; x < in.w; ++x) {
        double acc = 0.0;
        for (std::int64_t ci = 0; ci < in.c; ++ci)
          for (std::int64_t dy = 0; dy < k; ++dy)
            for (std::int64_t dx = 0; dx < k; ++dx) {
              const std::int64_t yy = y + dy - pad, xx = x + dx - pad;
              if (yy < 0 || yy >= in.h || xx < 0 || xx >= in.w) continue;
              acc += in.get(ci, yy, xx) *
                     ker[static_cast<std::size_t>(((co * in.c + ci) * k + dy) * k + dx)];
            }
        out.at(co, y, x) = acc;
      }
  return out;
}

double osig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct OracleState {
  OracleBuf h, c;
};

// One cell step per the gate equations, for a single sample.
OracleState oracle_cell_step(const OracleBuf& x, const OracleState& prev,
                             const ConvLSTMCellParams& p) {
  const std::int64_t hid = p.hidden_channels();
  const std::int64_t k = p.w_ix.dim(2);
  auto kv = [](const Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); };

  OracleBuf ix = oracle_conv(x, kv(p.w_ix), hid, k), ih = oracle_conv(prev.h, kv(p.w_ih), hid, k);
  OracleBuf fx = oracle_conv(x, kv(p.w_fx), hid, k), fh = oracle_conv(prev.h, kv(p.w_fh), hid, k);
  OracleBuf ox = oracle_conv(x, kv(p.w_ox), hid, k), oh = oracle_conv(prev.h, kv(p.w_oh), hid, k);
  OracleBuf gx = oracle_conv(x, kv(p.w_gx), hid, k), gh = oracle_conv(prev.h, kv(p.w_gh), hid, k);

  OracleState next{make_buf(hid, x.h, x.w), make_buf(hid, x.h, x.w)};
  for (std::int64_t c = 0; c < hid; ++c)
    for (std::int64_t y = 0; y < x.h; ++y)
      for (std::int64_t xx = 0; xx < x.w; ++xx) {
        const double cp = prev.c.get(c, y, xx);
        const double wic = p.w_ic.at({c, y, xx});
        const double wfc = p.w_fc.at({c, y, xx});
        const double woc = p.w_oc.at({c, y, xx});
        const double i = osig(ix.get(c, y, xx) + ih.get(c, y, xx) + wic * cp + p.b_i.at({c}));
        const double f = osig(fx.get(c, y, xx) + fh.get(c, y, xx) + wfc * cp + p.b_f.at({c}));
        const double o = osig(ox.get(c, y, xx) + oh.get(c, y, xx) + woc * cp + p.b_o.at({c}));
        const double g = std::tanh(gx.get(c, y, xx) + gh.get(c, y, xx) + p.b_g.at({c}));
        const double cn = f * cp + i * g;
        next.c.at(c, y, xx) = cn;
        next.h.at(c, y, xx) = o * std::tanh(cn);
      }
  return next;
}

ConvLSTMCellParams random_params(std::int64_t cin, std::int64_t hid, std::int64_t k,
                                 std::int64_t w, std::int64_t h, Rng& rng) {
  ConvLSTMCellParams p = ConvLSTMCellParams::init(cin, hid, k, w, h, rng);
  // randomize peepholes and biases too so the oracle covers every term
  for (Tensor t : {p.w_ic, p.w_fc, p.w_oc, p.b_i, p.b_f, p.b_o, p.b_g}) {
    auto d = t.mutable_data();
    for (double& v : d) v = 0.5 * rng.normal();
  }
  return p;
}

Tensor random_input(Shape shape, Rng& rng) {
  std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
  for (double& v : data) v = rng.normal();
  return Tensor::from_data(std::move(shape), std::move(data));
}

ConvLSTMCellParams zero_params(std::int64_t cin, std::int64_t hid, std::int64_t k, std::int64_t w,
                               std::int64_t h) {
  Rng rng(0);
  ConvLSTMCellParams p = ConvLSTMCellParams::init(cin, hid, k, w, h, rng);
  for (Tensor t : p.parameters()) {
    auto d = t.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
  return p;
}

}  // namespace

TEST_SUITE("convlstm") {

TEST_CASE("zero parameters: closed form c' = 0.5 c, h' = 0.5 tanh(0.5 c)") {
  const std::int64_t n = 2, hid = 3, w = 4, h = 4;
  ConvLSTMCellParams p = zero_params(2, hid, 3, w, h);
  Rng rng(5);
  Tensor x = random_input({n, 2, w, h}, rng);
  Tensor c0 = random_input({n, hid, w, h}, rng);
  ConvLSTMState prev{Tensor::zeros({n, hid, w, h}), c0};
  ConvLSTMState next = cell_step(x, prev, p);
  for (std::size_t i = 0; i < next.c.data().size(); ++i) {
    const double c0v = c0.data()[i];
    CHECK(next.c.data()[i] == doctest::Approx(0.5 * c0v).epsilon(1e-15));
    CHECK(next.h.data()[i] == doctest::Approx(0.5 * std::tanh(0.5 * c0v)).epsilon(1e-15));
  }
}

TEST_CASE("saturated forget gate preserves the (zero) cell state") {
  const std::int64_t n = 1, hid = 2, w = 3, h = 3;
  ConvLSTMCellParams p = zero_params(1, hid, 3, w, h);
  {
    auto d = p.b_f.mutable_data();
    std::fill(d.begin(), d.end(), 30.0);
  }
  Tensor x = Tensor::zeros({n, 1, w, h});
  ConvLSTMState prev = ConvLSTMState::zero(n, hid, w, h);
  ConvLSTMState next = cell_step(x, prev, p);
  for (std::size_t i = 0; i < next.c.data().size(); ++i) {
    CHECK(next.c.data()[i] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::fabs(next.h.data()[i]) < 1.0);
  }
}

TEST_CASE("cell_step matches the straight-line oracle") {
  Rng rng(11);
  for (int rep = 0; rep < 6; ++rep) {
    const std::int64_t hid = 2, w = 4, h = 4, cin = 3;
    ConvLSTMCellParams p = random_params(cin, hid, 3, w, h, rng);
    Tensor x = random_input({1, cin, w, h}, rng);
    Tensor h0 = random_input({1, hid, w, h}, rng);
    Tensor c0 = random_input({1, hid, w, h}, rng);
    ConvLSTMState next = cell_step(x, {h0, c0}, p);

    OracleBuf xb{std::vector<double>(x.data().begin(), x.data().end()), cin, w, h};
    OracleState prev{{std::vector<double>(h0.data().begin(), h0.data().end()), hid, w, h},
                     {std::vector<double>(c0.data().begin(), c0.data().end()), hid, w, h}};
    OracleState expect = oracle_cell_step(xb, prev, p);
    for (std::size_t i = 0; i < expect.h.v.size(); ++i) {
      CHECK(std::fabs(next.h.data()[i] - expect.h.v[i]) <= 1e-12);
      CHECK(std::fabs(next.c.data()[i] - expect.c.v[i]) <= 1e-12);
    }
  }
}

TEST_CASE("layer_forward: t=1 equals one step; random sequences match the oracle") {
  Rng rng(13);
  const std::int64_t hid = 2, w = 3, h = 3, cin = 2, t = 4;
  ConvLSTMCellParams p = random_params(cin, hid, 3, w, h, rng);

  Tensor seq1 = random_input({1, 1, cin, w, h}, rng);
  Tensor out1 = layer_forward(seq1, p);
  ConvLSTMState step = cell_step(reshape(seq1, {1, cin, w, h}),
                                 ConvLSTMState::zero(1, hid, w, h), p);
  for (std::size_t i = 0; i < step.h.data().size(); ++i)
    CHECK(out1.data()[i] == step.h.data()[i]);

  Tensor seq = random_input({1, t, cin, w, h}, rng);
  Tensor out = layer_forward(seq, p);
  OracleState st{make_buf(hid, w, h), make_buf(hid, w, h)};
  for (std::int64_t ti = 0; ti < t; ++ti) {
    OracleBuf xb = make_buf(cin, w, h);
    for (std::int64_t c = 0; c < cin; ++c)
      for (std::int64_t y = 0; y < w; ++y)
        for (std::int64_t xx = 0; xx < h; ++xx) xb.at(c, y, xx) = seq.at({0, ti, c, y, xx});
    st = oracle_cell_step(xb, st, p);
    for (std::int64_t c = 0; c < hid; ++c)
      for (std::int64_t y = 0; y < w; ++y)
        for (std::int64_t xx = 0; xx < h; ++xx)
          CHECK(std::fabs(out.at({0, ti, c, y, xx}) - st.h.get(c, y, xx)) <= 1e-12);
  }
}

TEST_CASE("constant input with zero weights keeps the state at zero") {
  const std::int64_t hid = 2, w = 3, h = 3;
  ConvLSTMCellParams p = zero_params(1, hid, 3, w, h);
  Tensor seq = Tensor::full({1, 5, 1, w, h}, 0.7);
  Tensor out = layer_forward(seq, p);
  // c_t = 0.5 c_{t-1} from zero init stays 0, so h_t = 0.5 tanh(0) = 0
  for (double v : out.data()) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("stack_forward composes layers") {
  Rng rng(17);
  const std::int64_t w = 3, h = 3;
  ConvLSTMCellParams l0 = random_params(2, 3, 3, w, h, rng);
  ConvLSTMCellParams l1 = random_params(3, 2, 3, w, h, rng);
  Tensor seq = random_input({2, 3, 2, w, h}, rng);

  Tensor single = stack_forward(seq, {l0});
  Tensor direct = layer_forward(seq, l0);
  for (std::size_t i = 0; i < direct.data().size(); ++i)
    CHECK(single.data()[i] == direct.data()[i]);

  Tensor stacked = stack_forward(seq, {l0, l1});
  Tensor manual = layer_forward(layer_forward(seq, l0), l1);
  for (std::size_t i = 0; i < manual.data().size(); ++i)
    CHECK(std::fabs(stacked.data()[i] - manual.data()[i]) <= 1e-15);

  CHECK_THROWS_AS(stack_forward(seq, {l0, l0}), ConfigError);  // 3 -> expects 2
  CHECK_THROWS_AS(layer_forward(random_input({1, 1, 2, w, h}, rng), l1), DimensionError);
}

TEST_CASE("gates stay in (0,1) and |h| < 1 even for extreme inputs") {
  Rng rng(19);
  const std::int64_t hid = 2, w = 3, h = 3;
  ConvLSTMCellParams p = random_params(2, hid, 3, w, h, rng);
  for (double mag : {1.0, 50.0, 2000.0}) {
    Tensor x = scale(random_input({1, 2, w, h}, rng), mag);
    Tensor c0 = scale(random_input({1, hid, w, h}, rng), mag);
    Tensor h0 = tanh(random_input({1, hid, w, h}, rng));
    ConvLSTMState next = cell_step(Tensor::from_data(x.shape(), {x.data().begin(), x.data().end()}),
                                   {h0, Tensor::from_data(c0.shape(), {c0.data().begin(), c0.data().end()})},
                                   p);
    for (double v : next.h.data()) {
      // strictly inside (-1,1) except where float64 rounds the saturated
      // sigmoid/tanh product to the boundary
      if (mag <= 1.0) CHECK(std::fabs(v) < 1.0);
      CHECK(std::fabs(v) <= 1.0);
      CHECK(std::isfinite(v));
    }
  }
}

TEST_CASE("cell_step gradients pass the finite-difference check") {
  Rng rng(23);
  const std::int64_t hid = 2, w = 3, h = 3, cin = 2;
  ConvLSTMCellParams p = random_params(cin, hid, 3, w, h, rng);
  Tensor x = random_input({1, cin, w, h}, rng);

  auto params = p.parameters();
  auto f = [&x, &p, hid, w, h](const std::vector<Tensor>&) {
    ConvLSTMState s = cell_step(x, ConvLSTMState::zero(1, hid, w, h), p);
    return mean_all(mul(s.h, s.h));
  };
  CHECK(grad_check(f, params) <= 1e-6);
}

TEST_CASE("freeze semantics") {
  Rng rng(29);
  const std::int64_t w = 3, h = 3;
  std::vector<ConvLSTMCellParams> layers{random_params(2, 2, 3, w, h, rng)};
  Tensor seq = random_input({2, 2, 2, w, h}, rng);

  Tensor before_freeze = stack_forward(seq, layers);
  set_frozen(layers, true);
  Tensor frozen_fwd = stack_forward(seq, layers);
  // freeze toggling does not alter forward outputs
  for (std::size_t i = 0; i < frozen_fwd.data().size(); ++i)
    CHECK(frozen_fwd.data()[i] == before_freeze.data()[i]);

  auto run_step = [&] {
    std::vector<Tensor> params = layers[0].parameters();
    AdamOptimizer opt(params, {.lr = 1e-2});
    Tensor out = stack_forward(seq, layers);
    backward(mean_all(mul(out, out)));
    opt.step();
  };

  std::vector<double> snapshot(layers[0].w_ix.data().begin(), layers[0].w_ix.data().end());
  run_step();
  for (std::size_t i = 0; i < snapshot.size(); ++i)
    CHECK(layers[0].w_ix.data()[i] == snapshot[i]);

  set_frozen(layers, false);
  run_step();
  bool changed = false;
  for (std::size_t i = 0; i < snapshot.size(); ++i)
    if (layers[0].w_ix.data()[i] != snapshot[i]) changed = true;
  CHECK(changed);
}

}  // TEST_SUITE
