#include "csdasa/adam.hpp"

#include <cmath>

namespace csdasa {

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto n = static_cast<std::size_t>(params_[i].numel());
    m_[i].assign(n, 0.0);
    v_[i].assign(n, 0.0);
  }
}

void AdamOptimizer::step() {
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.requires_grad()) continue;
    const auto g = p.grad();
    auto x = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double gj = j < g.size() ? g[j] : 0.0;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      x[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void AdamOptimizer::reset_state() {
  step_count_ = 0;
  for (auto& m : m_) std::fill(m.begin(), m.end(), 0.0);
  for (auto& v : v_) std::fill(v.begin(), v.end(), 0.0);
}

}  // namespace csdasa
