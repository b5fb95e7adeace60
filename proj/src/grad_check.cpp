#include "csdasa/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace csdasa {

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> params, double h) {
  Tensor loss = f(params);
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("grad_check: f must return a scalar");
  }
  backward(loss);

  // Snapshot analytic gradients before the probes rebuild the graph.
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) {
    auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    if (!p.requires_grad()) continue;
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double fp = f(params).item();
      data[i] = saved - h;
      const double fm = f(params).item();
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[pi].empty() ? 0.0 : analytic[pi][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace csdasa
