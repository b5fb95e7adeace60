#pragma once

#include <span>
#include <utility>
#include <vector>

#include "csdasa/tensor.hpp"

namespace csdasa {

// Gaussian kernel bandwidth policy. `Median` is the median pairwise-distance
// heuristic over the pooled batch pair, computed per call and treated as a
// constant (no gradient flows through sigma).
struct KernelConfig {
  enum class Policy { Median, Fixed };
  Policy policy = Policy::Median;
  double sigma = 1.0;

  static KernelConfig median() { return {Policy::Median, 1.0}; }
  static KernelConfig fixed(double sigma);
};

// exp(-||x-y||^2 / (2 sigma^2))
double gaussian_kernel(std::span<const double> x, std::span<const double> y, double sigma);

// Median of all pairwise Euclidean distances over the pooled rows of S and T.
// Falls back to 1.0 when the points are (numerically) all identical.
double median_pairwise_distance(const Tensor& s, const Tensor& t);

// Squared maximum mean discrepancy between the rows of s [n,d] and t [m,d]:
//   (1/n^2) sum k(s_i,s_j) + (1/m^2) sum k(t_i,t_j) - (2/nm) sum k(s_i,t_j)
// The default is the biased V-statistic; `unbiased` switches the self terms
// to the U-statistic (requires n,m >= 2). Differentiable w.r.t. both inputs.
Tensor mmd_squared(const Tensor& s, const Tensor& t, const KernelConfig& kernel,
                   bool unbiased = false);

// Sum of mmd_squared over per-layer (source, target) feature pairs. Feature
// tensors of rank > 2 are flattened per sample to [n, d] first.
Tensor mmd_transfer_loss(const std::vector<std::pair<Tensor, Tensor>>& layer_pairs,
                         const KernelConfig& kernel);

// Mean negative log-softmax probability of the true class, max-stabilized.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// ce + gamma * l_mmd
Tensor total_loss(const Tensor& ce, const Tensor& l_mmd, double gamma);

}  // namespace csdasa
