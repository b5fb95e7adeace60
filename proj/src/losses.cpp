#include "csdasa/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace csdasa {

KernelConfig KernelConfig::fixed(double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("kernel bandwidth must be positive");
  return {Policy::Fixed, sigma};
}

double gaussian_kernel(std::span<const double> x, std::span<const double> y, double sigma) {
  if (x.size() != y.size()) throw DimensionError("gaussian_kernel: dimension mismatch");
  if (!(sigma > 0.0)) throw ConfigError("gaussian_kernel: bandwidth must be positive");
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    d2 += d * d;
  }
  return std::exp(-d2 / (2.0 * sigma * sigma));
}

namespace {

void check_samples(const Tensor& s, const Tensor& t) {
  if (s.rank() != 2 || t.rank() != 2) {
    throw DimensionError("mmd_squared: inputs must be [n,d] sample matrices, got " +
                         shape_str(s.shape()) + " and " + shape_str(t.shape()));
  }
  if (s.dim(1) != t.dim(1)) {
    throw DimensionError("mmd_squared: feature dimensions differ: " + shape_str(s.shape()) +
                         " vs " + shape_str(t.shape()));
  }
}

// Deterministic ordering of the two sample sets. mmd is symmetric in (S,T);
// computing on a canonical order makes mmd(S,T) and mmd(T,S) bit-identical.
bool canonical_swap(const Tensor& s, const Tensor& t) {
  if (s.dim(0) != t.dim(0)) return t.dim(0) < s.dim(0);
  const auto sv = s.data();
  const auto tv = t.data();
  return std::lexicographical_compare(tv.begin(), tv.end(), sv.begin(), sv.end());
}

double squared_distance(const double* a, const double* b, std::int64_t d) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

}  // namespace

double median_pairwise_distance(const Tensor& s, const Tensor& t) {
  check_samples(s, t);
  const std::int64_t n = s.dim(0), m = t.dim(0), d = s.dim(1);
  const double* sp = s.data().data();
  const double* tp = t.data().data();
  std::vector<const double*> rows;
  rows.reserve(static_cast<std::size_t>(n + m));
  for (std::int64_t i = 0; i < n; ++i) rows.push_back(sp + i * d);
  for (std::int64_t i = 0; i < m; ++i) rows.push_back(tp + i * d);

  std::vector<double> dist;
  dist.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j)
      dist.push_back(std::sqrt(squared_distance(rows[i], rows[j], d)));
  if (dist.empty()) return 1.0;

  std::sort(dist.begin(), dist.end());
  const std::size_t h = dist.size() / 2;
  const double med = (dist.size() % 2 == 1) ? dist[h] : 0.5 * (dist[h - 1] + dist[h]);
  return med > 1e-12 ? med : 1.0;
}

Tensor mmd_squared(const Tensor& s, const Tensor& t, const KernelConfig& kernel, bool unbiased) {
  check_samples(s, t);
  double sigma = kernel.sigma;
  if (kernel.policy == KernelConfig::Policy::Median) {
    sigma = median_pairwise_distance(s, t);
  } else if (!(sigma > 0.0)) {
    throw ConfigError("mmd_squared: bandwidth must be positive");
  }

  const bool swap = canonical_swap(s, t);
  const Tensor& a = swap ? t : s;
  const Tensor& b = swap ? s : t;
  const std::int64_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  if (unbiased && (n < 2 || m < 2)) {
    throw DataError("mmd_squared: the unbiased estimator needs at least two samples per set");
  }

  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const double* ap = a.data().data();
  const double* bp = b.data().data();

  std::vector<double> kaa(static_cast<std::size_t>(n * n));
  std::vector<double> kbb(static_cast<std::size_t>(m * m));
  std::vector<double> kab(static_cast<std::size_t>(n * m));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      kaa[i * n + j] = std::exp(-squared_distance(ap + i * d, ap + j * d, d) * inv2s2);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < m; ++j)
      kbb[i * m + j] = std::exp(-squared_distance(bp + i * d, bp + j * d, d) * inv2s2);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j)
      kab[i * m + j] = std::exp(-squared_distance(ap + i * d, bp + j * d, d) * inv2s2);

  double self_a = 0.0, self_b = 0.0, cross = 0.0;
  if (unbiased) {
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        if (i != j) self_a += kaa[i * n + j];
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < m; ++j)
        if (i != j) self_b += kbb[i * m + j];
    self_a /= static_cast<double>(n * (n - 1));
    self_b /= static_cast<double>(m * (m - 1));
  } else {
    for (double v : kaa) self_a += v;
    for (double v : kbb) self_b += v;
    self_a /= static_cast<double>(n * n);
    self_b /= static_cast<double>(m * m);
  }
  for (double v : kab) cross += v;
  cross /= static_cast<double>(n * m);
  const double value = self_a + self_b - 2.0 * cross;

  const double ca = unbiased ? 2.0 / static_cast<double>(n * (n - 1))
                             : 2.0 / static_cast<double>(n * n);
  const double cb = unbiased ? 2.0 / static_cast<double>(m * (m - 1))
                             : 2.0 / static_cast<double>(m * m);
  const double cab = 2.0 / static_cast<double>(n * m);
  const double inv_s2 = 1.0 / (sigma * sigma);

  auto an = a.node();
  auto bn = b.node();
  return detail::make_op(
      {1}, {value}, {a, b},
      [an, bn, n, m, d, kaa = std::move(kaa), kbb = std::move(kbb), kab = std::move(kab), ca, cb,
       cab, inv_s2, unbiased](detail::Node& o) {
        const double up = o.grad[0];
        const double* av = an->value.data();
        const double* bv = bn->value.data();
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::int64_t i = 0; i < n; ++i) {
            double* gi = an->grad.data() + i * d;
            for (std::int64_t j = 0; j < n; ++j) {
              if (unbiased && i == j) continue;
              const double w = up * ca * kaa[i * n + j] * inv_s2;
              const double* aj = av + j * d;
              const double* ai = av + i * d;
              for (std::int64_t e = 0; e < d; ++e) gi[e] += w * (aj[e] - ai[e]);
            }
            for (std::int64_t j = 0; j < m; ++j) {
              const double w = up * cab * kab[i * m + j] * inv_s2;
              const double* bj = bv + j * d;
              const double* ai = av + i * d;
              for (std::int64_t e = 0; e < d; ++e) gi[e] -= w * (bj[e] - ai[e]);
            }
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::int64_t i = 0; i < m; ++i) {
            double* gi = bn->grad.data() + i * d;
            for (std::int64_t j = 0; j < m; ++j) {
              if (unbiased && i == j) continue;
              const double w = up * cb * kbb[i * m + j] * inv_s2;
              const double* bj = bv + j * d;
              const double* bi = bv + i * d;
              for (std::int64_t e = 0; e < d; ++e) gi[e] += w * (bj[e] - bi[e]);
            }
            for (std::int64_t j = 0; j < n; ++j) {
              const double w = up * cab * kab[j * m + i] * inv_s2;
              const double* aj = av + j * d;
              const double* bi = bv + i * d;
              for (std::int64_t e = 0; e < d; ++e) gi[e] -= w * (aj[e] - bi[e]);
            }
          }
        }
      });
}

namespace {

Tensor flatten_per_sample(const Tensor& x) {
  if (x.rank() == 2) return x;
  if (x.rank() < 2) throw DimensionError("mmd_transfer_loss: features must have rank >= 2");
  return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

}  // namespace

Tensor mmd_transfer_loss(const std::vector<std::pair<Tensor, Tensor>>& layer_pairs,
                         const KernelConfig& kernel) {
  if (layer_pairs.empty()) throw DataError("mmd_transfer_loss: no layer pairs");
  Tensor total;
  for (const auto& [fs, ft] : layer_pairs) {
    Tensor term = mmd_squared(flatten_per_sample(fs), flatten_per_sample(ft), kernel);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy: logits must be [n,classes], got " +
                         shape_str(logits.shape()));
  }
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw DataError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(n) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= k) throw DataError("cross_entropy: label " + std::to_string(y) +
                                         " outside [0," + std::to_string(k) + ")");
  }

  const double* z = logits.data().data();
  std::vector<double> probs(static_cast<std::size_t>(n * k));
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = z + i * k;
    double mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j) {
      probs[i * k + j] = std::exp(row[j] - mx);
      denom += probs[i * k + j];
    }
    const double inv = 1.0 / denom;
    for (std::int64_t j = 0; j < k; ++j) probs[i * k + j] *= inv;
    total += std::log(denom) - (row[labels[static_cast<std::size_t>(i)]] - mx);
  }
  const double value = total / static_cast<double>(n);

  auto ln = logits.node();
  std::vector<int> ys(labels.begin(), labels.end());
  return detail::make_op({1}, {value}, {logits},
                         [ln, n, k, probs = std::move(probs), ys = std::move(ys)](detail::Node& o) {
    if (!ln->requires_grad) return;
    ln->ensure_grad();
    const double up = o.grad[0] / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      double* g = ln->grad.data() + i * k;
      const double* p = probs.data() + i * k;
      for (std::int64_t j = 0; j < k; ++j) g[j] += up * p[j];
      g[ys[static_cast<std::size_t>(i)]] -= up;
    }
  });
}

Tensor total_loss(const Tensor& ce, const Tensor& l_mmd, double gamma) {
  if (gamma < 0.0) throw ConfigError("total_loss: gamma must be non-negative");
  return add(ce, scale(l_mmd, gamma));
}

}  // namespace csdasa
