#pragma once

#include <cstdint>
#include <vector>

#include "csdasa/tensor.hpp"

namespace csdasa {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. Parameters whose requires_grad flag is
// off at step() time are skipped entirely (their moments stay untouched), so
// freezing a group mid-run leaves it bit-identical.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, AdamConfig cfg = {});

  // Applies one update from the gradients currently stored on the params.
  // Missing gradients (tensor never reached by backward) count as zero.
  void step();

  void reset_state();
  std::int64_t step_count() const { return step_count_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamConfig cfg_;
  std::int64_t step_count_ = 0;
};

}  // namespace csdasa
