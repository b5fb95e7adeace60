#pragma once

#include <functional>
#include <vector>

#include "csdasa/tensor.hpp"

namespace csdasa {

// Finite-difference oracle for reverse-mode gradients.
//
// Evaluates f(params) once analytically, then per component of every
// requires_grad parameter compares against the central difference
// (f(x+h) - f(x-h)) / 2h, nudging the leaf data in place. Returns
//   max over components of |analytic - numeric| / max(|analytic|, |numeric|, floor)
// with floor = 1e-8. Parameters with requires_grad == false are skipped: the
// tape excludes them, so their gradient is zero by contract.
//
// f must return a scalar tensor; anything else is a ContractError.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> params, double h = 1e-6);

}  // namespace csdasa
