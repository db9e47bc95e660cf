#pragma once

#include <functional>

#include "tensor.hpp"

namespace ffabic {

// Central-difference check of an analytic gradient. f must be deterministic
// and evaluated in double; any stochastic pieces (quantizer noise) have to be
// frozen by the caller. Returns the max relative error over all coordinates:
//   |a - n| / max(1e-8, |a| + |n|)
// with h_i = h_base * max(1, |theta_i|). Throws input_error on non-finite f.
double grad_check(const std::function<double(const Tensor64&)>& f, const Tensor64& theta,
                  const Tensor64& analytic, double h_base = 1e-4);

}  // namespace ffabic
