#include "gradcheck.hpp"

#include <cmath>

#include "errors.hpp"

namespace ffabic {

double grad_check(const std::function<double(const Tensor64&)>& f, const Tensor64& theta,
                  const Tensor64& analytic, double h_base) {
    if (!same_shape(theta, analytic)) throw contract_error("grad_check: gradient shape mismatch");
    Tensor64 probe = theta;
    double worst = 0.0;
    for (size_t i = 0; i < theta.numel(); ++i) {
        double h = h_base * std::max(1.0, std::fabs(theta.v[i]));
        probe.v[i] = theta.v[i] + h;
        double fp = f(probe);
        probe.v[i] = theta.v[i] - h;
        double fm = f(probe);
        probe.v[i] = theta.v[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw input_error("grad_check: objective is non-finite near coordinate " + std::to_string(i));
        double numeric = (fp - fm) / (2.0 * h);
        double a = analytic.v[i];
        double rel = std::fabs(a - numeric) / std::max(1e-8, std::fabs(a) + std::fabs(numeric));
        if (rel > worst) worst = rel;
    }
    return worst;
}

}  // namespace ffabic
