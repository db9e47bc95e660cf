#include "optim.hpp"

#include <cmath>

#include "errors.hpp"

namespace ffabic {

std::vector<std::string> names_with_prefixes(const ParamStore& ps,
                                             const std::vector<std::string>& prefixes) {
    std::vector<std::string> out;
    for (const auto& [name, t] : ps.params) {
        if (prefixes.empty()) {
            out.push_back(name);
            continue;
        }
        for (const auto& p : prefixes)
            if (name.rfind(p, 0) == 0) {
                out.push_back(name);
                break;
            }
    }
    return out;
}

Adam::Adam(ParamStore& ps, AdamConfig cfg, std::vector<std::string> names)
    : ps_(&ps), cfg_(cfg), names_(std::move(names)) {
    if (names_.empty()) names_ = names_with_prefixes(ps, {});
    for (const auto& n : names_) {
        const Tensor& p = ps.at(n);  // throws if the name is unknown
        m_.emplace(n, Tensor(p.shape));
        v_.emplace(n, Tensor(p.shape));
    }
}

void Adam::step(const TapeT<float>& tape, const GraphT<float>& g) {
    // global norm over this optimizer's subset only
    double sq = 0.0;
    for (const auto& n : names_) {
        int id = g.p(n);
        if (!tape.has_grad(id)) continue;
        for (float gv : tape.grad(id).v) sq += (double)gv * gv;
    }
    double norm = std::sqrt(sq);
    double gscale = cfg_.clip > 0.0 && norm > cfg_.clip ? cfg_.clip / norm : 1.0;

    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, (double)t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, (double)t_);

    for (const auto& n : names_) {
        Tensor& p = ps_->at(n);
        Tensor& m = m_.at(n);
        Tensor& v = v_.at(n);
        int id = g.p(n);
        bool hg = tape.has_grad(id);
        const Tensor* gr = hg ? &tape.grad(id) : nullptr;
        if (hg && gr->v.size() != p.v.size()) throw contract_error("gradient shape mismatch");
        for (size_t i = 0; i < p.v.size(); ++i) {
            double gi = hg ? (double)gr->v[i] * gscale : 0.0;
            double mi = cfg_.beta1 * m.v[i] + (1.0 - cfg_.beta1) * gi;
            double vi = cfg_.beta2 * v.v[i] + (1.0 - cfg_.beta2) * gi * gi;
            m.v[i] = (float)mi;
            v.v[i] = (float)vi;
            p.v[i] = (float)(p.v[i] - cfg_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps));
        }
    }
}

}  // namespace ffabic
