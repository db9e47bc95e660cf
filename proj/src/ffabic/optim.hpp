#pragma once

#include <map>
#include <string>
#include <vector>

#include "model.hpp"

namespace ffabic {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip = 1.0;  // global gradient-norm ceiling; <= 0 disables clipping
};

// Names from the store that start with one of the prefixes; empty prefix list
// selects everything. Used to restrict an optimizer to one training stage.
std::vector<std::string> names_with_prefixes(const ParamStore& ps,
                                             const std::vector<std::string>& prefixes);

// Adam over a fixed subset of a ParamStore. Gradients are read off the tape
// after backward(); parameters the loss never touched count as zero-gradient
// so the moment estimates stay well-defined.
class Adam {
public:
    Adam(ParamStore& ps, AdamConfig cfg, std::vector<std::string> names = {});

    void step(const TapeT<float>& tape, const GraphT<float>& g);

    // checkpoint surface
    std::map<std::string, Tensor>& m() { return m_; }
    std::map<std::string, Tensor>& v() { return v_; }
    int64_t steps_taken() const { return t_; }
    void set_steps_taken(int64_t t) { t_ = t; }

    const std::vector<std::string>& names() const { return names_; }

private:
    ParamStore* ps_;
    AdamConfig cfg_;
    std::vector<std::string> names_;
    std::map<std::string, Tensor> m_, v_;
    int64_t t_ = 0;
};

}  // namespace ffabic
