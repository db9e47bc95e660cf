#pragma once

#include <vector>

#include "model.hpp"

namespace ffabic {

// DDPM-style linear schedule kept in real64; alpha_bar(0) is defined as 1 so
// the final DDIM step lands exactly on the clean latent.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t-1] for step t in [1,T]
    std::vector<double> alpha_bar;  // running product of (1 - beta)
    double abar(int t) const;       // t in [0,T]
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

inline constexpr int kDiffusionT = 1000;
inline constexpr double kBetaStart = 1e-4;
inline constexpr double kBetaEnd = 0.02;
inline constexpr int kSampleSteps = 25;

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, t in [1,T]
Tensor add_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s);
template <typename T>
int add_noise(GraphT<T>& g, int z0, int t, int eps, const NoiseSchedule& s);

// eta = 0: predict z0 from eps_hat, then re-noise to t_prev deterministically
Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& s);

// Small two-level U-net over the 16-channel content space. z_c conditions it
// twice: concatenated at the input and through zero-init IAF at each level; a
// learned per-timestep embedding row biases both levels. The output head is
// zero-init so an untrained denoiser predicts zero noise. `width` sets the
// level-0 channel count (level 1 doubles it); the builder reads the real
// widths back from the parameter shapes.
void init_denoiser(ParamStore& ps, int T, Rng& rng, int width = 32);
template <typename T>
int build_denoiser(GraphT<T>& g, int z_t, int t, int z_c);

Tensor denoise_eps(const ParamStore& ps, const Tensor& z_t, int t, const Tensor& z_c);

// ||eps - eps_hat||^2 / numel on the graph, for the training objective
template <typename T>
int noise_loss(GraphT<T>& g, int z0, int t, int eps, int z_c, const NoiseSchedule& s);

// Deterministic sampler: seeded normal z_T, S evenly spaced steps down to 0.
Tensor ddim_sample(const ParamStore& ps, const Tensor& z_c, int steps, uint64_t seed,
                   const NoiseSchedule& s);

}  // namespace ffabic
