#pragma once

#include <utility>

#include "model.hpp"

namespace ffabic {

// Latent channels split into 10 uneven slices, coded in order; later slices
// condition on all earlier ones.
std::vector<int> slice_sizes(int m);
std::vector<int> slice_offsets(int m);  // prefix sums, length 11

enum class QuantMode {
    Train,      // additive noise on the rate path, straight-through rounding elsewhere
    GradCheck,  // caller-frozen noise everywhere; keeps finite differences valid
    Eval        // hard rounding everywhere
};

template <typename T>
struct QuantSpec {
    QuantMode mode = QuantMode::Eval;
    Rng* rng = nullptr;                   // Train
    const TensorT<T>* noise_y = nullptr;  // GradCheck, y-shaped
    const TensorT<T>* noise_z = nullptr;  // GradCheck, z-shaped
};

struct EntropyOut {
    int y_hat = -1;   // conditioning/synthesis path latents
    int bits_y = -1;  // scalar
    int bits_z = -1;  // scalar
    int z_cond = -1;  // hyper latents as seen by the decoders
    int hyper = -1;   // entropy-conditioning feature [2m, yh, yw]
    int w_feat = -1;  // synthesis-injection feature [2m, yh, yw]
    std::vector<int> mu, sigma, y_hat_slices;
};

void init_entropy(ParamStore& ps, const ModelConfig& cfg, Rng& rng);

// Per-slice conditional Gaussian parameters from the hyper feature plus all
// previously decoded slices (cond = [hyper, slice_0, .., slice_{i-1}]).
template <typename T>
std::pair<int, int> build_char_params(GraphT<T>& g, const std::vector<int>& cond, int slice,
                                      const ModelConfig& cfg);

// Full conditional-coding graph over a latent pair (y, z).
template <typename T>
EntropyOut build_entropy(GraphT<T>& g, int y, int z, const ModelConfig& cfg, const QuantSpec<T>& q);

// Differentiable factorized-prior cost of the (noisy or rounded) hyper latent.
template <typename T>
int factorized_bits(GraphT<T>& g, int z_vals, const ModelConfig& cfg);

// Plain (tape-free) factorized CDF, used to freeze coding tables.
double factorized_cdf(const ParamStore& ps, int channel, double x);

inline constexpr float kSigmaFloor = 0.04f;
inline constexpr float kBitsFloor = 1.0f / 65536.0f;

}  // namespace ffabic
