#pragma once

#include "entropy.hpp"
#include "model.hpp"

namespace ffabic {

struct LossWeights {
    double lambda1 = 1.0;   // rate
    double lambda2 = 1.0;   // spatial content
    double lambda3 = 0.1;   // frequency content
    double lambda4 = 0.0;   // denoiser
    void validate() const;  // all >= 0, at least one > 0
};

// bits-per-pixel: (rate of y + rate of z) / source pixel count
template <typename T>
int rate_loss(GraphT<T>& g, int bits_y, int bits_z, int64_t pixels);

// mean squared error against the content target
template <typename T>
int spatial_loss(GraphT<T>& g, int z_c, int target);

// full-plane spectral distance (amplitude + unit-phasor phase terms)
template <typename T>
int frequency_loss(GraphT<T>& g, int z_c, int target);

struct LossTerms {
    int rate = -1, spatial = -1, frequency = -1, noise = -1;  // -1 when absent
    int total = -1;
};

// weighted recomposition; absent terms are treated as zero
template <typename T>
int combine_losses(GraphT<T>& g, LossTerms& t, const LossWeights& w);

}  // namespace ffabic
