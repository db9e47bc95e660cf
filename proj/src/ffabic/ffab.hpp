#pragma once

#include <array>

#include "model.hpp"
#include "window.hpp"

namespace ffabic {

// Band order is fixed: LL, HH, HL, LH. Head group g of a K-head block owns
// heads [g*K/4, (g+1)*K/4) and therefore the matching contiguous channel
// quarter of q/k/v.
std::array<WindowSpec, 4> band_shapes(int s);

void init_ffab_block(ParamStore& ps, const std::string& prefix, int c, int heads, int s, Rng& rng,
                     int fft_block);

// t = x + attn(norm1(x)); out = t + ffn_freq(norm2(t))
template <typename T>
int build_ffab_block(GraphT<T>& g, int x, const std::string& prefix, int c, int heads, int s,
                     int fft_block);

void init_iaf(ParamStore& ps, const std::string& prefix, int c_prior, int c);

// y * (1 + gamma(f)) + beta(f); both maps start at zero so injection begins
// as the identity.
template <typename T>
int build_iaf(GraphT<T>& g, int y, int f, const std::string& prefix);

}  // namespace ffabic
