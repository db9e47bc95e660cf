#pragma once

#include "ffab.hpp"
#include "model.hpp"

namespace ffabic {

// Analysis runs log2(down_factor) stages of (conv5x5 s2 -> FFAB x depth ->
// prior injection); channel plan is [n, n, ..., m]. Prior features feed the
// per-stage injections: level i lives at 1/2^(i+1) resolution with 16
// channels at level 0 and 32 above.
int analysis_stages(const ModelConfig& cfg);
int prior_level_channels(int level);
int stage_channels(const ModelConfig& cfg, int stage);

void init_analysis(ParamStore& ps, const ModelConfig& cfg, Rng& rng);
template <typename T>
int build_analysis(GraphT<T>& g, int x, const std::vector<int>& prior_levels, const ModelConfig& cfg);

// Synthesis maps quantized latents to the 16-channel content space at 1/4
// resolution; the injection feature comes from the weight hyper-decoder.
inline constexpr int kContentChannels = 16;

void init_synthesis(ParamStore& ps, const ModelConfig& cfg, Rng& rng);
template <typename T>
int build_synthesis(GraphT<T>& g, int y_hat, int w_feat, const ModelConfig& cfg);

// Hyper encoder: prior injection, then two strided 5x5 convs down to the
// hyper latent.
void init_hyper_enc(ParamStore& ps, const ModelConfig& cfg, Rng& rng);
template <typename T>
int build_hyper_enc(GraphT<T>& g, int y, int prior_top, const ModelConfig& cfg);

// Hyper decoders ("hd" for entropy conditioning, "hdw" for the synthesis
// injection feature) share the architecture but never the weights. Output is
// cropped to the latent's ceil dims.
void init_hyper_dec(ParamStore& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng);
template <typename T>
int build_hyper_dec(GraphT<T>& g, int z_hat, const std::string& prefix, int yh, int yw,
                    const ModelConfig& cfg);

}  // namespace ffabic
