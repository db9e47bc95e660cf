#pragma once

#include "diffusion.hpp"
#include "model.hpp"
#include "prior.hpp"

namespace ffabic {

struct CompressResult {
    std::vector<uint8_t> bytes;
    double est_bits_y = 0.0;  // cross-entropy of the rounded latents under the model
    double est_bits_z = 0.0;
};

struct DecodeOpts {
    int steps = kSampleSteps;
    uint64_t seed = 0;
    bool bypass_diffusion = false;  // decode the content latent directly
    double beta_start = kBetaStart;
    double beta_end = kBetaEnd;
};

struct BitstreamInfo {
    uint8_t version = 0, flags = 0;
    int width = 0, height = 0, down_factor = 0, m = 0;
    uint64_t model_hash = 0;
    uint32_t z_bytes = 0;
    std::vector<uint32_t> slice_bytes;
    size_t container_bytes = 0;  // everything that is not coded payload
};

// Encoder-side feature source: the trained toy prior when present, otherwise
// the seeded fixed filter bank (same choice the trainer makes).
std::unique_ptr<PriorProvider> coding_provider(const ParamStore& ps, const ModelConfig& cfg);

// analysis -> quantize -> hyper path -> factorized z stream + 10 AR slice streams
CompressResult compress(const ParamStore& ps, const ModelConfig& cfg, const Tensor& img);

// decode z -> slices in order -> synthesis -> (optional) diffusion -> pixels
// in [0,1] cropped to the header dims. Deterministic given opts.seed.
Tensor decompress(const ParamStore& ps, const ModelConfig& cfg, const std::vector<uint8_t>& bytes,
                  const DecodeOpts& opts = {});

BitstreamInfo inspect_bitstream(const std::vector<uint8_t>& bytes);

}  // namespace ffabic
