#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "autodiff.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace ffabic {

// Architecture knobs. "toy" is sized so a full training run fits on a desk
// machine; "full" matches the production geometry.
struct ModelConfig {
    int n = 32;            // transform width
    int m = 48;            // latent channels (divisible by 24 for the slice split)
    int hyper_ch = 32;     // hyper-latent channels
    int down_factor = 8;   // total spatial downsampling of the analysis path
    int depth = 2;         // FFAB blocks per stage
    int heads = 8;         // attention heads per FFAB block (divisible by 4)
    int window_scale = 2;  // s; band windows are derived from it
    int fft_block = 8;     // block size of the frequency-modulation FFN

    static ModelConfig toy();
    static ModelConfig full();
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

struct ParamStore {
    std::map<std::string, Tensor> params;  // sorted by name; hashing relies on it

    Tensor& add(const std::string& name, std::vector<int> shape);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return params.count(name) != 0; }
    size_t total_scalars() const;
    uint64_t content_hash() const;  // FNV-1a over float32 bytes in name order
};

// A tape with the store's parameters bound as (optionally differentiable)
// leaves. Graph builders only see this view.
template <typename T>
struct GraphT {
    TapeT<T>& tape;
    std::map<std::string, int> ids;
    std::map<std::string, Tensor>* probes = nullptr;  // band activation taps, when recording

    int p(const std::string& name) const;
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;

template <typename T>
GraphT<T> bind_params(TapeT<T>& tape, const ParamStore& ps, bool needs_grad = true);

// initializers
void init_conv(ParamStore& ps, const std::string& prefix, int cout, int cin, int kh, int kw, Rng& rng,
               bool zero = false);
void init_layernorm(ParamStore& ps, const std::string& prefix, int c);

// y = conv(x) given params "<prefix>.w" / "<prefix>.b"
template <typename T>
int conv(GraphT<T>& g, int x, const std::string& prefix, int stride = 1, int pad = 0);

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 14695981039346656037ULL);

}  // namespace ffabic
