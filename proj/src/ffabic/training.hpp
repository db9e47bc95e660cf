#pragma once

#include <array>
#include <string>

#include "diffusion.hpp"
#include "losses.hpp"
#include "optim.hpp"
#include "prior.hpp"
#include "transforms.hpp"

namespace ffabic {

// One-call initialization of every codec-side parameter group (analysis,
// synthesis, hyper path, entropy model). The prior ("tp.") and denoiser
// ("dn.") groups are owned by their stages.
void init_codec(ParamStore& ps, const ModelConfig& cfg, Rng& rng);

struct CodecGraph {
    EntropyOut eo;
    int y = -1, z = -1, z_c = -1;
    LossTerms terms;  // rate/spatial/frequency; noise and total left to the caller
};

// Full encoder->entropy->synthesis pass with the three codec loss terms.
// x must be padded to the down factor; prior_levels come from a provider.
template <typename T>
CodecGraph build_codec_graph(GraphT<T>& g, int x, const std::vector<int>& prior_levels,
                             int target, const ModelConfig& cfg, const QuantSpec<T>& q,
                             int64_t pixels);

enum class TrainStage { Prior, Codec, Denoiser, Joint };

struct TrainConfig {
    ModelConfig model;
    LossWeights weights;  // the stage masks out the terms it does not train
    TrainStage stage = TrainStage::Codec;
    int steps = 500;
    uint64_t seed = 1;
    AdamConfig adam;
    double prior_lr = 1e-3;         // stage-1 autoencoder runs hotter than the codec
    std::string provider = "auto";  // auto | toy | fixed
    int diff_T = kDiffusionT;
    double beta_start = kBetaStart;
    double beta_end = kBetaEnd;
    int denoiser_width = 32;
    int checkpoint_every = 0;  // 0: only the final checkpoint
    std::string metrics_path;
    std::string checkpoint_path;
    std::string resume_from;
};

// Mutable trainer state that rides along with the parameters in a checkpoint.
struct CheckpointExtra {
    uint64_t step = 0;
    std::array<uint64_t, 4> rng{};
    int64_t adam_t = 0;
    std::map<std::string, Tensor> adam_m, adam_v;
};

void save_checkpoint(const std::string& path, const ParamStore& ps, const ModelConfig& cfg,
                     const CheckpointExtra& ex);
// Replaces the store's parameters. The embedded config echo must match `cfg`.
void load_checkpoint(const std::string& path, ParamStore& ps, const ModelConfig& cfg,
                     CheckpointExtra* ex = nullptr);

struct TrainResult {
    std::vector<double> totals;  // weighted total per step (this run's steps only)
    std::string checkpoint;
};

// Stage-dispatching training loop. Metrics lines are appended per step:
// step, bpp, L_rate, L_spatial, L_frequency, L_noise, total (tab-separated,
// raw component values; total is the weighted sum). Deterministic per seed.
TrainResult train(const TrainConfig& cfg, const std::vector<Tensor>& dataset, ParamStore& ps);

}  // namespace ffabic
