#pragma once

#include <string>
#include <vector>

#include "model.hpp"

namespace ffabic {

// Injection features for the analysis/hyper paths: one tensor per analysis
// stage, fine to coarse, level i at 1/2^(i+1) of the (padded) image with
// prior_level_channels(i) channels.
struct PriorFeatures {
    std::vector<Tensor> levels;
    std::string provider;
};

// Encoder-side feature source. Extraction is pure: providers are immutable
// once constructed/trained, and nothing here joins the training graph.
class PriorProvider {
public:
    virtual ~PriorProvider() = default;
    virtual PriorFeatures extract(const Tensor& x) const = 0;       // x [3,H,W] in [0,1]
    virtual Tensor content_target(const Tensor& x) const = 0;      // [16, H/4, W/4]
    virtual std::string id() const = 0;
};

// Filter-bank seed shared by training and coding so both sides of a model
// see the same features when no trained prior is available.
inline constexpr uint64_t kFixedPriorSeed = 517;

// Training-free provider: Gaussian pyramid of the image, channel-lifted per
// level by a seeded fixed linear map. Lets every injection/loss test run
// without touching a trained network.
class FixedFilterPrior : public PriorProvider {
public:
    FixedFilterPrior(const ModelConfig& cfg, uint64_t seed);
    PriorFeatures extract(const Tensor& x) const override;
    Tensor content_target(const Tensor& x) const override;
    std::string id() const override { return "fixed-filter"; }

private:
    int stages_;
    int down_factor_;
    std::vector<Tensor> lifts_;  // [C_i, 3] per level
    Tensor content_lift_;        // [16, C_coarsest]
};

// Small conv autoencoder whose encoder activations become the injection
// features and whose 16-channel, quarter-resolution latent is the content
// space the codec regresses toward.
class ToyLatentPrior : public PriorProvider {
public:
    explicit ToyLatentPrior(const ModelConfig& cfg);  // untrained; extract throws
    ToyLatentPrior(const ModelConfig& cfg, ParamStore weights);

    PriorFeatures extract(const Tensor& x) const override;
    Tensor content_target(const Tensor& x) const override;
    std::string id() const override { return "toy-latent"; }

    Tensor decode(const Tensor& content) const;  // [16,h,w] -> [3,4h,4w]
    const ParamStore& params() const { return ps_; }
    bool trained() const { return trained_; }

private:
    int stages_;
    int down_factor_;
    ParamStore ps_;
    bool trained_ = false;
};

struct ToyPriorTrainConfig {
    int steps = 600;
    uint64_t seed = 1;
    double lr = 1e-3;
};

void init_toy_prior(ParamStore& ps, Rng& rng);
ParamStore train_toy_prior(const std::vector<Tensor>& dataset, const ToyPriorTrainConfig& cfg,
                           std::vector<double>* losses = nullptr);

}  // namespace ffabic
