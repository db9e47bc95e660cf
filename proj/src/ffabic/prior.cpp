#include "prior.hpp"

#include <cmath>

#include "errors.hpp"
#include "optim.hpp"
#include "spatial.hpp"
#include "transforms.hpp"

namespace ffabic {

namespace {

void check_image(const Tensor& x, int down_factor) {
    if (x.ndim() != 3 || x.shape[0] != 3) throw input_error("prior input must be [3,H,W]");
    if (x.shape[1] % down_factor != 0 || x.shape[2] % down_factor != 0)
        throw input_error("prior input dims must be padded to the down factor");
}

// binomial [1,2,1]/4 blur with replicate edges, then 2x2 mean
Tensor blur_down(const Tensor& x) {
    int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    size_t plane = (size_t)h * w;
    Tensor tmp(x.shape);
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int xi = 0; xi < w; ++xi) {
                const float* row = &x.v[(size_t)ci * plane + (size_t)y * w];
                float l = row[xi > 0 ? xi - 1 : 0], r = row[xi < w - 1 ? xi + 1 : w - 1];
                tmp.v[(size_t)ci * plane + (size_t)y * w + xi] = (l + 2.0f * row[xi] + r) * 0.25f;
            }
    Tensor blur(x.shape);
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y) {
            int u = y > 0 ? y - 1 : 0, d = y < h - 1 ? y + 1 : h - 1;
            for (int xi = 0; xi < w; ++xi) {
                size_t col = (size_t)ci * plane + xi;
                blur.v[col + (size_t)y * w] = (tmp.v[col + (size_t)u * w] +
                                               2.0f * tmp.v[col + (size_t)y * w] +
                                               tmp.v[col + (size_t)d * w]) *
                                              0.25f;
            }
        }
    Tensor out({c, h / 2, w / 2});
    size_t oplane = (size_t)(h / 2) * (w / 2);
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h / 2; ++y)
            for (int xi = 0; xi < w / 2; ++xi) {
                size_t b = (size_t)ci * plane + (size_t)(2 * y) * w + 2 * xi;
                out.v[(size_t)ci * oplane + (size_t)y * (w / 2) + xi] =
                    (blur.v[b] + blur.v[b + 1] + blur.v[b + w] + blur.v[b + w + 1]) * 0.25f;
            }
    return out;
}

Tensor lift_channels(const Tensor& x, const Tensor& wmat) {
    int cin = x.shape[0], cout = wmat.shape[0];
    if (wmat.shape[1] != cin) throw contract_error("lift width mismatch");
    int h = x.shape[1], w = x.shape[2];
    size_t plane = (size_t)h * w;
    Tensor out({cout, h, w});
    for (int o = 0; o < cout; ++o)
        for (size_t i = 0; i < plane; ++i) {
            float acc = 0.0f;
            for (int j = 0; j < cin; ++j)
                acc += wmat.v[(size_t)o * cin + j] * x.v[(size_t)j * plane + i];
            out.v[(size_t)o * plane + i] = acc;
        }
    return out;
}

Tensor up2_plain(const Tensor& x) {
    int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor out({c, 2 * h, 2 * w});
    size_t plane = (size_t)h * w, oplane = plane * 4;
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < 2 * h; ++y)
            for (int xi = 0; xi < 2 * w; ++xi)
                out.v[(size_t)ci * oplane + (size_t)y * (2 * w) + xi] =
                    x.v[(size_t)ci * plane + (size_t)(y / 2) * w + xi / 2];
    return out;
}

// shared toy-autoencoder graphs; e2 is the linear content head
template <typename G>
int toy_encode(G& g, int x, int* act0, int* act1) {
    auto& t = g.tape;
    int a0 = t.silu(conv(g, x, "tp.e0", 2, 2));
    int a1 = t.silu(conv(g, a0, "tp.e1", 2, 2));
    if (act0) *act0 = a0;
    if (act1) *act1 = a1;
    return conv(g, a1, "tp.e2", 1, 1);
}

template <typename G>
int toy_decode_graph(G& g, int content) {
    auto& t = g.tape;
    int d0 = t.silu(conv(g, content, "tp.d0", 1, 1));
    int d1 = t.silu(conv(g, up2_nearest(g, d0), "tp.d1", 1, 1));
    int d2 = t.silu(conv(g, up2_nearest(g, d1), "tp.d2", 1, 1));
    return conv(g, d2, "tp.d3", 1, 1);
}

}  // namespace

FixedFilterPrior::FixedFilterPrior(const ModelConfig& cfg, uint64_t seed)
    : stages_(analysis_stages(cfg)), down_factor_(cfg.down_factor) {
    Rng rng(seed);
    for (int i = 0; i < stages_; ++i) {
        int c = prior_level_channels(i);
        Tensor w({c, 3});
        float s = 1.0f / std::sqrt(3.0f);
        for (auto& v : w.v) v = (float)rng.uniform(-s, s);
        lifts_.push_back(std::move(w));
    }
    int ctop = prior_level_channels(stages_ - 1);
    content_lift_ = Tensor({kContentChannels, ctop});
    float s = 1.0f / std::sqrt((float)ctop);
    for (auto& v : content_lift_.v) v = (float)rng.uniform(-s, s);
}

PriorFeatures FixedFilterPrior::extract(const Tensor& x) const {
    check_image(x, down_factor_);
    PriorFeatures out;
    out.provider = id();
    Tensor pyr = x;
    for (int i = 0; i < stages_; ++i) {
        pyr = blur_down(pyr);
        out.levels.push_back(lift_channels(pyr, lifts_[(size_t)i]));
    }
    return out;
}

Tensor FixedFilterPrior::content_target(const Tensor& x) const {
    PriorFeatures f = extract(x);
    Tensor top = f.levels.back();
    while (top.shape[1] < x.shape[1] / 4) top = up2_plain(top);
    return lift_channels(top, content_lift_);
}

ToyLatentPrior::ToyLatentPrior(const ModelConfig& cfg)
    : stages_(analysis_stages(cfg)), down_factor_(cfg.down_factor) {}

ToyLatentPrior::ToyLatentPrior(const ModelConfig& cfg, ParamStore weights)
    : stages_(analysis_stages(cfg)), down_factor_(cfg.down_factor), ps_(std::move(weights)) {
    trained_ = ps_.has("tp.e0.w");
}

PriorFeatures ToyLatentPrior::extract(const Tensor& x) const {
    if (!trained_) throw state_error("toy prior is untrained");
    check_image(x, down_factor_);
    Tape tape;
    Graph g = bind_params(tape, ps_, false);
    int a0 = -1, a1 = -1;
    toy_encode(g, tape.leaf(x), &a0, &a1);
    PriorFeatures out;
    out.provider = id();
    out.levels.push_back(tape.val(a0));
    int lvl = a1;
    for (int i = 1; i < stages_; ++i) {
        out.levels.push_back(tape.val(lvl));
        if (i + 1 < stages_) lvl = tape.avgpool2(lvl);
    }
    return out;
}

Tensor ToyLatentPrior::content_target(const Tensor& x) const {
    if (!trained_) throw state_error("toy prior is untrained");
    check_image(x, down_factor_);
    Tape tape;
    Graph g = bind_params(tape, ps_, false);
    int content = toy_encode(g, tape.leaf(x), nullptr, nullptr);
    return tape.val(content);
}

Tensor ToyLatentPrior::decode(const Tensor& content) const {
    if (!trained_) throw state_error("toy prior is untrained");
    if (content.ndim() != 3 || content.shape[0] != kContentChannels)
        throw input_error("content tensor must be [16,h,w]");
    Tape tape;
    Graph g = bind_params(tape, ps_, false);
    return tape.val(toy_decode_graph(g, tape.leaf(content)));
}

void init_toy_prior(ParamStore& ps, Rng& rng) {
    init_conv(ps, "tp.e0", 16, 3, 5, 5, rng);
    init_conv(ps, "tp.e1", 32, 16, 5, 5, rng);
    init_conv(ps, "tp.e2", kContentChannels, 32, 3, 3, rng);
    init_conv(ps, "tp.d0", 32, kContentChannels, 3, 3, rng);
    init_conv(ps, "tp.d1", 32, 32, 3, 3, rng);
    init_conv(ps, "tp.d2", 16, 32, 3, 3, rng);
    init_conv(ps, "tp.d3", 3, 16, 3, 3, rng);
}

ParamStore train_toy_prior(const std::vector<Tensor>& dataset, const ToyPriorTrainConfig& cfg,
                           std::vector<double>* losses) {
    if (dataset.empty()) throw input_error("toy prior training needs a non-empty dataset");
    ParamStore ps;
    Rng rng(cfg.seed);
    init_toy_prior(ps, rng);
    AdamConfig ac;
    ac.lr = cfg.lr;
    Adam opt(ps, ac);
    for (int step = 0; step < cfg.steps; ++step) {
        const Tensor& x = dataset[(size_t)rng.below(dataset.size())];
        Tape tape;
        Graph g = bind_params(tape, ps, true);
        int xid = tape.leaf(x);
        int recon = toy_decode_graph(g, toy_encode(g, xid, nullptr, nullptr));
        int loss = tape.mse(recon, xid);
        if (losses) losses->push_back((double)tape.val(loss).v[0]);
        tape.backward(loss);
        opt.step(tape, g);
    }
    return ps;
}

}  // namespace ffabic
