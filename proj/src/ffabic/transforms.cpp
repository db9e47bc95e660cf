#include "transforms.hpp"

#include <cmath>

#include "errors.hpp"
#include "spatial.hpp"

namespace ffabic {

int analysis_stages(const ModelConfig& cfg) {
    int s = 0;
    for (int d = cfg.down_factor; d > 1; d /= 2) ++s;
    return s;
}

int prior_level_channels(int level) { return level == 0 ? 16 : 32; }

int stage_channels(const ModelConfig& cfg, int stage) {
    return stage == analysis_stages(cfg) - 1 ? cfg.m : cfg.n;
}

namespace {
std::string stg(const std::string& base, int i) { return base + "." + std::to_string(i); }
}  // namespace

void init_analysis(ParamStore& ps, const ModelConfig& cfg, Rng& rng) {
    int stages = analysis_stages(cfg);
    int cin = 3;
    for (int i = 0; i < stages; ++i) {
        int c = stage_channels(cfg, i);
        std::string p = stg("ga", i);
        init_conv(ps, p + ".conv", c, cin, 5, 5, rng);
        for (int d = 0; d < cfg.depth; ++d)
            init_ffab_block(ps, p + ".blk" + std::to_string(d), c, cfg.heads, cfg.window_scale, rng,
                            cfg.fft_block);
        init_iaf(ps, p + ".iaf", prior_level_channels(i), c);
        cin = c;
    }
}

template <typename T>
int build_analysis(GraphT<T>& g, int x, const std::vector<int>& prior_levels, const ModelConfig& cfg) {
    int stages = analysis_stages(cfg);
    if ((int)prior_levels.size() != stages)
        throw contract_error("analysis needs one prior level per stage");
    int h = x;
    for (int i = 0; i < stages; ++i) {
        int c = stage_channels(cfg, i);
        std::string p = stg("ga", i);
        h = conv(g, h, p + ".conv", 2, 2);
        for (int d = 0; d < cfg.depth; ++d)
            h = build_ffab_block(g, h, p + ".blk" + std::to_string(d), c, cfg.heads, cfg.window_scale,
                                 cfg.fft_block);
        h = build_iaf(g, h, prior_levels[(size_t)i], p + ".iaf");
    }
    return h;
}

void init_synthesis(ParamStore& ps, const ModelConfig& cfg, Rng& rng) {
    init_conv(ps, "gs.in", cfg.n, cfg.m, 5, 5, rng);
    for (int d = 0; d < cfg.depth; ++d)
        init_ffab_block(ps, "gs.blk" + std::to_string(d), cfg.n, cfg.heads, cfg.window_scale, rng,
                        cfg.fft_block);
    init_iaf(ps, "gs.iaf", 2 * cfg.m, cfg.n);
    int ups = analysis_stages(cfg) - 2;
    for (int u = 0; u < ups; ++u) init_conv(ps, stg("gs.up", u) + ".conv", cfg.n, cfg.n, 5, 5, rng);
    init_conv(ps, "gs.out", kContentChannels, cfg.n, 5, 5, rng);
}

template <typename T>
int build_synthesis(GraphT<T>& g, int y_hat, int w_feat, const ModelConfig& cfg) {
    int h = conv(g, y_hat, "gs.in", 1, 2);
    for (int d = 0; d < cfg.depth; ++d)
        h = build_ffab_block(g, h, "gs.blk" + std::to_string(d), cfg.n, cfg.heads, cfg.window_scale,
                             cfg.fft_block);
    h = build_iaf(g, h, w_feat, "gs.iaf");
    int ups = analysis_stages(cfg) - 2;
    for (int u = 0; u < ups; ++u) {
        h = up2_nearest(g, h);
        h = g.tape.gelu(conv(g, h, stg("gs.up", u) + ".conv", 1, 2));
    }
    return conv(g, h, "gs.out", 1, 2);
}

void init_hyper_enc(ParamStore& ps, const ModelConfig& cfg, Rng& rng) {
    int top = analysis_stages(cfg) - 1;
    init_iaf(ps, "ha.iaf", prior_level_channels(top), cfg.m);
    init_conv(ps, "ha.conv0", cfg.hyper_ch, cfg.m, 5, 5, rng);
    init_conv(ps, "ha.conv1", cfg.hyper_ch, cfg.hyper_ch, 5, 5, rng);
}

template <typename T>
int build_hyper_enc(GraphT<T>& g, int y, int prior_top, const ModelConfig& cfg) {
    int h = build_iaf(g, y, prior_top, "ha.iaf");
    h = g.tape.gelu(conv(g, h, "ha.conv0", 2, 2));
    return conv(g, h, "ha.conv1", 2, 2);
}

void init_hyper_dec(ParamStore& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng) {
    init_conv(ps, prefix + ".conv0", 2 * cfg.hyper_ch, cfg.hyper_ch, 5, 5, rng);
    init_conv(ps, prefix + ".conv1", 2 * cfg.m, 2 * cfg.hyper_ch, 5, 5, rng);
}

template <typename T>
int build_hyper_dec(GraphT<T>& g, int z_hat, const std::string& prefix, int yh, int yw,
                    const ModelConfig& cfg) {
    int h = up2_nearest(g, z_hat);
    h = g.tape.gelu(conv(g, h, prefix + ".conv0", 1, 2));
    h = up2_nearest(g, h);
    h = conv(g, h, prefix + ".conv1", 1, 2);
    return crop_hw(g, h, yh, yw);
}

template int build_analysis(GraphT<float>&, int, const std::vector<int>&, const ModelConfig&);
template int build_analysis(GraphT<double>&, int, const std::vector<int>&, const ModelConfig&);
template int build_synthesis(GraphT<float>&, int, int, const ModelConfig&);
template int build_synthesis(GraphT<double>&, int, int, const ModelConfig&);
template int build_hyper_enc(GraphT<float>&, int, int, const ModelConfig&);
template int build_hyper_enc(GraphT<double>&, int, int, const ModelConfig&);
template int build_hyper_dec(GraphT<float>&, int, const std::string&, int, int, const ModelConfig&);
template int build_hyper_dec(GraphT<double>&, int, const std::string&, int, int, const ModelConfig&);

}  // namespace ffabic
