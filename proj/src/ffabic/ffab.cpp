#include "ffab.hpp"

#include <cmath>

#include "errors.hpp"

namespace ffabic {

std::array<WindowSpec, 4> band_shapes(int s) {
    if (s < 2 || s % 2 != 0) throw config_error("window scale must be even and >= 2");
    int lo = s / 2, hi = 2 * s;
    return {WindowSpec{hi, hi}, WindowSpec{lo, lo}, WindowSpec{hi, lo}, WindowSpec{lo, hi}};
}

void init_ffab_block(ParamStore& ps, const std::string& prefix, int c, int heads, int s, Rng& rng,
                     int fft_block) {
    if (c % 4 != 0 || c % heads != 0 || heads % 4 != 0)
        throw config_error("ffab block needs c % 4 == 0, c % heads == 0, heads % 4 == 0");
    init_layernorm(ps, prefix + ".norm1", c);
    init_conv(ps, prefix + ".qkv", 3 * c, c, 1, 1, rng);
    init_conv(ps, prefix + ".proj", c, c, 1, 1, rng);
    init_layernorm(ps, prefix + ".norm2", c);
    init_conv(ps, prefix + ".ffn1", 2 * c, c, 1, 1, rng);
    init_conv(ps, prefix + ".ffn2", c, 2 * c, 1, 1, rng);
    // bias tables start flat and filters start as the identity response, so a
    // fresh block's attention is purely content-driven and its FFN modulation
    // is a no-op
    int hg = heads / 4;
    auto wins = band_shapes(s);
    for (int b = 0; b < 4; ++b) {
        const WindowSpec& w = wins[(size_t)b];
        ps.add(prefix + ".bias" + std::to_string(b), {(2 * w.h - 1) * (2 * w.w - 1) * hg});
        Tensor& f = ps.add(prefix + ".filt" + std::to_string(b), {fft_block, fft_block});
        for (auto& v : f.v) v = 1.0f;
    }
}

namespace {

// gather map: [C,H,W] plane -> per-window head-major tokens [nw*hg, dh, t]
std::shared_ptr<std::vector<int64_t>> plane_to_heads_map(const PadInfo& info, int hg, int dh) {
    int wh = info.win.h, ww = info.win.w;
    int t = wh * ww;
    int nw = info.count();
    int cg = info.c;
    const auto& pmap = *window_partition_map(info);  // [nw, cg, wh, ww] -> [cg,H,W]
    auto out = std::make_shared<std::vector<int64_t>>((size_t)nw * cg * t);
    for (int w = 0; w < nw; ++w)
        for (int h = 0; h < hg; ++h)
            for (int d = 0; d < dh; ++d)
                for (int i = 0; i < t; ++i) {
                    size_t dst = (((size_t)w * hg + h) * dh + d) * t + i;
                    size_t mid = (((size_t)w * cg + h * dh + d) * t) + i;
                    (*out)[dst] = pmap[mid];
                }
    return out;
}

// inverse: [nw*hg, dh, t] tokens -> [C,H,W] plane (reads only valid tokens)
std::shared_ptr<std::vector<int64_t>> heads_to_plane_map(const PadInfo& info, int hg, int dh) {
    int wh = info.win.h, ww = info.win.w;
    int t = wh * ww;
    int nwx = (info.w + ww - 1) / ww;
    auto out = std::make_shared<std::vector<int64_t>>((size_t)info.c * info.h * info.w);
    size_t i = 0;
    for (int c = 0; c < info.c; ++c) {
        int h = c / dh, d = c % dh;
        for (int y = 0; y < info.h; ++y)
            for (int x = 0; x < info.w; ++x) {
                int w = (y / wh) * nwx + x / ww;
                int tok = (y % wh) * ww + x % ww;
                (*out)[i++] = (((int64_t)w * hg + h) * dh + d) * t + tok;
            }
    }
    return out;
}

// swin-style relative position index: bias[relidx(i,j)*hg + h]
std::shared_ptr<std::vector<int64_t>> rel_bias_map(const PadInfo& info, int hg) {
    int wh = info.win.h, ww = info.win.w;
    int t = wh * ww;
    int nw = info.count();
    auto out = std::make_shared<std::vector<int64_t>>((size_t)nw * hg * t * t);
    size_t i = 0;
    for (int w = 0; w < nw; ++w)
        for (int h = 0; h < hg; ++h)
            for (int qi = 0; qi < t; ++qi)
                for (int kj = 0; kj < t; ++kj) {
                    int dy = qi / ww - kj / ww + wh - 1;
                    int dx = qi % ww - kj % ww + ww - 1;
                    (*out)[i++] = ((int64_t)dy * (2 * ww - 1) + dx) * hg + h;
                }
    return out;
}

template <typename T>
int attend_band(GraphT<T>& g, int q, int k, int v, const PadInfo& info, int hg, int bias_id) {
    auto& tape = g.tape;
    int cg = info.c;
    int dh = cg / hg;
    int t = info.win.h * info.win.w;
    int nw = info.count();
    int bsz = nw * hg;

    auto fwd = plane_to_heads_map(info, hg, dh);
    int qe = tape.gather(q, fwd, {bsz, dh, t});
    int ke = tape.gather(k, fwd, {bsz, dh, t});
    int ve = tape.gather(v, fwd, {bsz, dh, t});
    qe = tape.scale(qe, (T)(1.0 / std::sqrt((double)dh)));

    int logits = tape.bmm(qe, ke, true, false);  // [bsz, t, t]
    logits = tape.add(logits, tape.gather(bias_id, rel_bias_map(info, hg), {bsz, t, t}));

    if (info.ph != info.h || info.pw != info.w) {
        // exclude padded keys for every query
        const auto& pmap = *window_partition_map(info);
        TensorT<T> mask({bsz, t, t});
        for (int w = 0; w < nw; ++w)
            for (int kj = 0; kj < t; ++kj) {
                if (pmap[(size_t)w * cg * t + kj] >= 0) continue;
                for (int h = 0; h < hg; ++h) {
                    T* row = mask.data() + ((size_t)(w * hg + h) * t) * t;
                    for (int qi = 0; qi < t; ++qi) row[(size_t)qi * t + kj] = (T)-1e9;
                }
            }
        logits = tape.add(logits, tape.leaf(std::move(mask)));
    }

    int attn = tape.softmax_lastdim(logits);
    int oe = tape.bmm(ve, attn, false, true);  // [bsz, dh, t]
    return tape.gather(oe, heads_to_plane_map(info, hg, dh), {cg, info.h, info.w});
}

template <typename T>
int freq_ffn_modulate(GraphT<T>& g, int x, const std::string& prefix, int c, int fft_block) {
    auto& tape = g.tape;
    const auto& xv = tape.val(x);
    int H = xv.shape[1], W = xv.shape[2];
    int cg = c / 4;
    PadInfo info = make_pad_info(cg, H, W, WindowSpec{fft_block, fft_block});
    std::vector<int> parts;
    for (int b = 0; b < 4; ++b) {
        int xs = tape.slice_ch(x, b * cg, (b + 1) * cg);
        int blocks = tape.gather(xs, window_partition_map(info),
                                 {info.count() * cg, fft_block, fft_block});
        int mod = tape.freq_modulate(blocks, g.p(prefix + ".filt" + std::to_string(b)));
        parts.push_back(tape.gather(mod, window_merge_map(info), {cg, H, W}));
    }
    return tape.concat_ch(parts);
}

}  // namespace

template <typename T>
int build_ffab_block(GraphT<T>& g, int x, const std::string& prefix, int c, int heads, int s,
                     int fft_block) {
    auto& tape = g.tape;
    const auto& xv = tape.val(x);
    if (xv.ndim() != 3 || xv.shape[0] != c) throw contract_error("ffab block: bad input shape");
    int H = xv.shape[1], W = xv.shape[2];
    int hg = heads / 4;
    int cg = c / 4;

    int n1 = tape.layernorm_ch(x, g.p(prefix + ".norm1.g"), g.p(prefix + ".norm1.b"));
    int qkv = conv(g, n1, prefix + ".qkv");
    int q = tape.slice_ch(qkv, 0, c);
    int k = tape.slice_ch(qkv, c, 2 * c);
    int v = tape.slice_ch(qkv, 2 * c, 3 * c);

    auto wins = band_shapes(s);
    std::vector<int> bands;
    for (int b = 0; b < 4; ++b) {
        int qb = tape.slice_ch(q, b * cg, (b + 1) * cg);
        int kb = tape.slice_ch(k, b * cg, (b + 1) * cg);
        int vb = tape.slice_ch(v, b * cg, (b + 1) * cg);
        PadInfo info = make_pad_info(cg, H, W, wins[(size_t)b]);
        int ob = attend_band(g, qb, kb, vb, info, hg, g.p(prefix + ".bias" + std::to_string(b)));
        if (g.probes) {
            const auto& ov = tape.val(ob);
            Tensor probe({H, W});
            for (int ch = 0; ch < cg; ++ch)
                for (size_t p = 0; p < (size_t)H * W; ++p)
                    probe.v[p] += (float)std::fabs((double)ov.v[(size_t)ch * H * W + p]) / cg;
            (*g.probes)[prefix + ".band" + std::to_string(b)] = std::move(probe);
        }
        bands.push_back(ob);
    }
    int att = conv(g, tape.concat_ch(bands), prefix + ".proj");
    int t = tape.add(x, att);

    int n2 = tape.layernorm_ch(t, g.p(prefix + ".norm2.g"), g.p(prefix + ".norm2.b"));
    int f = conv(g, n2, prefix + ".ffn1");
    f = tape.gelu(f);
    f = conv(g, f, prefix + ".ffn2");
    f = freq_ffn_modulate(g, f, prefix, c, fft_block);
    return tape.add(t, f);
}

void init_iaf(ParamStore& ps, const std::string& prefix, int c_prior, int c) {
    Rng dummy(0);
    init_conv(ps, prefix + ".gamma", c, c_prior, 1, 1, dummy, true);
    init_conv(ps, prefix + ".beta", c, c_prior, 1, 1, dummy, true);
}

template <typename T>
int build_iaf(GraphT<T>& g, int y, int f, const std::string& prefix) {
    int gm = conv(g, f, prefix + ".gamma");
    int bt = conv(g, f, prefix + ".beta");
    return g.tape.add(g.tape.add(y, g.tape.mul(y, gm)), bt);
}

template int build_ffab_block(GraphT<float>&, int, const std::string&, int, int, int, int);
template int build_ffab_block(GraphT<double>&, int, const std::string&, int, int, int, int);
template int build_iaf(GraphT<float>&, int, int, const std::string&);
template int build_iaf(GraphT<double>&, int, int, const std::string&);

}  // namespace ffabic
