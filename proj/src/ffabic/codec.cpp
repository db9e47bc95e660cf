#include "codec.hpp"

#include <cmath>
#include <cstring>

#include "coder.hpp"
#include "entropy.hpp"
#include "errors.hpp"
#include "spatial.hpp"
#include "transforms.hpp"

namespace ffabic {

namespace {

constexpr char kMagic[4] = {'F', 'F', 'A', 'B'};
constexpr uint8_t kVersion = 1;

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back((uint8_t)(v >> (8 * i)));
}
void put_u16(std::vector<uint8_t>& b, uint16_t v) {
    b.push_back((uint8_t)v);
    b.push_back((uint8_t)(v >> 8));
}
void put_u64(std::vector<uint8_t>& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back((uint8_t)(v >> (8 * i)));
}

struct Cursor {
    const uint8_t* p;
    size_t len, pos = 0;
    void need(size_t n) const {
        if (pos + n > len)
            throw format_error("bitstream truncated at byte " + std::to_string(len) + " of " +
                               std::to_string(pos + n));
    }
    uint8_t u8() {
        need(1);
        return p[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = (uint16_t)(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= (uint32_t)p[pos + i] << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= (uint64_t)p[pos + i] << (8 * i);
        pos += 8;
        return v;
    }
};

int ceil_div(int a, int b) { return (a + b - 1) / b; }

// the hyper encoder downsamples twice with 5x5 stride-2 convs
int hyper_dim(int y_dim) { return ceil_div(ceil_div(y_dim, 2), 2); }

std::vector<SymbolTable> factorized_tables(const ParamStore& ps, int channels) {
    std::vector<SymbolTable> out;
    out.reserve((size_t)channels);
    for (int c = 0; c < channels; ++c) {
        std::vector<double> pmf((size_t)kAlphabetSize + 1);
        double lo = factorized_cdf(ps, c, kAlphabetMin - 0.5);
        double acc = 0.0;
        for (int k = kAlphabetMin; k <= kAlphabetMax; ++k) {
            double hi = factorized_cdf(ps, c, k + 0.5);
            double m = std::max(0.0, hi - lo);
            pmf[(size_t)(k - kAlphabetMin)] = m;
            acc += m;
            lo = hi;
        }
        pmf.back() = std::max(0.0, 1.0 - acc);  // both tails escape
        out.push_back(quantize_pmf(pmf));
    }
    return out;
}

// mirror of quantize_ste's forward arithmetic so encoder and decoder agree bitwise
int64_t symbol_of(float x, float mean) { return llround(std::round((double)x - (double)mean)); }
float reconstruct(int64_t k, float mean) { return (float)((double)k + (double)mean); }

struct Layout {
    int width, height, padded_h, padded_w, yh, yw, zh, zw;
};

Layout layout_for(int width, int height, const ModelConfig& cfg) {
    Layout l;
    l.width = width;
    l.height = height;
    l.padded_h = ceil_div(height, cfg.down_factor) * cfg.down_factor;
    l.padded_w = ceil_div(width, cfg.down_factor) * cfg.down_factor;
    l.yh = l.padded_h / cfg.down_factor;
    l.yw = l.padded_w / cfg.down_factor;
    l.zh = hyper_dim(l.yh);
    l.zw = hyper_dim(l.yw);
    return l;
}

BitstreamInfo parse_header(Cursor& c) {
    c.need(4);
    if (std::memcmp(c.p, kMagic, 4) != 0) throw format_error("not a bitstream: bad magic");
    c.pos += 4;
    BitstreamInfo info;
    info.version = c.u8();
    if (info.version != kVersion)
        throw format_error("unknown bitstream version " + std::to_string(info.version));
    info.flags = c.u8();
    info.width = (int)c.u32();
    info.height = (int)c.u32();
    info.down_factor = c.u8();
    info.m = c.u16();
    info.model_hash = c.u64();
    if (info.width < 1 || info.height < 1) throw format_error("bitstream header dims must be positive");
    return info;
}

}  // namespace

std::unique_ptr<PriorProvider> coding_provider(const ParamStore& ps, const ModelConfig& cfg) {
    if (ps.has("tp.e0.w")) return std::make_unique<ToyLatentPrior>(cfg, ps);
    return std::make_unique<FixedFilterPrior>(cfg, kFixedPriorSeed);
}

CompressResult compress(const ParamStore& ps, const ModelConfig& cfg, const Tensor& img) {
    cfg.validate();
    if (img.ndim() != 3 || img.shape[0] != 3) throw input_error("compress expects a [3,H,W] image");
    Tensor x = pad_replicate(img, cfg.down_factor);
    auto pr = coding_provider(ps, cfg);
    PriorFeatures feats = pr->extract(x);

    Tape tape;
    Graph g = bind_params(tape, ps, false);
    std::vector<int> lvl;
    lvl.reserve(feats.levels.size());
    for (const Tensor& l : feats.levels) lvl.push_back(tape.leaf(l));
    int y = build_analysis(g, tape.leaf(x), lvl, cfg);
    int z = build_hyper_enc(g, y, lvl.back(), cfg);
    QuantSpec<float> q;  // Eval: hard rounding, decoder-visible values
    EntropyOut eo = build_entropy(g, y, z, cfg, q);

    const Tensor& zraw = tape.val(z);
    auto ztab = factorized_tables(ps, cfg.hyper_ch);
    RangeEncoder ze;
    {
        int zh = zraw.shape[1], zw = zraw.shape[2];
        for (int c = 0; c < cfg.hyper_ch; ++c)
            for (int i = 0; i < zh * zw; ++i)
                encode_value(ze, ztab[(size_t)c], symbol_of(zraw.v[(size_t)c * zh * zw + i], 0.0f));
    }
    std::vector<uint8_t> zbytes = ze.finish();

    auto offs = slice_offsets(cfg.m);
    std::vector<std::vector<uint8_t>> slices;
    for (size_t i = 0; i + 1 < offs.size(); ++i) {
        const Tensor& ys = tape.val(tape.slice_ch(y, offs[i], offs[i + 1]));
        const Tensor& mu = tape.val(eo.mu[i]);
        const Tensor& sg = tape.val(eo.sigma[i]);
        RangeEncoder se;
        for (size_t j = 0; j < ys.numel(); ++j)
            encode_value(se, gaussian_table(sg.v[j]), symbol_of(ys.v[j], mu.v[j]));
        slices.push_back(se.finish());
    }

    CompressResult res;
    res.est_bits_y = (double)tape.val(eo.bits_y).v[0];
    res.est_bits_z = (double)tape.val(eo.bits_z).v[0];
    std::vector<uint8_t>& b = res.bytes;
    b.insert(b.end(), kMagic, kMagic + 4);
    b.push_back(kVersion);
    b.push_back(0);  // flags
    put_u32(b, (uint32_t)img.shape[2]);
    put_u32(b, (uint32_t)img.shape[1]);
    b.push_back((uint8_t)cfg.down_factor);
    put_u16(b, (uint16_t)cfg.m);
    put_u64(b, ps.content_hash());
    put_u32(b, (uint32_t)zbytes.size());
    b.insert(b.end(), zbytes.begin(), zbytes.end());
    for (const auto& s : slices) {
        put_u32(b, (uint32_t)s.size());
        b.insert(b.end(), s.begin(), s.end());
    }
    return res;
}

BitstreamInfo inspect_bitstream(const std::vector<uint8_t>& bytes) {
    Cursor c{bytes.data(), bytes.size()};
    BitstreamInfo info = parse_header(c);
    size_t payload = 0;
    info.z_bytes = c.u32();
    c.need(info.z_bytes);
    c.pos += info.z_bytes;
    payload += info.z_bytes;
    for (int i = 0; i < 10; ++i) {
        uint32_t n = c.u32();
        c.need(n);
        c.pos += n;
        payload += n;
        info.slice_bytes.push_back(n);
    }
    if (c.pos != c.len)
        throw format_error("trailing bytes after the last slice segment: " +
                           std::to_string(c.len - c.pos));
    info.container_bytes = bytes.size() - payload;
    return info;
}

Tensor decompress(const ParamStore& ps, const ModelConfig& cfg, const std::vector<uint8_t>& bytes,
                  const DecodeOpts& opts) {
    cfg.validate();
    BitstreamInfo info = inspect_bitstream(bytes);  // validates structure end to end
    if (info.model_hash != ps.content_hash())
        throw model_error("bitstream was produced by a different model");
    if (info.down_factor != cfg.down_factor || info.m != cfg.m)
        throw format_error("bitstream geometry disagrees with its model hash");

    Layout l = layout_for(info.width, info.height, cfg);
    Cursor c{bytes.data(), bytes.size()};
    parse_header(c);

    Tensor z_hat({cfg.hyper_ch, l.zh, l.zw});
    {
        uint32_t n = c.u32();
        RangeDecoder zd(bytes.data() + c.pos, n);
        c.pos += n;
        auto ztab = factorized_tables(ps, cfg.hyper_ch);
        for (int ch = 0; ch < cfg.hyper_ch; ++ch)
            for (int i = 0; i < l.zh * l.zw; ++i)
                z_hat.v[(size_t)ch * l.zh * l.zw + i] =
                    reconstruct(decode_value(zd, ztab[(size_t)ch]), 0.0f);
    }

    Tape tape;
    Graph g = bind_params(tape, ps, false);
    int zi = tape.leaf(z_hat);
    int hyper = build_hyper_dec(g, zi, "hd", l.yh, l.yw, cfg);
    int w_feat = build_hyper_dec(g, zi, "hdw", l.yh, l.yw, cfg);

    auto sizes = slice_sizes(cfg.m);
    std::vector<int> cond = {hyper}, slices;
    for (size_t i = 0; i < sizes.size(); ++i) {
        auto [mu, sigma] = build_char_params(g, cond, (int)i, cfg);
        const Tensor& muv = tape.val(mu);
        const Tensor& sgv = tape.val(sigma);
        uint32_t n = c.u32();
        RangeDecoder sd(bytes.data() + c.pos, n);
        c.pos += n;
        Tensor yi({sizes[i], l.yh, l.yw});
        for (size_t j = 0; j < yi.numel(); ++j)
            yi.v[j] = reconstruct(decode_value(sd, gaussian_table(sgv.v[j])), muv.v[j]);
        int node = tape.leaf(yi);
        cond.push_back(node);
        slices.push_back(node);
    }

    int y_hat = tape.concat_ch(slices);
    int z_c = build_synthesis(g, y_hat, w_feat, cfg);
    Tensor content = tape.val(z_c);

    if (!opts.bypass_diffusion) {
        if (!ps.has("dn.temb"))
            throw state_error("denoiser parameters missing; decode with bypass or train stage 3");
        int T = ps.at("dn.temb").shape[0];
        NoiseSchedule s = make_schedule(T, opts.beta_start, opts.beta_end);
        content = ddim_sample(ps, content, opts.steps, opts.seed, s);
    }

    ToyLatentPrior toy(cfg, ps);
    if (!toy.trained()) throw state_error("pixel decoder needs the trained toy prior");
    Tensor rgb = toy.decode(content);  // [3, padded_h, padded_w]

    Tensor out({3, l.height, l.width});
    for (int ch = 0; ch < 3; ++ch)
        for (int yy = 0; yy < l.height; ++yy)
            for (int xx = 0; xx < l.width; ++xx) {
                float v = rgb.v[((size_t)ch * l.padded_h + yy) * l.padded_w + xx];
                out.v[((size_t)ch * l.height + yy) * l.width + xx] = std::clamp(v, 0.0f, 1.0f);
            }
    return out;
}

}  // namespace ffabic
