#include "entropy.hpp"

#include <cmath>

#include "errors.hpp"
#include "transforms.hpp"

namespace ffabic {

static const int kSliceWeights[10] = {1, 1, 2, 2, 2, 2, 3, 3, 4, 4};
static const int kPriorDims[5] = {1, 3, 3, 3, 1};

std::vector<int> slice_sizes(int m) {
    if (m % 24 != 0) throw config_error("latent channels must be divisible by 24");
    std::vector<int> s(10);
    for (int i = 0; i < 10; ++i) s[(size_t)i] = m / 24 * kSliceWeights[i];
    return s;
}

std::vector<int> slice_offsets(int m) {
    auto s = slice_sizes(m);
    std::vector<int> off(11, 0);
    for (int i = 0; i < 10; ++i) off[(size_t)i + 1] = off[(size_t)i] + s[(size_t)i];
    return off;
}

void init_entropy(ParamStore& ps, const ModelConfig& cfg, Rng& rng) {
    auto sizes = slice_sizes(cfg.m);
    auto offs = slice_offsets(cfg.m);
    for (int i = 0; i < 10; ++i) {
        int cin = 2 * cfg.m + offs[(size_t)i];
        std::string p = "ch." + std::to_string(i);
        init_conv(ps, p + ".c0", 32, cin, 3, 3, rng);
        init_conv(ps, p + ".c1", 32, 32, 1, 1, rng);
        init_conv(ps, p + ".c2", 2 * sizes[(size_t)i], 32, 1, 1, rng);
    }
    // factorized prior: softplus weights sized so the initial CDF spreads over
    // roughly +-10 units instead of saturating, flat gates, spread biases
    const double spread = std::pow(10.0, 0.25);
    int c = cfg.hyper_ch;
    for (int k = 0; k < 4; ++k) {
        Tensor& H = ps.add("fz.H" + std::to_string(k), {c, kPriorDims[k + 1], kPriorDims[k]});
        float h0 = (float)std::log(std::expm1(1.0 / (spread * kPriorDims[k + 1])));
        for (auto& v : H.v) v = h0;
        Tensor& b = ps.add("fz.b" + std::to_string(k), {c, kPriorDims[k + 1], 1});
        for (auto& v : b.v) v = (float)rng.uniform(-0.5, 0.5);
        if (k < 3) ps.add("fz.a" + std::to_string(k), {c, kPriorDims[k + 1], 1});
    }
}

template <typename T>
std::pair<int, int> build_char_params(GraphT<T>& g, const std::vector<int>& cond, int slice,
                                      const ModelConfig& cfg) {
    auto sizes = slice_sizes(cfg.m);
    int si = sizes[(size_t)slice];
    std::string p = "ch." + std::to_string(slice);
    int h = cond.size() == 1 ? cond[0] : g.tape.concat_ch(cond);
    h = g.tape.gelu(conv(g, h, p + ".c0", 1, 1));
    h = g.tape.gelu(conv(g, h, p + ".c1"));
    int out = conv(g, h, p + ".c2");
    int mu = g.tape.slice_ch(out, 0, si);
    int sigma = g.tape.clamp_min_pt(g.tape.softplus_(g.tape.slice_ch(out, si, 2 * si)), (T)kSigmaFloor);
    return {mu, sigma};
}

namespace {

template <typename T>
int prior_cdf_graph(GraphT<T>& g, int x) {  // x: [C, 1, N]
    auto& tape = g.tape;
    int h = x;
    for (int k = 0; k < 4; ++k) {
        int w = tape.softplus_(g.p("fz.H" + std::to_string(k)));
        h = tape.add_bcast_last(tape.bmm(w, h), g.p("fz.b" + std::to_string(k)));
        if (k < 3) {
            int gate = tape.tanh_(g.p("fz.a" + std::to_string(k)));
            h = tape.add(h, tape.mul_bcast_last(tape.tanh_(h), gate));
        }
    }
    return tape.sigmoid_(h);
}

template <typename T>
TensorT<T> uniform_noise(Rng& rng, const std::vector<int>& shape) {
    TensorT<T> t(shape);
    for (auto& v : t.v) v = (T)rng.uniform(-0.5, 0.5);
    return t;
}

}  // namespace

template <typename T>
int factorized_bits(GraphT<T>& g, int z_vals, const ModelConfig& cfg) {
    auto& tape = g.tape;
    const auto& zv = tape.val(z_vals);
    if (zv.ndim() != 3 || zv.shape[0] != cfg.hyper_ch)
        throw contract_error("factorized_bits: bad hyper latent shape");
    int n = zv.shape[1] * zv.shape[2];
    int flat = tape.reshape(z_vals, {cfg.hyper_ch, 1, n});
    int hi = prior_cdf_graph(g, tape.add_const(flat, (T)0.5));
    int lo = prior_cdf_graph(g, tape.add_const(flat, (T)-0.5));
    int p = tape.clamp_min_pt(tape.sub(hi, lo), (T)1e-30);
    int bits = tape.scale(tape.log_(p), (T)(-1.4426950408889634));
    return tape.sum(tape.clamp_min_pt(bits, (T)kBitsFloor));
}

double factorized_cdf(const ParamStore& ps, int channel, double x) {
    double buf[3] = {x, 0, 0};
    double nxt[3];
    for (int k = 0; k < 4; ++k) {
        int din = kPriorDims[k], dout = kPriorDims[k + 1];
        const Tensor& H = ps.at("fz.H" + std::to_string(k));
        const Tensor& b = ps.at("fz.b" + std::to_string(k));
        for (int o = 0; o < dout; ++o) {
            double acc = (double)b.v[(size_t)(channel * dout + o)];
            for (int i = 0; i < din; ++i) {
                double w = (double)H.v[(size_t)((channel * dout + o) * din + i)];
                double sp = w > 30.0 ? w : std::log1p(std::exp(w));
                acc += sp * buf[i];
            }
            nxt[o] = acc;
        }
        if (k < 3) {
            const Tensor& a = ps.at("fz.a" + std::to_string(k));
            for (int o = 0; o < dout; ++o)
                nxt[o] += std::tanh((double)a.v[(size_t)(channel * dout + o)]) * std::tanh(nxt[o]);
        }
        for (int o = 0; o < dout; ++o) buf[o] = nxt[o];
    }
    return 1.0 / (1.0 + std::exp(-buf[0]));
}

template <typename T>
EntropyOut build_entropy(GraphT<T>& g, int y, int z, const ModelConfig& cfg, const QuantSpec<T>& q) {
    auto& tape = g.tape;
    const auto& yv = tape.val(y);
    const auto& zv = tape.val(z);
    int yh = yv.shape[1], yw = yv.shape[2];

    EntropyOut out;
    int z_rate = -1;
    switch (q.mode) {
        case QuantMode::Train: {
            if (!q.rng) throw contract_error("train quantization needs an rng");
            z_rate = tape.add(z, tape.leaf(uniform_noise<T>(*q.rng, zv.shape)));
            out.z_cond = tape.quantize_ste(z, nullptr);
            break;
        }
        case QuantMode::GradCheck: {
            if (!q.noise_z) throw contract_error("grad-check quantization needs frozen hyper noise");
            z_rate = tape.add(z, tape.leaf(*q.noise_z));
            out.z_cond = z_rate;
            break;
        }
        case QuantMode::Eval: {
            out.z_cond = tape.quantize_ste(z, nullptr);
            z_rate = out.z_cond;
            break;
        }
    }
    out.bits_z = factorized_bits(g, z_rate, cfg);
    out.hyper = build_hyper_dec(g, out.z_cond, "hd", yh, yw, cfg);
    out.w_feat = build_hyper_dec(g, out.z_cond, "hdw", yh, yw, cfg);

    auto offs = slice_offsets(cfg.m);
    int bits_y = -1;
    std::vector<int> cond{out.hyper};
    for (int i = 0; i < 10; ++i) {
        auto [mu, sigma] = build_char_params(g, cond, i, cfg);
        int yi = tape.slice_ch(y, offs[(size_t)i], offs[(size_t)i + 1]);
        int v = -1, y_hat_i = -1;
        switch (q.mode) {
            case QuantMode::Train: {
                v = tape.add(yi, tape.leaf(uniform_noise<T>(*q.rng, tape.val(yi).shape)));
                y_hat_i = tape.quantize_ste(yi, &tape.val(mu));
                break;
            }
            case QuantMode::GradCheck: {
                if (!q.noise_y) throw contract_error("grad-check quantization needs frozen latent noise");
                TensorT<T> slice_noise(tape.val(yi).shape);
                size_t base = (size_t)offs[(size_t)i] * yh * yw;
                for (size_t j = 0; j < (size_t)slice_noise.numel(); ++j)
                    slice_noise.v[j] = q.noise_y->v[base + j];
                v = tape.add(yi, tape.leaf(std::move(slice_noise)));
                y_hat_i = v;
                break;
            }
            case QuantMode::Eval: {
                y_hat_i = tape.quantize_ste(yi, &tape.val(mu));
                v = y_hat_i;
                break;
            }
        }
        int bi = tape.sum(tape.gaussian_bits(v, mu, sigma));
        bits_y = i == 0 ? bi : tape.add(bits_y, bi);
        out.mu.push_back(mu);
        out.sigma.push_back(sigma);
        out.y_hat_slices.push_back(y_hat_i);
        cond.push_back(y_hat_i);
    }
    out.bits_y = bits_y;
    out.y_hat = tape.concat_ch(out.y_hat_slices);
    return out;
}

template std::pair<int, int> build_char_params(GraphT<float>&, const std::vector<int>&, int,
                                               const ModelConfig&);
template std::pair<int, int> build_char_params(GraphT<double>&, const std::vector<int>&, int,
                                               const ModelConfig&);
template int factorized_bits(GraphT<float>&, int, const ModelConfig&);
template int factorized_bits(GraphT<double>&, int, const ModelConfig&);
template EntropyOut build_entropy(GraphT<float>&, int, int, const ModelConfig&, const QuantSpec<float>&);
template EntropyOut build_entropy(GraphT<double>&, int, int, const ModelConfig&, const QuantSpec<double>&);

}  // namespace ffabic
