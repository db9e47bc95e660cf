#include "diffusion.hpp"

#include <cmath>
#include <memory>

#include "errors.hpp"
#include "ffab.hpp"
#include "spatial.hpp"
#include "transforms.hpp"

namespace ffabic {

double NoiseSchedule::abar(int t) const {
    if (t == 0) return 1.0;
    if (t < 1 || t > T) throw input_error("timestep out of [0,T]");
    return alpha_bar[(size_t)(t - 1)];
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw config_error("schedule needs at least one step");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw config_error("betas must satisfy 0 < start <= end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize((size_t)T);
    s.alpha_bar.resize((size_t)T);
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        double b = T > 1 ? beta_start + (beta_end - beta_start) * ((double)i / (T - 1)) : beta_start;
        s.beta[(size_t)i] = b;
        prod *= 1.0 - b;
        s.alpha_bar[(size_t)i] = prod;
    }
    return s;
}

static void check_pair(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape != b.shape) throw contract_error(std::string(what) + ": shapes differ");
}

Tensor add_noise(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s) {
    if (t < 1 || t > s.T) throw input_error("timestep out of [1,T]");
    check_pair(z0, eps, "add_noise");
    double ab = s.abar(t);
    double ca = std::sqrt(ab), ce = std::sqrt(1.0 - ab);
    Tensor out(z0.shape);
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = (float)(ca * (double)z0.v[i] + ce * (double)eps.v[i]);
    return out;
}

template <typename T>
int add_noise(GraphT<T>& g, int z0, int t, int eps, const NoiseSchedule& s) {
    if (t < 1 || t > s.T) throw input_error("timestep out of [1,T]");
    double ab = s.abar(t);
    return g.tape.add(g.tape.scale(z0, (T)std::sqrt(ab)), g.tape.scale(eps, (T)std::sqrt(1.0 - ab)));
}

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& s) {
    if (t_prev < 0 || t > s.T || t <= t_prev) throw input_error("need T >= t > t_prev >= 0");
    check_pair(z_t, eps_hat, "ddim_step");
    double ab_t = s.abar(t), ab_p = s.abar(t_prev);
    double rt = std::sqrt(ab_t), re = std::sqrt(1.0 - ab_t);
    double rp = std::sqrt(ab_p), rq = std::sqrt(1.0 - ab_p);
    Tensor out(z_t.shape);
    for (size_t i = 0; i < out.v.size(); ++i) {
        double e = (double)eps_hat.v[i];
        double z0 = ((double)z_t.v[i] - re * e) / rt;
        out.v[i] = (float)(rp * z0 + rq * e);
    }
    return out;
}

inline constexpr int kTembDim = 64;

void init_denoiser(ParamStore& ps, int T, Rng& rng, int width) {
    if (T < 1) throw config_error("schedule needs at least one step");
    if (width < 1) throw config_error("denoiser width must be positive");
    Tensor& emb = ps.add("dn.temb", {T, kTembDim});
    for (float& x : emb.v) x = (float)rng.uniform(-0.5, 0.5);
    init_conv(ps, "dn.t0", width, kTembDim, 1, 1, rng);
    init_conv(ps, "dn.t1", 2 * width, kTembDim, 1, 1, rng);
    init_conv(ps, "dn.in", width, 2 * kContentChannels, 3, 3, rng);
    init_iaf(ps, "dn.iaf0", kContentChannels, width);
    init_conv(ps, "dn.down", 2 * width, width, 3, 3, rng);
    init_iaf(ps, "dn.iaf1", kContentChannels, 2 * width);
    init_conv(ps, "dn.mid", 2 * width, 2 * width, 3, 3, rng);
    init_conv(ps, "dn.up", width, 2 * width, 3, 3, rng);
    init_conv(ps, "dn.out", kContentChannels, width, 3, 3, rng, /*zero=*/true);
}

// temb row -> 1x1 conv -> per-channel bias broadcast over the spatial grid
template <typename T>
static int add_timestep_bias(GraphT<T>& g, int x, int trow, const std::string& proj) {
    auto& tp = g.tape;
    int b = tp.conv2d(trow, g.p(proj + ".w"), g.p(proj + ".b"), 1, 0);  // [C,1,1]
    const auto& xs = tp.val(x).shape;
    int c = xs[0], h = xs[1], w = xs[2];
    int flat = tp.add_bcast_last(tp.reshape(x, {c, h * w}), tp.reshape(b, {c, 1}));
    return tp.reshape(flat, {c, h, w});
}

template <typename T>
int build_denoiser(GraphT<T>& g, int z_t, int t, int z_c) {
    auto& tp = g.tape;
    const auto& zs = tp.val(z_t).shape;
    if (zs.size() != 3 || zs[0] != kContentChannels) throw contract_error("z_t must be [16,h,w]");
    if (tp.val(z_c).shape != zs) throw contract_error("z_c must match z_t shape");
    if (zs[1] % 2 || zs[2] % 2) throw input_error("denoiser needs even spatial dims");
    int T_table = tp.val(g.p("dn.temb")).shape[0];
    if (t < 1 || t > T_table) throw input_error("timestep out of [1,T]");

    auto map = std::make_shared<std::vector<int64_t>>((size_t)kTembDim);
    for (int i = 0; i < kTembDim; ++i) (*map)[(size_t)i] = (int64_t)(t - 1) * kTembDim + i;
    int trow = tp.reshape(tp.gather(g.p("dn.temb"), map, {kTembDim}), {kTembDim, 1, 1});

    int x = tp.concat_ch({z_t, z_c});
    int h0 = tp.conv2d(x, g.p("dn.in.w"), g.p("dn.in.b"), 1, 1);
    h0 = tp.silu(add_timestep_bias(g, h0, trow, "dn.t0"));
    h0 = build_iaf(g, h0, z_c, "dn.iaf0");

    int d = tp.conv2d(h0, g.p("dn.down.w"), g.p("dn.down.b"), 2, 1);
    d = tp.silu(add_timestep_bias(g, d, trow, "dn.t1"));
    d = build_iaf(g, d, tp.avgpool2(z_c), "dn.iaf1");

    int m = tp.silu(tp.conv2d(d, g.p("dn.mid.w"), g.p("dn.mid.b"), 1, 1));
    int u = up2_nearest(g, m);
    u = tp.silu(tp.conv2d(u, g.p("dn.up.w"), g.p("dn.up.b"), 1, 1));
    u = tp.add(u, h0);
    return tp.conv2d(u, g.p("dn.out.w"), g.p("dn.out.b"), 1, 1);
}

Tensor denoise_eps(const ParamStore& ps, const Tensor& z_t, int t, const Tensor& z_c) {
    Tape tape;
    Graph g = bind_params(tape, ps, /*needs_grad=*/false);
    int zt = tape.leaf(z_t), zc = tape.leaf(z_c);
    return tape.val(build_denoiser(g, zt, t, zc));
}

template <typename T>
int noise_loss(GraphT<T>& g, int z0, int t, int eps, int z_c, const NoiseSchedule& s) {
    int z_t = add_noise(g, z0, t, eps, s);
    int eh = build_denoiser(g, z_t, t, z_c);
    return g.tape.mse(eh, eps);
}

Tensor ddim_sample(const ParamStore& ps, const Tensor& z_c, int steps, uint64_t seed,
                   const NoiseSchedule& s) {
    if (steps < 1) throw input_error("need at least one sampling step");
    if (z_c.ndim() != 3 || z_c.shape[0] != kContentChannels)
        throw contract_error("z_c must be [16,h,w]");
    std::vector<int> ts;
    if (steps == 1) {
        ts.push_back(s.T);
    } else {
        for (int j = 0; j < steps; ++j) {
            int t = (int)std::llround((double)s.T - (double)j * (s.T - 1) / (steps - 1));
            if (ts.empty() || t < ts.back()) ts.push_back(t);  // collapse duplicates when steps > T
        }
    }
    Rng rng(seed);
    Tensor z(z_c.shape);
    for (float& x : z.v) x = (float)rng.normal();
    for (size_t j = 0; j < ts.size(); ++j) {
        int t = ts[j];
        int t_prev = j + 1 < ts.size() ? ts[j + 1] : 0;
        Tensor eps = denoise_eps(ps, z, t, z_c);
        z = ddim_step(z, eps, t, t_prev, s);
    }
    return z;
}

template int add_noise<float>(GraphT<float>&, int, int, int, const NoiseSchedule&);
template int add_noise<double>(GraphT<double>&, int, int, int, const NoiseSchedule&);
template int build_denoiser<float>(GraphT<float>&, int, int, int);
template int build_denoiser<double>(GraphT<double>&, int, int, int);
template int noise_loss<float>(GraphT<float>&, int, int, int, int, const NoiseSchedule&);
template int noise_loss<double>(GraphT<double>&, int, int, int, int, const NoiseSchedule&);

}  // namespace ffabic
