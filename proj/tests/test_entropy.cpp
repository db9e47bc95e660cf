#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ffabic/entropy.hpp"
#include "ffabic/transforms.hpp"
#include "helpers.hpp"

using namespace ffabic;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.n = 8;
    c.m = 24;
    c.hyper_ch = 8;
    c.down_factor = 8;
    c.depth = 1;
    c.heads = 4;
    c.window_scale = 2;
    c.fft_block = 2;
    c.validate();
    return c;
}

ParamStore entropy_store(const ModelConfig& cfg, uint64_t seed) {
    ParamStore ps;
    Rng rng(seed);
    init_entropy(ps, cfg, rng);
    init_hyper_dec(ps, "hd", cfg, rng);
    init_hyper_dec(ps, "hdw", cfg, rng);
    return ps;
}

// round(x - off) + off for checking the straight-through values
float ste_round(float x, float off) { return (float)(std::round((double)x - off) + off); }

}  // namespace

TEST_CASE("slice split is the fixed uneven pattern") {
    auto s48 = slice_sizes(48);
    CHECK(s48 == std::vector<int>{2, 2, 4, 4, 4, 4, 6, 6, 8, 8});
    auto s192 = slice_sizes(192);
    CHECK(s192 == std::vector<int>{8, 8, 16, 16, 16, 16, 24, 24, 32, 32});

    auto off = slice_offsets(48);
    REQUIRE(off.size() == 11);
    CHECK(off[0] == 0);
    CHECK(off[10] == 48);
    for (int i = 0; i < 10; ++i) CHECK(off[(size_t)i + 1] - off[(size_t)i] == s48[(size_t)i]);

    CHECK_THROWS_AS(slice_sizes(25), config_error);
}

TEST_CASE("factorized cdf is a strictly increasing distribution function") {
    ModelConfig cfg = tiny();
    ParamStore ps = entropy_store(cfg, 3);
    for (int c = 0; c < cfg.hyper_ch; ++c) {
        double prev = factorized_cdf(ps, c, -40.0);
        CHECK(prev >= 0.0);
        CHECK(prev < 0.05);
        for (double x = -8.0; x <= 8.0; x += 0.25) {
            double f = factorized_cdf(ps, c, x);
            CHECK(f > prev);
            CHECK(f > 0.0);
            CHECK(f < 1.0);
            prev = f;
        }
        CHECK(factorized_cdf(ps, c, 40.0) > 0.95);
    }
}

TEST_CASE("graph rate matches the plain cdf it will be coded with") {
    ModelConfig cfg = tiny();
    ParamStore ps = entropy_store(cfg, 4);
    Rng rng(8);

    Tape tape;
    GraphT<float> g = bind_params(tape, ps, false);
    Tensor zv = testutil::random_tensor32(rng, {cfg.hyper_ch, 2, 2}, -3.f, 3.f);
    int bits = factorized_bits(g, tape.leaf(zv), cfg);

    double want = 0.0;
    for (int c = 0; c < cfg.hyper_ch; ++c)
        for (int i = 0; i < 4; ++i) {
            double v = (double)zv.v[(size_t)(c * 4 + i)];
            double p = factorized_cdf(ps, c, v + 0.5) - factorized_cdf(ps, c, v - 0.5);
            double b = -std::log2(std::max(p, 1e-30));
            want += std::max(b, (double)kBitsFloor);
        }
    CHECK(tape.val(bits).v[0] == doctest::Approx(want).epsilon(1e-4));
}

TEST_CASE("scale parameters respect the floor") {
    ModelConfig cfg = tiny();
    ParamStore ps = entropy_store(cfg, 5);
    // force the first characteristic net's output layer to a huge negative
    // bias: softplus lands far below the floor
    Tensor& w = ps.at("ch.0.c2.w");
    std::fill(w.v.begin(), w.v.end(), 0.f);
    Tensor& b = ps.at("ch.0.c2.b");
    std::fill(b.v.begin(), b.v.end(), -30.f);

    Tape tape;
    GraphT<float> g = bind_params(tape, ps, false);
    Rng rng(9);
    int hyper = tape.leaf(testutil::random_tensor32(rng, {2 * cfg.m, 3, 3}));
    auto [mu, sigma] = build_char_params(g, {hyper}, 0, cfg);
    CHECK(tape.val(mu).shape == std::vector<int>{1, 3, 3});
    CHECK(tape.val(sigma).shape == std::vector<int>{1, 3, 3});
    for (float s : tape.val(sigma).v) CHECK(s == kSigmaFloor);
}

TEST_CASE("conditioning widens with each decoded slice") {
    ModelConfig cfg = tiny();
    ParamStore ps = entropy_store(cfg, 6);
    Rng rng(10);

    Tape tape;
    GraphT<float> g = bind_params(tape, ps, false);
    auto sizes = slice_sizes(cfg.m);
    std::vector<int> cond{tape.leaf(testutil::random_tensor32(rng, {2 * cfg.m, 2, 2}))};
    for (int i = 0; i < 10; ++i) {
        auto [mu, sigma] = build_char_params(g, cond, i, cfg);
        CHECK(tape.val(mu).shape == std::vector<int>{sizes[(size_t)i], 2, 2});
        for (float s : tape.val(sigma).v) CHECK(s >= kSigmaFloor);
        cond.push_back(tape.leaf(testutil::random_tensor32(rng, {sizes[(size_t)i], 2, 2})));
    }
}

TEST_CASE("eval mode rounds onto the conditional mean grid") {
    ModelConfig cfg = tiny();
    ParamStore ps = entropy_store(cfg, 7);
    Rng rng(11);

    Tape tape;
    GraphT<float> g = bind_params(tape, ps, false);
    int y = tape.leaf(testutil::random_tensor32(rng, {cfg.m, 2, 2}, -4.f, 4.f));
    int z = tape.leaf(testutil::random_tensor32(rng, {cfg.hyper_ch, 1, 1}, -4.f, 4.f));

    QuantSpec<float> q;
    q.mode = QuantMode::Eval;
    EntropyOut out = build_entropy(g, y, z, cfg, q);

    CHECK(tape.val(out.y_hat).shape == std::vector<int>{cfg.m, 2, 2});
    CHECK(tape.val(out.hyper).shape == std::vector<int>{2 * cfg.m, 2, 2});
    CHECK(tape.val(out.w_feat).shape == std::vector<int>{2 * cfg.m, 2, 2});

    // hyper latents round to integers
    for (size_t i = 0; i < tape.val(out.z_cond).v.size(); ++i) {
        float zc = tape.val(out.z_cond).v[i];
        float zi = tape.val(z).v[i];
        CHECK(zc == (float)std::round((double)zi));
    }

    // each latent slice rounds to mu plus an integer, reproducibly from its own mu
    auto offs = slice_offsets(cfg.m);
    for (int i = 0; i < 10; ++i) {
        const Tensor& mu = tape.val(out.mu[(size_t)i]);
        const Tensor& yh = tape.val(out.y_hat_slices[(size_t)i]);
        const Tensor& yv = tape.val(y);
        for (int c = 0; c < mu.shape[0]; ++c)
            for (int p = 0; p < 4; ++p) {
                size_t k = (size_t)(c * 4 + p);
                float orig = yv.v[(size_t)((offs[(size_t)i] + c) * 4 + p)];
                CHECK(yh.v[k] == ste_round(orig, mu.v[k]));
                float delta = yh.v[k] - mu.v[k];
                CHECK(std::abs(delta - std::round(delta)) < 1e-4f);
            }
    }

    // rates are finite, positive, and respect the per-element floor
    float by = tape.val(out.bits_y).v[0];
    float bz = tape.val(out.bits_z).v[0];
    CHECK(std::isfinite(by));
    CHECK(std::isfinite(bz));
    CHECK(by >= cfg.m * 4 * kBitsFloor);
    CHECK(bz >= cfg.hyper_ch * kBitsFloor);
}

TEST_CASE("train mode keeps the rate path noisy and the conditioning path rounded") {
    ModelConfig cfg = tiny();
    ParamStore ps = entropy_store(cfg, 7);

    Rng data_rng(12);
    Tensor yv = testutil::random_tensor32(data_rng, {cfg.m, 2, 2}, -4.f, 4.f);
    Tensor zv = testutil::random_tensor32(data_rng, {cfg.hyper_ch, 1, 1}, -4.f, 4.f);

    auto run_eval = [&]() {
        Tape tape;
        GraphT<float> g = bind_params(tape, ps, false);
        QuantSpec<float> q;
        q.mode = QuantMode::Eval;
        EntropyOut out = build_entropy(g, tape.leaf(yv), tape.leaf(zv), cfg, q);
        return std::make_pair(tape.val(out.bits_y).v[0], tape.val(out.y_hat).v);
    };
    auto run_train = [&](uint64_t seed) {
        Tape tape;
        GraphT<float> g = bind_params(tape, ps, false);
        Rng qrng(seed);
        QuantSpec<float> q;
        q.mode = QuantMode::Train;
        q.rng = &qrng;
        EntropyOut out = build_entropy(g, tape.leaf(yv), tape.leaf(zv), cfg, q);
        return std::make_pair(tape.val(out.bits_y).v[0], tape.val(out.y_hat).v);
    };

    auto [eval_bits, eval_yhat] = run_eval();
    auto [train_bits_a, train_yhat_a] = run_train(100);
    auto [train_bits_b, train_yhat_b] = run_train(101);

    // noise draws move the rate estimate between seeds; rounding does not
    CHECK(train_bits_a != train_bits_b);
    CHECK(train_bits_a != eval_bits);

    // the conditioning path is rounded either way, so y_hat agrees with eval
    CHECK(train_yhat_a == eval_yhat);
    CHECK(train_yhat_b == eval_yhat);

    // train mode without an rng is a contract violation
    Tape tape;
    GraphT<float> g = bind_params(tape, ps, false);
    QuantSpec<float> q;
    q.mode = QuantMode::Train;
    CHECK_THROWS_AS(build_entropy(g, tape.leaf(yv), tape.leaf(zv), cfg, q), contract_error);
}

TEST_CASE("grad check covers the whole conditional coding graph") {
    ModelConfig cfg = tiny();
    ParamStore ps = entropy_store(cfg, 8);
    Rng rng(13);

    Tensor64 y0 = testutil::random_tensor64(rng, {cfg.m, 2, 2}, -2.0, 2.0);
    Tensor64 z0 = testutil::random_tensor64(rng, {cfg.hyper_ch, 1, 1}, -2.0, 2.0);
    Tensor64 ny = testutil::random_tensor64(rng, {cfg.m, 2, 2}, -0.5, 0.5);
    Tensor64 nz = testutil::random_tensor64(rng, {cfg.hyper_ch, 1, 1}, -0.5, 0.5);

    // perturb a couple of parameter tensors as extra leaves
    std::vector<std::string> free_names{"ch.0.c2.w", "ch.3.c0.b", "fz.H1", "fz.b0", "fz.a0",
                                        "hd.conv0.w"};
    std::vector<Tensor64> leaves{y0, z0};
    for (const auto& n : free_names) leaves.push_back(cast_tensor<double>(ps.at(n)));

    auto build = [&](Tape64& tape, const std::vector<int>& ids) {
        GraphT<double> g = bind_params(tape, ps, false);
        for (size_t i = 0; i < free_names.size(); ++i) g.ids[free_names[i]] = ids[i + 2];
        QuantSpec<double> q;
        q.mode = QuantMode::GradCheck;
        q.noise_y = &ny;
        q.noise_z = &nz;
        EntropyOut out = build_entropy(g, ids[0], ids[1], cfg, q);
        int total = tape.add(out.bits_y, out.bits_z);
        // keep the objective small so exactly-flat directions stay inside the
        // finite-difference tolerance
        return tape.scale(total, 1.0 / 1024.0);
    };

    double worst = testutil::check_graph(build, leaves, 1e-4);
    CHECK(worst < 1e-4);
}
