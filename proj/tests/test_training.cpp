#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ffabic/dataset.hpp"
#include "ffabic/errors.hpp"
#include "ffabic/spatial.hpp"
#include "ffabic/training.hpp"
#include "helpers.hpp"

using namespace ffabic;
namespace fs = std::filesystem;

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

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

int scalar_leaf(Tape& tape, float v) { return tape.leaf(Tensor({1}, {v})); }

double eval_bpp(const ParamStore& ps, const ModelConfig& cfg, const Tensor& img,
                const PriorProvider& pr) {
    Tensor x = pad_replicate(img, cfg.down_factor);
    auto feats = pr.extract(x);
    Tape tape;
    Graph g = bind_params(tape, ps, false);
    std::vector<int> lvl;
    for (auto& l : feats.levels) lvl.push_back(tape.leaf(l));
    QuantSpec<float> q;  // hard rounding
    CodecGraph cg = build_codec_graph(g, tape.leaf(x), lvl, tape.leaf(pr.content_target(x)), cfg,
                                      q, (int64_t)x.shape[1] * x.shape[2]);
    return tape.val(cg.terms.rate).v[0];
}

uint64_t group_hash(const ParamStore& ps, const std::string& prefix) {
    uint64_t h = 14695981039346656037ULL;
    for (const auto& [name, t] : ps.params) {
        if (name.rfind(prefix, 0) != 0) continue;
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t.v.data(), t.v.size() * sizeof(float), h);
    }
    return h;
}

uint64_t codec_group_hash(const ParamStore& ps) {  // everything that is neither tp. nor dn.
    uint64_t h = 14695981039346656037ULL;
    for (const auto& [name, t] : ps.params) {
        if (name.rfind("tp.", 0) == 0 || name.rfind("dn.", 0) == 0) continue;
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t.v.data(), t.v.size() * sizeof(float), h);
    }
    return h;
}

}  // namespace

TEST_CASE("loss weights validate and recompose exactly") {
    LossWeights ok;
    ok.validate();
    LossWeights neg;
    neg.lambda3 = -0.1;
    CHECK_THROWS_AS(neg.validate(), config_error);
    LossWeights zero;
    zero.lambda1 = zero.lambda2 = zero.lambda3 = zero.lambda4 = 0.0;
    CHECK_THROWS_AS(zero.validate(), config_error);

    Tape tape;
    GraphT<float> g{tape, {}};
    LossTerms t;
    t.rate = scalar_leaf(tape, 0.37f);
    t.spatial = scalar_leaf(tape, 1.84f);
    t.frequency = scalar_leaf(tape, 0.062f);
    t.noise = scalar_leaf(tape, 0.91f);
    LossWeights w;
    w.lambda1 = 0.25;
    w.lambda2 = 1.0;
    w.lambda3 = 0.1;
    w.lambda4 = 2.0;
    int total = combine_losses(g, t, w);
    CHECK(t.total == total);
    double hand = 0.25 * 0.37f + 1.0 * 1.84f + 0.1 * 0.062f + 2.0 * 0.91f;
    CHECK(std::abs((double)tape.val(total).v[0] - hand) <= 1e-6);

    // absent terms drop out instead of contributing
    LossTerms partial;
    partial.spatial = scalar_leaf(tape, 0.5f);
    int t2 = combine_losses(g, partial, w);
    CHECK(tape.val(t2).v[0] == doctest::Approx(0.5).epsilon(1e-7));

    LossTerms none;
    CHECK_THROWS_AS(combine_losses(g, none, w), contract_error);
}

TEST_CASE("spatial loss matches its closed forms") {
    Rng rng(4);
    Tensor a = testutil::random_tensor32(rng, {5, 7, 3});
    Tape tape;
    GraphT<float> g{tape, {}};
    int ai = tape.leaf(a);
    CHECK(tape.val(spatial_loss(g, ai, ai)).v[0] == 0.0f);

    Tensor b = a;
    for (float& x : b.v) x += 1.0f;
    int bi = tape.leaf(b);
    CHECK(tape.val(spatial_loss(g, ai, bi)).v[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(tape.val(spatial_loss(g, ai, bi)).v[0] == tape.val(spatial_loss(g, bi, ai)).v[0]);

    Tensor c({5, 7, 2});
    int ci = tape.leaf(c);
    CHECK_THROWS_AS(spatial_loss(g, ai, ci), contract_error);
}

TEST_CASE("frequency loss matches direct-DFT oracles") {
    Rng rng(9);
    Tensor t = testutil::random_tensor32(rng, {2, 6, 6});

    // oracle spectrum of the target
    CTensor64 ct({2, 6, 6});
    for (size_t i = 0; i < ct.numel(); ++i) ct.v[i] = (double)t.v[i];
    CTensor64 spec = testutil::naive_dft2(ct);
    size_t active = 0;
    double amp2 = 0.0;
    for (const auto& z : spec.v) {
        if (std::abs(z) >= 1e-8) ++active;
        amp2 += std::abs(z) * std::abs(z);
    }
    amp2 /= (double)spec.numel();

    Tape tape;
    GraphT<float> g{tape, {}};
    int ti = tape.leaf(t);
    CHECK((double)tape.val(frequency_loss(g, ti, ti)).v[0] <= 1e-12);

    Tensor neg = t;
    for (float& x : neg.v) x = -x;
    double vneg = tape.val(frequency_loss(g, tape.leaf(neg), ti)).v[0];
    CHECK(vneg == doctest::Approx(4.0 * (double)active / (double)spec.numel()).epsilon(1e-9));

    Tensor twice = t;
    for (float& x : twice.v) x *= 2.0f;
    double vtwice = tape.val(frequency_loss(g, tape.leaf(twice), ti)).v[0];
    CHECK(vtwice == doctest::Approx(amp2).epsilon(1e-5));

    for (int i = 0; i < 4; ++i) {
        Tensor u = testutil::random_tensor32(rng, {2, 6, 6});
        CHECK(tape.val(frequency_loss(g, tape.leaf(u), ti)).v[0] >= 0.0f);
    }

    double err = testutil::check_graph(
        [](Tape64& tp, const std::vector<int>& ids) {
            GraphT<double> gg{tp, {}};
            return frequency_loss(gg, ids[0], ids[1]);
        },
        {testutil::random_tensor64(rng, {2, 4, 4}), testutil::random_tensor64(rng, {2, 4, 4})});
    CHECK(err <= 1e-4);
}

TEST_CASE("rate loss is additive, nonnegative, and tiling-invariant") {
    {
        Tape tape;
        GraphT<float> g{tape, {}};
        int by = scalar_leaf(tape, 1536.0f), bz = scalar_leaf(tape, 512.0f);
        CHECK(tape.val(rate_loss(g, by, bz, 1024)).v[0] == doctest::Approx(2.0).epsilon(1e-7));
        CHECK_THROWS_AS(rate_loss(g, by, bz, 0), contract_error);
    }

    ModelConfig cfg = tiny();
    ParamStore ps;
    Rng rng(4);
    init_codec(ps, cfg, rng);
    FixedFilterPrior pr(cfg, 11);

    // vertically periodic probe: stacking two copies adds no seam content
    int H = 64, W = 64;
    Tensor base({3, H, W});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double v = 0.5 + 0.2 * std::sin(2 * M_PI * (2 * y) / (double)H + c) +
                           0.15 * std::cos(2 * M_PI * (3 * x) / (double)W - 0.7 * c);
                base.v[((size_t)c * H + y) * W + x] = (float)v;
            }
    Tensor tiled({3, 2 * H, W});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 2 * H; ++y)
            for (int x = 0; x < W; ++x)
                tiled.v[((size_t)c * 2 * H + y) * W + x] = base.v[((size_t)c * H + (y % H)) * W + x];

    double b1 = eval_bpp(ps, cfg, base, pr);
    double b2 = eval_bpp(ps, cfg, tiled, pr);
    CHECK(b1 > 0.0);
    CHECK(std::abs(b2 - b1) / b1 <= 0.02);
}

TEST_CASE("codec graph recomposes the weighted total and leaves the denoiser cold") {
    ModelConfig cfg = tiny();
    ParamStore ps;
    Rng rng(2);
    init_codec(ps, cfg, rng);
    init_denoiser(ps, 16, rng, /*width=*/6);

    Tensor img = synth_image(31, 32, 32);
    FixedFilterPrior pr(cfg, 7);
    Tensor x = pad_replicate(img, cfg.down_factor);
    auto feats = pr.extract(x);

    Tape tape;
    Graph g = bind_params(tape, ps, true);
    std::vector<int> lvl;
    for (auto& l : feats.levels) lvl.push_back(tape.leaf(l));
    QuantSpec<float> q;
    CodecGraph cg = build_codec_graph(g, tape.leaf(x), lvl, tape.leaf(pr.content_target(x)), cfg,
                                      q, (int64_t)x.shape[1] * x.shape[2]);
    LossWeights w;
    w.lambda1 = 0.25;
    w.lambda2 = 1.0;
    w.lambda3 = 0.1;
    LossTerms terms = cg.terms;
    int total = combine_losses(g, terms, w);

    double hand = 0.25 * (double)tape.val(cg.terms.rate).v[0] +
                  1.0 * (double)tape.val(cg.terms.spatial).v[0] +
                  0.1 * (double)tape.val(cg.terms.frequency).v[0];
    CHECK(std::abs((double)tape.val(total).v[0] - hand) <= 1e-6);

    tape.backward(total);
    // codec path is live
    CHECK(tape.has_grad(g.p("gs.out.w")));
    CHECK(tape.has_grad(g.p("fz.H0")));
    // the denoiser never joined this graph
    CHECK_FALSE(tape.has_grad(g.p("dn.temb")));
    CHECK_FALSE(tape.has_grad(g.p("dn.mid.w")));
}

TEST_CASE("checkpoints round-trip bitwise and reject corruption") {
    ModelConfig cfg = tiny();
    ParamStore ps;
    Rng rng(6);
    init_codec(ps, cfg, rng);
    CheckpointExtra ex;
    ex.step = 123;
    ex.adam_t = 456;
    ex.rng = {1, 2, 3, 4};
    ex.adam_m["gs.out.w"] = ps.at("gs.out.w");
    ex.adam_v["gs.out.w"] = ps.at("gs.out.w");

    std::string p1 = "tr_ck_a.ckpt", p2 = "tr_ck_b.ckpt";
    save_checkpoint(p1, ps, cfg, ex);

    ParamStore ps2;
    CheckpointExtra ex2;
    load_checkpoint(p1, ps2, cfg, &ex2);
    CHECK(ps2.content_hash() == ps.content_hash());
    CHECK(ps2.params.size() == ps.params.size());
    CHECK(ex2.step == 123);
    CHECK(ex2.adam_t == 456);
    CHECK(ex2.rng == std::array<uint64_t, 4>{1, 2, 3, 4});
    REQUIRE(ex2.adam_m.count("gs.out.w") == 1);

    save_checkpoint(p2, ps2, cfg, ex2);
    CHECK(slurp(p1) == slurp(p2));

    // config echo gate
    ModelConfig other = cfg;
    other.n = 16;
    other.validate();
    CHECK_THROWS_AS(load_checkpoint(p1, ps2, other, nullptr), model_error);

    // every truncation fails loudly
    std::string full = slurp(p1);
    for (size_t len : {size_t(0), size_t(3), size_t(4), size_t(9), size_t(40), full.size() / 2,
                       full.size() - 9, full.size() - 1}) {
        std::ofstream f("tr_ck_cut.ckpt", std::ios::binary | std::ios::trunc);
        f.write(full.data(), (std::streamsize)len);
        f.close();
        CHECK_THROWS_AS(load_checkpoint("tr_ck_cut.ckpt", ps2, cfg, nullptr), format_error);
    }

    // bit flip inside tensor data trips the checksum
    {
        std::string bad = full;
        bad[bad.size() / 2] = (char)(bad[bad.size() / 2] ^ 0x40);
        std::ofstream f("tr_ck_flip.ckpt", std::ios::binary | std::ios::trunc);
        f.write(bad.data(), (std::streamsize)bad.size());
        f.close();
        CHECK_THROWS_WITH_AS(load_checkpoint("tr_ck_flip.ckpt", ps2, cfg, nullptr),
                             doctest::Contains("checksum"), format_error);
    }

    // trailing garbage is rejected
    {
        std::string bad = full + "x";
        std::ofstream f("tr_ck_tail.ckpt", std::ios::binary | std::ios::trunc);
        f.write(bad.data(), (std::streamsize)bad.size());
        f.close();
        CHECK_THROWS_AS(load_checkpoint("tr_ck_tail.ckpt", ps2, cfg, nullptr), format_error);
    }

    {
        std::ofstream f("tr_ck_junk.ckpt", std::ios::binary | std::ios::trunc);
        f << "hello world, definitely not a checkpoint";
        f.close();
        CHECK_THROWS_AS(load_checkpoint("tr_ck_junk.ckpt", ps2, cfg, nullptr), format_error);
    }
    CHECK_THROWS_AS(load_checkpoint("tr_ck_missing.ckpt", ps2, cfg, nullptr), io_error);
}

TEST_CASE("training stages run deterministically and freeze the right groups") {
    ModelConfig cfg = tiny();
    auto ds = synth_dataset(500, 3, 32, 32);

    auto pipeline = [&](const std::string& tag) {
        ParamStore ps;
        std::string m1 = "tr_m1_" + tag + ".tsv", m2 = "tr_m2_" + tag + ".tsv",
                    m3 = "tr_m3_" + tag + ".tsv";
        for (const auto& p : {m1, m2, m3}) fs::remove(p);

        TrainConfig c1;
        c1.model = cfg;
        c1.stage = TrainStage::Prior;
        c1.steps = 30;
        c1.seed = 5;
        c1.metrics_path = m1;
        train(c1, ds, ps);
        REQUIRE(ps.has("tp.e0.w"));
        uint64_t tp_after1 = group_hash(ps, "tp.");

        TrainConfig c2;
        c2.model = cfg;
        c2.stage = TrainStage::Codec;
        c2.steps = 10;
        c2.seed = 6;
        c2.metrics_path = m2;
        TrainResult r2 = train(c2, ds, ps);
        CHECK(r2.totals.size() == 10);
        CHECK(group_hash(ps, "tp.") == tp_after1);
        CHECK_FALSE(ps.has("dn.temb"));
        REQUIRE(ps.has("gs.out.w"));
        uint64_t codec_after2 = codec_group_hash(ps);

        TrainConfig c3;
        c3.model = cfg;
        c3.stage = TrainStage::Denoiser;
        c3.steps = 10;
        c3.seed = 7;
        c3.weights.lambda4 = 1.0;
        c3.diff_T = 40;
        c3.denoiser_width = 8;
        c3.metrics_path = m3;
        TrainResult r3 = train(c3, ds, ps);
        CHECK(r3.totals.size() == 10);
        CHECK(group_hash(ps, "tp.") == tp_after1);
        CHECK(codec_group_hash(ps) == codec_after2);  // stage 3 froze the codec
        REQUIRE(ps.has("dn.temb"));
        for (double v : r3.totals) CHECK(std::isfinite(v));

        return std::tuple<uint64_t, std::string, std::string, std::string>(
            ps.content_hash(), slurp(m1), slurp(m2), slurp(m3));
    };

    auto a = pipeline("a");
    auto b = pipeline("b");
    CHECK(std::get<0>(a) == std::get<0>(b));
    CHECK(std::get<1>(a) == std::get<1>(b));
    CHECK(std::get<2>(a) == std::get<2>(b));
    CHECK(std::get<3>(a) == std::get<3>(b));

    // metrics schema: 7 tab-separated columns per line
    std::istringstream lines(std::get<2>(a));
    std::string line;
    int count = 0;
    while (std::getline(lines, line)) {
        ++count;
        CHECK(std::count(line.begin(), line.end(), '\t') == 6);
    }
    CHECK(count == 10);
}

TEST_CASE("resume reproduces the uninterrupted run exactly") {
    ModelConfig cfg = tiny();
    auto ds = synth_dataset(900, 2, 32, 32);
    std::string ma = "tr_res_a.tsv", mb = "tr_res_b.tsv";
    std::string ca = "tr_res_a.ckpt", cb = "tr_res_b_half.ckpt", cb2 = "tr_res_b_full.ckpt";
    for (const auto& p : {ma, mb, ca, cb, cb2}) fs::remove(p);

    TrainConfig base;
    base.model = cfg;
    base.stage = TrainStage::Codec;
    base.seed = 11;

    TrainConfig a = base;
    a.steps = 9;
    a.metrics_path = ma;
    a.checkpoint_path = ca;
    ParamStore psa;
    train(a, ds, psa);

    TrainConfig b1 = base;
    b1.steps = 5;
    b1.metrics_path = mb;
    b1.checkpoint_path = cb;
    ParamStore psb;
    train(b1, ds, psb);

    TrainConfig b2 = base;
    b2.steps = 9;
    b2.metrics_path = mb;  // appends steps 6..9
    b2.checkpoint_path = cb2;
    b2.resume_from = cb;
    ParamStore psb2;
    train(b2, ds, psb2);

    CHECK(slurp(ma) == slurp(mb));
    CHECK(slurp(ca) == slurp(cb2));
    CHECK(psa.content_hash() == psb2.content_hash());
}

TEST_CASE("trainer rejects bad setups and aborts on non-finite loss") {
    ModelConfig cfg = tiny();
    auto ds = synth_dataset(50, 2, 32, 32);

    TrainConfig c;
    c.model = cfg;
    c.stage = TrainStage::Codec;
    c.steps = 2;
    ParamStore ps;
    CHECK_THROWS_AS(train(c, {}, ps), input_error);
    {
        TrainConfig bad = c;
        bad.steps = 0;
        CHECK_THROWS_AS(train(bad, ds, ps), config_error);
    }
    {
        TrainConfig bad = c;
        bad.provider = "toy";  // no tp. params anywhere
        ParamStore fresh;
        CHECK_THROWS_AS(train(bad, ds, fresh), state_error);
    }
    {
        TrainConfig bad = c;
        bad.provider = "martian";
        ParamStore fresh;
        CHECK_THROWS_AS(train(bad, ds, fresh), config_error);
    }
    {
        TrainConfig bad = c;
        bad.stage = TrainStage::Denoiser;
        bad.weights.lambda4 = 1.0;
        ParamStore fresh;
        CHECK_THROWS_AS(train(bad, ds, fresh), state_error);
    }
    {
        TrainConfig bad = c;
        bad.stage = TrainStage::Denoiser;  // lambda4 defaults to zero
        CHECK_THROWS_AS(train(bad, ds, ps), config_error);
    }
    {
        std::vector<Tensor> badset = {Tensor({1, 16, 16})};
        ParamStore fresh;
        CHECK_THROWS_AS(train(c, badset, fresh), input_error);
    }

    // poisoned parameter -> non-finite loss -> abort + batch dump
    {
        ParamStore fresh;
        TrainConfig one = c;
        one.steps = 1;
        train(one, ds, fresh);  // materialize params
        fresh.at("gs.out.w").v[0] = std::numeric_limits<float>::infinity();
        TrainConfig two = c;
        two.steps = 2;
        two.metrics_path = "tr_poison.tsv";
        fs::remove("tr_poison.tsv");
        fs::remove("tr_poison.tsv.badbatch");
        bool threw = false;
        try {
            // reuse the poisoned store: step 1 must die
            TrainResult r = train(two, ds, fresh);
            (void)r;
        } catch (const model_error& e) {
            threw = true;
            CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
        }
        CHECK(threw);
        CHECK(fs::exists("tr_poison.tsv.badbatch"));
    }
}
