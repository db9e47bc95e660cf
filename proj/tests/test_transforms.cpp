#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ffabic/spatial.hpp"
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

ParamStore init_all(const ModelConfig& cfg, uint64_t seed) {
    ParamStore ps;
    Rng rng(seed);
    init_analysis(ps, cfg, rng);
    init_synthesis(ps, cfg, rng);
    init_hyper_enc(ps, cfg, rng);
    init_hyper_dec(ps, "hd", cfg, rng);
    init_hyper_dec(ps, "hdw", cfg, rng);
    return ps;
}

std::vector<int> make_prior_levels(Tape& tape, const ModelConfig& cfg, int hp, int wp, Rng& rng) {
    std::vector<int> ids;
    for (int i = 0; i < analysis_stages(cfg); ++i) {
        int s = 1 << (i + 1);
        ids.push_back(tape.leaf(testutil::random_tensor32(rng, {prior_level_channels(i), hp / s, wp / s})));
    }
    return ids;
}

}  // namespace

TEST_CASE("stage plan follows the downsampling factor") {
    ModelConfig toy = ModelConfig::toy();
    CHECK(analysis_stages(toy) == 3);
    CHECK(stage_channels(toy, 0) == 32);
    CHECK(stage_channels(toy, 1) == 32);
    CHECK(stage_channels(toy, 2) == 48);

    ModelConfig full = ModelConfig::full();
    CHECK(analysis_stages(full) == 4);
    CHECK(stage_channels(full, 0) == 128);
    CHECK(stage_channels(full, 2) == 128);
    CHECK(stage_channels(full, 3) == 192);

    CHECK(prior_level_channels(0) == 16);
    CHECK(prior_level_channels(1) == 32);
    CHECK(prior_level_channels(3) == 32);
}

TEST_CASE("shapes chain through both transform stacks on an even input") {
    ModelConfig cfg = tiny();
    ParamStore ps = init_all(cfg, 11);
    Rng rng(5);

    Tape tape;
    GraphT<float> g = bind_params(tape, ps, false);

    int x = tape.leaf(testutil::random_tensor32(rng, {3, 64, 64}));
    auto priors = make_prior_levels(tape, cfg, 64, 64, rng);
    int y = build_analysis(g, x, priors, cfg);
    CHECK(tape.val(y).shape == std::vector<int>{24, 8, 8});

    int z = build_hyper_enc(g, y, priors.back(), cfg);
    CHECK(tape.val(z).shape == std::vector<int>{8, 2, 2});

    int hyper = build_hyper_dec(g, z, "hd", 8, 8, cfg);
    CHECK(tape.val(hyper).shape == std::vector<int>{48, 8, 8});

    int w_feat = build_hyper_dec(g, z, "hdw", 8, 8, cfg);
    int rec = build_synthesis(g, y, w_feat, cfg);
    CHECK(tape.val(rec).shape == std::vector<int>{16, 16, 16});
    CHECK(all_finite(tape.val(rec)));
}

TEST_CASE("odd input pads to the stride multiple and keeps ceil dims downstream") {
    ModelConfig cfg = tiny();
    ParamStore ps = init_all(cfg, 12);
    Rng rng(6);

    Tensor img = testutil::random_tensor32(rng, {3, 65, 65});
    Tensor padded = pad_replicate(img, cfg.down_factor);
    CHECK(padded.shape == std::vector<int>{3, 72, 72});

    Tape tape;
    GraphT<float> g = bind_params(tape, ps, false);

    int x = tape.leaf(padded);
    auto priors = make_prior_levels(tape, cfg, 72, 72, rng);
    int y = build_analysis(g, x, priors, cfg);
    CHECK(tape.val(y).shape == std::vector<int>{24, 9, 9});

    // two stride-2 convs on 9: 9 -> 5 -> 3
    int z = build_hyper_enc(g, y, priors.back(), cfg);
    CHECK(tape.val(z).shape == std::vector<int>{8, 3, 3});

    // decoder upsamples 3 -> 12 and crops back to the latent's 9
    int hyper = build_hyper_dec(g, z, "hd", 9, 9, cfg);
    CHECK(tape.val(hyper).shape == std::vector<int>{48, 9, 9});

    int w_feat = build_hyper_dec(g, z, "hdw", 9, 9, cfg);
    int rec = build_synthesis(g, y, w_feat, cfg);
    CHECK(tape.val(rec).shape == std::vector<int>{16, 18, 18});
}

TEST_CASE("analysis wants exactly one prior level per stage") {
    ModelConfig cfg = tiny();
    ParamStore ps = init_all(cfg, 13);
    Rng rng(7);

    Tape tape;
    GraphT<float> g = bind_params(tape, ps, false);
    int x = tape.leaf(testutil::random_tensor32(rng, {3, 16, 16}));
    std::vector<int> too_few{tape.leaf(testutil::random_tensor32(rng, {16, 8, 8}))};
    CHECK_THROWS_AS(build_analysis(g, x, too_few, cfg), contract_error);
}

TEST_CASE("same seed gives an identical parameter set and forward pass") {
    ModelConfig cfg = tiny();
    ParamStore a = init_all(cfg, 99);
    ParamStore b = init_all(cfg, 99);
    CHECK(a.content_hash() == b.content_hash());

    ParamStore c = init_all(cfg, 100);
    CHECK(a.content_hash() != c.content_hash());
}
