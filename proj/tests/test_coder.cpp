#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>

#include "ffabic/codec.hpp"
#include "ffabic/coder.hpp"
#include "ffabic/errors.hpp"
#include "ffabic/transforms.hpp"

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

ParamStore codec_store(const ModelConfig& cfg, uint64_t seed) {
    ParamStore ps;
    Rng rng(seed);
    init_entropy(ps, cfg, rng);
    init_hyper_dec(ps, "hd", cfg, rng);
    init_hyper_dec(ps, "hdw", cfg, rng);
    return ps;
}

// model-side cost of one integer under a zero-mean Gaussian, floored like the
// rate graph floors it
double model_bits(int k, double sigma) {
    double inv = 1.0 / (sigma * 1.4142135623730951);
    double p = 0.5 * (std::erf((k + 0.5) * inv) - std::erf((k - 0.5) * inv));
    return std::max(-std::log2(std::max(p, 1e-30)), 1.0 / 65536.0);
}

}  // namespace

TEST_CASE("pmf quantization hits the exact total with full support") {
    Rng rng(11);
    for (int trial = 0; trial < 40; ++trial) {
        size_t n = 2 + (size_t)rng.below(399);
        std::vector<double> pmf(n);
        for (auto& p : pmf) p = rng.uniform() < 0.2 ? 0.0 : std::pow(rng.uniform(), 3.0);
        SymbolTable t = quantize_pmf(pmf);
        REQUIRE(t.size() == (int)n);
        CHECK(t.cum.front() == 0);
        CHECK(t.cum.back() == kProbTotal);
        for (int s = 0; s < t.size(); ++s) CHECK(t.freq(s) >= 1);
        SymbolTable again = quantize_pmf(pmf);
        CHECK(again.cum == t.cum);
    }

    SymbolTable lone = quantize_pmf({0.3});
    CHECK(lone.cum == std::vector<uint32_t>{0, kProbTotal});

    SymbolTable peaked = quantize_pmf({1.0, 1e-12});
    CHECK(peaked.freq(0) == kProbTotal - 1);
    CHECK(peaked.freq(1) == 1);

    CHECK_THROWS_AS(quantize_pmf({}), contract_error);
    CHECK_THROWS_AS(quantize_pmf({0.5, -0.1}), contract_error);
    CHECK_THROWS_AS(quantize_pmf({2.0}), contract_error);
}

TEST_CASE("range coder round trips arbitrary symbol streams near their table cost") {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        size_t n = 2 + (size_t)rng.below(299);
        std::vector<double> pmf(n);
        for (auto& p : pmf) p = rng.uniform() < 0.15 ? 0.0 : rng.uniform() * rng.uniform();
        SymbolTable t = quantize_pmf(pmf);

        size_t count = rng.below(2001);
        std::vector<int> syms(count);
        double est_bits = 0.0;
        RangeEncoder enc;
        for (auto& s : syms) {
            s = (int)rng.below((uint64_t)n);
            enc.encode_symbol(t, s);
            est_bits -= std::log2((double)t.freq(s) / kProbTotal);
        }
        std::vector<uint8_t> bytes = enc.finish();
        CHECK((double)bytes.size() <= est_bits / 8.0 * 1.01 + 32.0);

        RangeDecoder dec(bytes.data(), bytes.size());
        bool ok = true;
        for (size_t i = 0; i < count; ++i) ok = ok && dec.decode_symbol(t) == syms[i];
        CHECK(ok);
    }
}

TEST_CASE("raw 16-bit halves pass through unchanged") {
    Rng rng(5);
    std::vector<uint32_t> halves(200);
    RangeEncoder enc;
    for (auto& h : halves) {
        h = (uint32_t)rng.below(65536);
        enc.encode_raw16(h);
    }
    std::vector<uint8_t> bytes = enc.finish();
    CHECK((double)bytes.size() <= 200.0 * 2.0 + 32.0);
    RangeDecoder dec(bytes.data(), bytes.size());
    for (uint32_t h : halves) CHECK(dec.decode_raw16() == h);

    RangeEncoder bad;
    CHECK_THROWS_AS(bad.encode(0, 0, kProbTotal), contract_error);
    CHECK_THROWS_AS(bad.encode(65000, 1000, kProbTotal), contract_error);
}

TEST_CASE("stream overhead stays inside the empty and iid bounds") {
    RangeEncoder empty;
    std::vector<uint8_t> nothing = empty.finish();
    CHECK(nothing.size() >= 5);
    CHECK(nothing.size() <= 32);

    // center-symbol cost of the unit Gaussian, pinned independently
    CHECK(model_bits(0, 1.0) == doctest::Approx(1.3848665342909897).epsilon(1e-12));

    SymbolTable t = gaussian_table(1.0f);
    double p0 = (double)t.freq(0 - kAlphabetMin) / kProbTotal;
    // the ~120 empty tail bins each keep one count taken from the peak
    CHECK(std::abs(p0 - 0.382924922548026207) < 0.002);

    Rng rng(31);
    std::vector<int> ks(20000);
    double est_bits = 0.0;
    RangeEncoder enc;
    for (auto& k : ks) {
        k = (int)std::lround(rng.normal());
        est_bits += model_bits(k, 1.0);
        encode_value(enc, t, k);
    }
    std::vector<uint8_t> bytes = enc.finish();
    CHECK((double)bytes.size() <= est_bits / 8.0 * 1.01 + 32.0);
    CHECK((double)bytes.size() * 8.0 >= est_bits * 0.98 - 64.0);

    RangeDecoder dec(bytes.data(), bytes.size());
    bool ok = true;
    for (int k : ks) ok = ok && decode_value(dec, t) == k;
    CHECK(ok);
}

TEST_CASE("values outside the alphabet escape to raw bits") {
    SymbolTable t = gaussian_table(1.0f);
    std::vector<int64_t> vals{0,    64,        -64,        65,         -65,        100,
                              -100, 4096,      -200000,    2147483647, -2147483648LL,
                              7,    -33,       1000000000, -999999999, 1};
    RangeEncoder enc;
    for (int64_t v : vals) encode_value(enc, t, v);
    std::vector<uint8_t> bytes = enc.finish();
    RangeDecoder dec(bytes.data(), bytes.size());
    for (int64_t v : vals) CHECK(decode_value(dec, t) == v);

    RangeEncoder oob;
    CHECK_THROWS_AS(encode_value(oob, t, 2147483648LL), input_error);
    CHECK_THROWS_AS(encode_value(oob, t, -2147483649LL), input_error);

    SymbolTable wrong = quantize_pmf({0.5, 0.5});
    RangeEncoder w;
    CHECK_THROWS_AS(encode_value(w, wrong, 0), contract_error);
}

TEST_CASE("gaussian tables are symmetric with full support") {
    SymbolTable t = gaussian_table(1.0f);
    REQUIRE(t.size() == kAlphabetSize + 1);
    CHECK(t.cum.back() == kProbTotal);
    int center = -kAlphabetMin;
    for (int d = 1; d <= kAlphabetMax; ++d) {
        CHECK(t.freq(center + d) == t.freq(center - d));
        CHECK(t.freq(center + d) <= t.freq(center + d - 1));
    }
    for (int s = 0; s < t.size(); ++s) CHECK(t.freq(s) >= 1);

    // at the sigma floor everything collapses onto the center bin
    SymbolTable floor = gaussian_table(0.04f);
    CHECK(floor.freq(center) == kProbTotal - (uint32_t)kAlphabetSize);
    for (int s = 0; s < floor.size(); ++s)
        if (s != center) CHECK(floor.freq(s) == 1);

    // a wide table leaves real mass on the escape slot
    SymbolTable wide = gaussian_table(60.0f);
    CHECK(wide.freq(kAlphabetSize) > kProbTotal / 10);
}

TEST_CASE("truncated or overdrawn streams raise integrity errors") {
    std::vector<uint8_t> tiny_buf{1, 2, 3};
    CHECK_THROWS_AS(RangeDecoder(tiny_buf.data(), tiny_buf.size()), integrity_error);
    CHECK_THROWS_AS(RangeDecoder(nullptr, 0), integrity_error);

    SymbolTable t = gaussian_table(1.0f);
    Rng rng(41);
    RangeEncoder enc;
    for (int i = 0; i < 2000; ++i) encode_value(enc, t, (int64_t)std::lround(rng.normal()));
    std::vector<uint8_t> bytes = enc.finish();
    REQUIRE(bytes.size() > 100);

    auto drain = [&](const std::vector<uint8_t>& buf, int n) {
        RangeDecoder dec(buf.data(), buf.size());
        for (int i = 0; i < n; ++i) (void)decode_value(dec, t);
    };
    std::vector<uint8_t> cut(bytes.begin(), bytes.begin() + 40);
    CHECK_THROWS_AS(drain(cut, 2000), integrity_error);
    CHECK_THROWS_AS(drain(bytes, 100000), integrity_error);  // reading far past what was coded
}

TEST_CASE("bitstream container packs and parses round trip") {
    BitstreamHeader h;
    h.width = 1920;
    h.height = 1080;
    h.down_factor = 8;
    h.m = 48;
    h.model_hash = 0x123456789abcdef0ull;
    h.flags = 0;

    Rng rng(51);
    LatentStreams s;
    s.z.resize(7);
    for (auto& b : s.z) b = (uint8_t)rng.below(256);
    for (size_t i = 0; i < s.y.size(); ++i) {
        s.y[i].resize(i * 3);  // slice 0 stays empty on purpose
        for (auto& b : s.y[i]) b = (uint8_t)rng.below(256);
    }

    std::vector<uint8_t> bytes = pack_bitstream(h, s);
    CHECK(bytes.size() == kHeaderBytes + 11 * 4 + s.total_bytes());

    ParsedBitstream p = parse_bitstream(bytes);
    CHECK(p.header.width == h.width);
    CHECK(p.header.height == h.height);
    CHECK(p.header.down_factor == h.down_factor);
    CHECK(p.header.m == h.m);
    CHECK(p.header.model_hash == h.model_hash);
    CHECK(p.header.flags == h.flags);
    CHECK(p.streams.z == s.z);
    CHECK(p.streams.y == s.y);

    std::vector<uint8_t> bad_magic = bytes;
    bad_magic[0] = 'G';
    CHECK_THROWS_AS(parse_bitstream(bad_magic), format_error);

    std::vector<uint8_t> bad_version = bytes;
    bad_version[4] = 2;
    CHECK_THROWS_AS(parse_bitstream(bad_version), format_error);

    for (size_t len = 0; len < bytes.size(); ++len) {
        std::vector<uint8_t> cut(bytes.begin(), bytes.begin() + (long)len);
        CHECK_THROWS_AS(parse_bitstream(cut), format_error);
    }

    std::vector<uint8_t> trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(parse_bitstream(trailing), format_error);

    BitstreamHeader flat = h;
    flat.width = 0;
    CHECK_THROWS_AS(parse_bitstream(pack_bitstream(flat, s)), format_error);
}

TEST_CASE("latent coding round trips bit-exactly") {
    ModelConfig cfg = tiny();
    ParamStore ps = codec_store(cfg, 61);
    Rng rng(62);

    Tensor y({cfg.m, 5, 5});
    for (auto& v : y.v) v = (float)(3.0 * rng.normal());
    y.v.front() = 300.7f;  // forces the escape path through the latent coder
    y.v.back() = -99.2f;
    Tensor z({cfg.hyper_ch, 2, 2});
    for (auto& v : z.v) v = (float)(2.0 * rng.normal());

    LatentStreams enc = encode_latents(ps, cfg, y, z);
    for (const auto& seg : enc.y) CHECK(!seg.empty());
    DecodedLatents dec = decode_latents(ps, cfg, 5, 5, 2, 2, enc);

    for (size_t i = 0; i < z.v.size(); ++i)
        CHECK(dec.z_hat.v[i] == (float)std::round((double)z.v[i]));
    for (size_t i = 0; i < y.v.size(); ++i)
        CHECK(std::abs(dec.y_hat.v[i] - y.v[i]) <= 0.500001f);

    // re-encoding the reconstruction reproduces the byte streams exactly
    LatentStreams enc2 = encode_latents(ps, cfg, dec.y_hat, dec.z_hat);
    CHECK(enc2.z == enc.z);
    CHECK(enc2.y == enc.y);

    LatentStreams enc3 = encode_latents(ps, cfg, y, z);
    CHECK(enc3.z == enc.z);
    CHECK(enc3.y == enc.y);

    Tensor bad({cfg.m, 5, 5});
    CHECK_THROWS_AS(encode_latents(ps, cfg, Tensor({cfg.m + 1, 5, 5}), z), contract_error);
    CHECK_THROWS_AS(encode_latents(ps, cfg, y, Tensor({cfg.hyper_ch + 1, 2, 2})), contract_error);
    CHECK_THROWS_AS(decode_latents(ps, cfg, 5, 5, 2, 2, enc, 11), contract_error);
}

TEST_CASE("decoded latents match the eval-mode rate graph") {
    ModelConfig cfg = tiny();
    ParamStore ps = codec_store(cfg, 71);
    Rng rng(72);

    Tensor y({cfg.m, 5, 5});
    for (auto& v : y.v) v = (float)(2.5 * rng.normal());
    Tensor z({cfg.hyper_ch, 2, 2});
    for (auto& v : z.v) v = (float)(1.5 * rng.normal());

    LatentStreams enc = encode_latents(ps, cfg, y, z);
    DecodedLatents dec = decode_latents(ps, cfg, 5, 5, 2, 2, enc);

    Tape tape;
    Graph g = bind_params(tape, ps, false);
    QuantSpec<float> q;
    q.mode = QuantMode::Eval;
    EntropyOut eo = build_entropy(g, tape.leaf(y), tape.leaf(z), cfg, q);

    const Tensor& yh = tape.val(eo.y_hat);
    REQUIRE(yh.shape == dec.y_hat.shape);
    for (size_t i = 0; i < yh.v.size(); ++i) CHECK(yh.v[i] == dec.y_hat.v[i]);
    const Tensor& zc = tape.val(eo.z_cond);
    for (size_t i = 0; i < zc.v.size(); ++i) CHECK(zc.v[i] == dec.z_hat.v[i]);

    // actual bytes track the graph's own rate estimate
    double est_bits = (double)tape.val(eo.bits_y).v[0] + (double)tape.val(eo.bits_z).v[0];
    double actual = (double)enc.total_bytes();
    CHECK(actual <= est_bits / 8.0 * 1.02 + 11.0 * 32.0);
    CHECK(actual >= est_bits / 8.0 * 0.5 - 64.0);
}

TEST_CASE("later segments never influence earlier slices") {
    ModelConfig cfg = tiny();
    ParamStore ps = codec_store(cfg, 81);
    Rng rng(82);

    Tensor ya({cfg.m, 5, 5}), yb({cfg.m, 5, 5});
    for (auto& v : ya.v) v = (float)(3.0 * rng.normal());
    for (auto& v : yb.v) v = (float)(3.0 * rng.normal());
    Tensor z({cfg.hyper_ch, 2, 2});
    for (auto& v : z.v) v = (float)(2.0 * rng.normal());

    LatentStreams full = encode_latents(ps, cfg, ya, z);
    DecodedLatents whole = decode_latents(ps, cfg, 5, 5, 2, 2, full);

    auto offs = slice_offsets(cfg.m);
    size_t plane = 5 * 5;

    // dropping the tail segments entirely leaves the head slices untouched
    LatentStreams cut = full;
    cut.y[7].clear();
    cut.y[8].clear();
    cut.y[9].clear();
    DecodedLatents head = decode_latents(ps, cfg, 5, 5, 2, 2, cut, 7);
    for (size_t i = 0; i < (size_t)offs[7] * plane; ++i)
        CHECK(head.y_hat.v[i] == whole.y_hat.v[i]);
    for (size_t i = (size_t)offs[7] * plane; i < head.y_hat.v.size(); ++i)
        CHECK(head.y_hat.v[i] == 0.0f);
    for (size_t i = 0; i < z.v.size(); ++i) CHECK(head.z_hat.v[i] == whole.z_hat.v[i]);

    // swapping in tail segments coded from different latents changes nothing
    // ahead of them either
    LatentStreams mixed = full;
    LatentStreams other = encode_latents(ps, cfg, yb, z);
    mixed.y[7] = other.y[7];
    mixed.y[8] = other.y[8];
    mixed.y[9] = other.y[9];
    DecodedLatents mixed_head = decode_latents(ps, cfg, 5, 5, 2, 2, mixed, 7);
    for (size_t i = 0; i < (size_t)offs[7] * plane; ++i)
        CHECK(mixed_head.y_hat.v[i] == whole.y_hat.v[i]);
}
