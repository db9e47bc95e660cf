#include "training.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "errors.hpp"
#include "spatial.hpp"

namespace ffabic {

void init_codec(ParamStore& ps, const ModelConfig& cfg, Rng& rng) {
    init_analysis(ps, cfg, rng);
    init_synthesis(ps, cfg, rng);
    init_hyper_enc(ps, cfg, rng);
    init_hyper_dec(ps, "hd", cfg, rng);
    init_hyper_dec(ps, "hdw", cfg, rng);
    init_entropy(ps, cfg, rng);
}

template <typename T>
CodecGraph build_codec_graph(GraphT<T>& g, int x, const std::vector<int>& prior_levels,
                             int target, const ModelConfig& cfg, const QuantSpec<T>& q,
                             int64_t pixels) {
    CodecGraph out;
    out.y = build_analysis(g, x, prior_levels, cfg);
    out.z = build_hyper_enc(g, out.y, prior_levels.back(), cfg);
    out.eo = build_entropy(g, out.y, out.z, cfg, q);
    out.z_c = build_synthesis(g, out.eo.y_hat, out.eo.w_feat, cfg);
    out.terms.rate = rate_loss(g, out.eo.bits_y, out.eo.bits_z, pixels);
    out.terms.spatial = spatial_loss(g, out.z_c, target);
    out.terms.frequency = frequency_loss(g, out.z_c, target);
    return out;
}

template CodecGraph build_codec_graph<float>(GraphT<float>&, int, const std::vector<int>&, int,
                                             const ModelConfig&, const QuantSpec<float>&, int64_t);
template CodecGraph build_codec_graph<double>(GraphT<double>&, int, const std::vector<int>&, int,
                                              const ModelConfig&, const QuantSpec<double>&,
                                              int64_t);

// ---- checkpoint format ----------------------------------------------------
// "FFCK" | u8 version | u32 cfg_len | cfg json | u64 step | u64 adam_t |
// 4x u64 rng | tensor table (params) | tensor table (adam m) | tensor table
// (adam v) | u64 fnv1a checksum of everything before it.
// Tensor table: u32 count, then per entry u16 name_len | name | u8 ndim |
// i32 dims | u8 dtype(0=f32) | raw little-endian f32 data.

namespace {

void put_bytes(std::string& b, const void* p, size_t n) { b.append((const char*)p, n); }
template <typename V>
void put_pod(std::string& b, V v) {
    put_bytes(b, &v, sizeof v);
}

void put_table(std::string& b, const std::map<std::string, Tensor>& table) {
    put_pod(b, (uint32_t)table.size());
    for (const auto& [name, t] : table) {
        put_pod(b, (uint16_t)name.size());
        put_bytes(b, name.data(), name.size());
        put_pod(b, (uint8_t)t.ndim());
        for (int d : t.shape) put_pod(b, (int32_t)d);
        put_pod(b, (uint8_t)0);
        put_bytes(b, t.v.data(), t.v.size() * sizeof(float));
    }
}

struct Cursor {
    const char* p;
    size_t size, at = 0;
    void need(size_t n) const {
        if (at + n > size)
            throw format_error("checkpoint truncated at byte " + std::to_string(at) + " of " +
                               std::to_string(size));
    }
    void read(void* dst, size_t n) {
        need(n);
        std::memcpy(dst, p + at, n);
        at += n;
    }
    template <typename V>
    V pod() {
        V v;
        read(&v, sizeof v);
        return v;
    }
};

std::map<std::string, Tensor> read_table(Cursor& c) {
    std::map<std::string, Tensor> out;
    uint32_t count = c.pod<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t nl = c.pod<uint16_t>();
        std::string name((size_t)nl, '\0');
        c.read(name.data(), nl);
        uint8_t nd = c.pod<uint8_t>();
        std::vector<int> shape;
        for (uint8_t d = 0; d < nd; ++d) shape.push_back(c.pod<int32_t>());
        if (c.pod<uint8_t>() != 0) throw format_error("checkpoint: unknown tensor dtype");
        Tensor t(shape);
        c.read(t.v.data(), t.v.size() * sizeof(float));
        if (!out.emplace(name, std::move(t)).second)
            throw format_error("checkpoint: duplicate tensor " + name);
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& ps, const ModelConfig& cfg,
                     const CheckpointExtra& ex) {
    std::string b;
    put_bytes(b, "FFCK", 4);
    put_pod(b, (uint8_t)1);
    std::string cfg_json = cfg.to_json();
    put_pod(b, (uint32_t)cfg_json.size());
    put_bytes(b, cfg_json.data(), cfg_json.size());
    put_pod(b, (uint64_t)ex.step);
    put_pod(b, (uint64_t)ex.adam_t);
    for (uint64_t w : ex.rng) put_pod(b, w);
    put_table(b, ps.params);
    put_table(b, ex.adam_m);
    put_table(b, ex.adam_v);
    put_pod(b, fnv1a64(b.data(), b.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open checkpoint for writing: " + path);
    f.write(b.data(), (std::streamsize)b.size());
    if (!f) throw io_error("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, ParamStore& ps, const ModelConfig& cfg,
                     CheckpointExtra* ex) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open checkpoint: " + path);
    std::string b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Cursor c{b.data(), b.size()};
    char magic[4];
    c.read(magic, 4);
    if (std::memcmp(magic, "FFCK", 4) != 0) throw format_error("not a checkpoint file");
    if (c.pod<uint8_t>() != 1) throw format_error("unsupported checkpoint version");

    uint32_t cfg_len = c.pod<uint32_t>();
    std::string cfg_json((size_t)cfg_len, '\0');
    c.read(cfg_json.data(), cfg_len);

    CheckpointExtra loaded;
    loaded.step = c.pod<uint64_t>();
    loaded.adam_t = (int64_t)c.pod<uint64_t>();
    for (auto& w : loaded.rng) w = c.pod<uint64_t>();
    auto params = read_table(c);
    loaded.adam_m = read_table(c);
    loaded.adam_v = read_table(c);

    c.need(8);
    uint64_t want = fnv1a64(b.data(), c.at);
    uint64_t got = c.pod<uint64_t>();
    if (want != got) throw format_error("checkpoint checksum mismatch");
    if (c.at != b.size()) throw format_error("checkpoint has trailing bytes");

    // config echo gates the load: a checkpoint only restores into the exact
    // geometry it was written from
    if (cfg_json != cfg.to_json())
        throw model_error("checkpoint config mismatch (stored " +
                          std::to_string(fnv1a64(cfg_json.data(), cfg_json.size())) + ", expected " +
                          std::to_string(fnv1a64(cfg.to_json().data(), cfg.to_json().size())) + ")");

    ps.params = std::move(params);
    if (ex) *ex = std::move(loaded);
}

// ---- training loop ---------------------------------------------------------

namespace {

struct Sample {
    Tensor padded;
    std::vector<Tensor> levels;
    Tensor target;
    int64_t pixels = 0;
};

std::unique_ptr<PriorProvider> make_provider(const TrainConfig& cfg, const ParamStore& ps) {
    bool toy_ready = ps.has("tp.e0.w");
    if (cfg.provider == "fixed") return std::make_unique<FixedFilterPrior>(cfg.model, kFixedPriorSeed);
    if (cfg.provider == "toy") {
        if (!toy_ready) throw state_error("toy prior parameters missing; run the prior stage first");
        return std::make_unique<ToyLatentPrior>(cfg.model, ps);
    }
    if (cfg.provider != "auto") throw config_error("unknown provider: " + cfg.provider);
    if (toy_ready) return std::make_unique<ToyLatentPrior>(cfg.model, ps);
    return std::make_unique<FixedFilterPrior>(cfg.model, kFixedPriorSeed);
}

std::vector<Sample> prepare_samples(const std::vector<Tensor>& dataset, const PriorProvider& pr,
                                    int down_factor) {
    std::vector<Sample> out;
    out.reserve(dataset.size());
    for (const Tensor& x : dataset) {
        if (x.ndim() != 3 || x.shape[0] != 3) throw input_error("training images must be [3,H,W]");
        Sample s;
        s.padded = pad_replicate(x, down_factor);
        s.levels = pr.extract(s.padded).levels;
        s.target = pr.content_target(s.padded);
        s.pixels = (int64_t)s.padded.shape[1] * s.padded.shape[2];
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<std::string> names_excluding(const ParamStore& ps,
                                         const std::vector<std::string>& skip) {
    std::vector<std::string> out;
    for (const auto& [name, t] : ps.params) {
        bool drop = false;
        for (const auto& pre : skip)
            if (name.rfind(pre, 0) == 0) drop = true;
        if (!drop) out.push_back(name);
    }
    return out;
}

void dump_batch(const std::string& path, const Tensor& x) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    uint32_t nd = (uint32_t)x.ndim();
    f.write((const char*)&nd, sizeof nd);
    for (int d : x.shape) {
        int32_t v = d;
        f.write((const char*)&v, sizeof v);
    }
    f.write((const char*)x.v.data(), (std::streamsize)(x.v.size() * sizeof(float)));
}

struct MetricsLog {
    std::ofstream f;
    explicit MetricsLog(const std::string& path) {
        if (path.empty()) return;
        f.open(path, std::ios::app);
        if (!f) throw io_error("cannot open metrics file: " + path);
    }
    void line(uint64_t step, double bpp, double lr, double ls, double lf, double ln,
              double total) {
        if (!f.is_open()) return;
        char buf[256];
        std::snprintf(buf, sizeof buf, "%" PRIu64 "\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n", step,
                      bpp, lr, ls, lf, ln, total);
        f << buf;
        f.flush();
    }
};

void check_finite(double total, uint64_t step, const TrainConfig& cfg, const Tensor& batch) {
    if (std::isfinite(total)) return;
    std::string dump =
        (cfg.metrics_path.empty() ? std::string("train") : cfg.metrics_path) + ".badbatch";
    dump_batch(dump, batch);
    throw model_error("non-finite loss at step " + std::to_string(step) +
                      "; offending batch dumped to " + dump);
}

TrainResult train_prior_stage(const TrainConfig& cfg, const std::vector<Tensor>& dataset,
                              ParamStore& ps) {
    ToyPriorTrainConfig pc;
    pc.steps = cfg.steps;
    pc.seed = cfg.seed;
    pc.lr = cfg.prior_lr;
    std::vector<double> losses;
    ParamStore trained = train_toy_prior(dataset, pc, &losses);
    for (auto& [name, t] : trained.params) ps.params[name] = std::move(t);

    MetricsLog log(cfg.metrics_path);
    for (size_t i = 0; i < losses.size(); ++i)
        log.line(i + 1, 0.0, 0.0, 0.0, 0.0, 0.0, losses[i]);

    TrainResult res;
    res.totals = std::move(losses);
    if (!cfg.checkpoint_path.empty()) {
        CheckpointExtra ex;
        ex.step = (uint64_t)cfg.steps;
        save_checkpoint(cfg.checkpoint_path, ps, cfg.model, ex);
        res.checkpoint = cfg.checkpoint_path;
    }
    return res;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<Tensor>& dataset, ParamStore& ps) {
    if (dataset.empty()) throw input_error("training needs at least one image");
    if (cfg.steps < 1) throw config_error("training needs at least one step");
    cfg.model.validate();

    if (cfg.stage == TrainStage::Prior) return train_prior_stage(cfg, dataset, ps);

    // resume first: the restored store decides provider choice and geometry
    CheckpointExtra resumed;
    bool has_resume = !cfg.resume_from.empty();
    if (has_resume) load_checkpoint(cfg.resume_from, ps, cfg.model, &resumed);

    LossWeights w = cfg.weights;
    switch (cfg.stage) {
        case TrainStage::Codec: w.lambda4 = 0.0; break;
        case TrainStage::Denoiser: w.lambda1 = w.lambda2 = w.lambda3 = 0.0; break;
        default: break;
    }
    w.validate();  // throws if the stage masked away every active term

    Rng init_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    bool needs_codec = !ps.has("fz.H0") && !ps.has("gs.out.w");
    if (cfg.stage == TrainStage::Denoiser) {
        if (!ps.has("gs.out.w"))
            throw state_error("codec parameters missing; run the codec stage first");
    } else if (needs_codec) {
        init_codec(ps, cfg.model, init_rng);
    }
    bool wants_denoiser = cfg.stage != TrainStage::Codec;
    if (wants_denoiser && !ps.has("dn.temb"))
        init_denoiser(ps, cfg.diff_T, init_rng, cfg.denoiser_width);

    auto provider = make_provider(cfg, ps);
    std::vector<Sample> samples = prepare_samples(dataset, *provider, cfg.model.down_factor);

    std::vector<std::string> trainable;
    switch (cfg.stage) {
        case TrainStage::Codec: trainable = names_excluding(ps, {"tp.", "dn."}); break;
        case TrainStage::Denoiser: trainable = names_with_prefixes(ps, {"dn."}); break;
        default: trainable = names_excluding(ps, {"tp."}); break;  // joint
    }
    Adam opt(ps, cfg.adam, trainable);
    Rng rng(cfg.seed);
    uint64_t start_step = 0;
    if (has_resume) {
        rng.set_state(resumed.rng);
        start_step = resumed.step;
        opt.set_steps_taken(resumed.adam_t);
        for (auto& [name, t] : resumed.adam_m)
            if (opt.m().count(name)) opt.m()[name] = std::move(t);
        for (auto& [name, t] : resumed.adam_v)
            if (opt.v().count(name)) opt.v()[name] = std::move(t);
    }
    if (start_step >= (uint64_t)cfg.steps)
        throw config_error("resume step " + std::to_string(start_step) +
                           " is already past the requested " + std::to_string(cfg.steps));

    NoiseSchedule sched;
    if (wants_denoiser) sched = make_schedule(cfg.diff_T, cfg.beta_start, cfg.beta_end);

    // frozen-codec conditioning: one hard-rounded pass per image, reused all run
    struct Frozen {
        Tensor z_c;
        double bpp = 0, spatial = 0, frequency = 0;
    };
    std::vector<Frozen> frozen;
    if (cfg.stage == TrainStage::Denoiser) {
        frozen.resize(samples.size());
        for (size_t i = 0; i < samples.size(); ++i) {
            Tape tape;
            Graph g = bind_params(tape, ps, false);
            std::vector<int> lvl;
            for (const Tensor& l : samples[i].levels) lvl.push_back(tape.leaf(l));
            QuantSpec<float> q;  // Eval
            CodecGraph cg = build_codec_graph(g, tape.leaf(samples[i].padded), lvl,
                                              tape.leaf(samples[i].target), cfg.model, q,
                                              samples[i].pixels);
            frozen[i].z_c = tape.val(cg.z_c);
            frozen[i].bpp = tape.val(cg.terms.rate).v[0];
            frozen[i].spatial = tape.val(cg.terms.spatial).v[0];
            frozen[i].frequency = tape.val(cg.terms.frequency).v[0];
        }
    }

    MetricsLog log(cfg.metrics_path);
    TrainResult res;
    for (uint64_t step = start_step + 1; step <= (uint64_t)cfg.steps; ++step) {
        size_t idx = (size_t)rng.below(samples.size());
        const Sample& s = samples[idx];

        Tape tape;
        Graph g = bind_params(tape, ps, true);
        LossTerms terms;
        double bpp = 0, v_rate = 0, v_spat = 0, v_freq = 0, v_noise = 0;

        if (cfg.stage == TrainStage::Denoiser) {
            int z0 = tape.leaf(s.target);
            int z_c = tape.leaf(frozen[idx].z_c);
            int t_step = 1 + (int)rng.below((uint64_t)sched.T);
            Tensor eps(s.target.shape);
            for (float& e : eps.v) e = (float)rng.normal();
            terms.noise = noise_loss(g, z0, t_step, tape.leaf(eps), z_c, sched);
            v_noise = tape.val(terms.noise).v[0];
            bpp = frozen[idx].bpp;
            v_rate = frozen[idx].bpp;
            v_spat = frozen[idx].spatial;
            v_freq = frozen[idx].frequency;
        } else {
            std::vector<int> lvl;
            for (const Tensor& l : s.levels) lvl.push_back(tape.leaf(l));
            int target = tape.leaf(s.target);
            QuantSpec<float> q;
            q.mode = QuantMode::Train;
            q.rng = &rng;
            CodecGraph cg =
                build_codec_graph(g, tape.leaf(s.padded), lvl, target, cfg.model, q, s.pixels);
            terms = cg.terms;
            if (cfg.stage == TrainStage::Joint && w.lambda4 > 0) {
                int t_step = 1 + (int)rng.below((uint64_t)sched.T);
                Tensor eps(s.target.shape);
                for (float& e : eps.v) e = (float)rng.normal();
                terms.noise = noise_loss(g, target, t_step, tape.leaf(eps), cg.z_c, sched);
            }
            v_rate = tape.val(terms.rate).v[0];
            v_spat = tape.val(terms.spatial).v[0];
            v_freq = tape.val(terms.frequency).v[0];
            if (terms.noise >= 0) v_noise = tape.val(terms.noise).v[0];
            bpp = v_rate;
        }

        int total = combine_losses(g, terms, w);
        double v_total = tape.val(total).v[0];
        check_finite(v_total, step, cfg, s.padded);

        tape.backward(total);
        opt.step(tape, g);

        log.line(step, bpp, v_rate, v_spat, v_freq, v_noise, v_total);
        res.totals.push_back(v_total);

        if (cfg.checkpoint_every > 0 && step % (uint64_t)cfg.checkpoint_every == 0 &&
            step < (uint64_t)cfg.steps && !cfg.checkpoint_path.empty()) {
            CheckpointExtra ex;
            ex.step = step;
            ex.rng = rng.state();
            ex.adam_t = opt.steps_taken();
            ex.adam_m = opt.m();
            ex.adam_v = opt.v();
            save_checkpoint(cfg.checkpoint_path + "." + std::to_string(step), ps, cfg.model, ex);
        }
    }

    if (!cfg.checkpoint_path.empty()) {
        CheckpointExtra ex;
        ex.step = (uint64_t)cfg.steps;
        ex.rng = rng.state();
        ex.adam_t = opt.steps_taken();
        ex.adam_m = opt.m();
        ex.adam_v = opt.v();
        save_checkpoint(cfg.checkpoint_path, ps, cfg.model, ex);
        res.checkpoint = cfg.checkpoint_path;
    }
    return res;
}

}  // namespace ffabic
