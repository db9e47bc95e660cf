#include "model.hpp"

#include <cmath>
#include <cstring>

#include <json.hpp>

#include "errors.hpp"

namespace ffabic {

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
    ModelConfig c;
    c.n = 128;
    c.m = 192;
    c.hyper_ch = 32;
    c.down_factor = 16;
    c.depth = 2;
    c.heads = 8;
    c.window_scale = 4;
    c.fft_block = 8;
    return c;
}

void ModelConfig::validate() const {
    if (m % 24 != 0) throw config_error("latent channels must be divisible by 24, got " + std::to_string(m));
    if (heads % 4 != 0) throw config_error("head count must be divisible by 4, got " + std::to_string(heads));
    if (window_scale < 2 || window_scale % 2 != 0)
        throw config_error("window scale must be even and >= 2, got " + std::to_string(window_scale));
    if (down_factor < 4 || (down_factor & (down_factor - 1)) != 0)
        throw config_error("down factor must be a power of two >= 4, got " + std::to_string(down_factor));
    if (fft_block < 2 || (fft_block & (fft_block - 1)) != 0)
        throw config_error("fft block must be a power of two >= 2, got " + std::to_string(fft_block));
    if (n <= 0 || hyper_ch <= 0 || depth <= 0) throw config_error("channel counts must be positive");
    if (n % 4 != 0) throw config_error("transform width must be divisible by 4, got " + std::to_string(n));
    if (n % heads != 0)
        throw config_error("transform width must be divisible by the head count");
    if (m % heads != 0)
        throw config_error("latent channels must be divisible by the head count");
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["n"] = n;
    j["m"] = m;
    j["hyper_ch"] = hyper_ch;
    j["down_factor"] = down_factor;
    j["depth"] = depth;
    j["heads"] = heads;
    j["window_scale"] = window_scale;
    j["fft_block"] = fft_block;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("bad model config json: ") + e.what());
    }
    ModelConfig c;
    try {
        c.n = j.at("n").get<int>();
        c.m = j.at("m").get<int>();
        c.hyper_ch = j.at("hyper_ch").get<int>();
        c.down_factor = j.at("down_factor").get<int>();
        c.depth = j.at("depth").get<int>();
        c.heads = j.at("heads").get<int>();
        c.window_scale = j.at("window_scale").get<int>();
        c.fft_block = j.at("fft_block").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("model config missing field: ") + e.what());
    }
    c.validate();
    return c;
}

Tensor& ParamStore::add(const std::string& name, std::vector<int> shape) {
    auto [it, inserted] = params.emplace(name, Tensor(std::move(shape)));
    if (!inserted) throw model_error("duplicate parameter " + name);
    return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw model_error("missing parameter " + name);
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw model_error("missing parameter " + name);
    return it->second;
}

size_t ParamStore::total_scalars() const {
    size_t n = 0;
    for (auto& [k, v] : params) n += v.numel();
    return n;
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
    const unsigned char* p = (const unsigned char*)data;
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t ParamStore::content_hash() const {
    uint64_t h = 14695981039346656037ULL;
    for (auto& [name, t] : params) h = fnv1a64(t.data(), t.numel() * sizeof(float), h);
    return h;
}

template <typename T>
int GraphT<T>::p(const std::string& name) const {
    auto it = ids.find(name);
    if (it == ids.end()) throw model_error("parameter not bound: " + name);
    return it->second;
}

template <typename T>
GraphT<T> bind_params(TapeT<T>& tape, const ParamStore& ps, bool needs_grad) {
    GraphT<T> g{tape, {}, nullptr};
    for (auto& [name, t] : ps.params) g.ids[name] = tape.leaf(cast_tensor<T>(t), needs_grad);
    return g;
}

void init_conv(ParamStore& ps, const std::string& prefix, int cout, int cin, int kh, int kw, Rng& rng,
               bool zero) {
    Tensor& w = ps.add(prefix + ".w", {cout, cin, kh, kw});
    Tensor& b = ps.add(prefix + ".b", {cout});
    if (!zero) {
        double bound = 1.0 / std::sqrt((double)cin * kh * kw);
        for (auto& v : w.v) v = (float)rng.uniform(-bound, bound);
        for (auto& v : b.v) v = (float)rng.uniform(-bound, bound);
    }
}

void init_layernorm(ParamStore& ps, const std::string& prefix, int c) {
    Tensor& g = ps.add(prefix + ".g", {c});
    ps.add(prefix + ".b", {c});
    for (auto& v : g.v) v = 1.0f;
}

template <typename T>
int conv(GraphT<T>& g, int x, const std::string& prefix, int stride, int pad) {
    return g.tape.conv2d(x, g.p(prefix + ".w"), g.p(prefix + ".b"), stride, pad);
}

template struct GraphT<float>;
template struct GraphT<double>;
template GraphT<float> bind_params(TapeT<float>&, const ParamStore&, bool);
template GraphT<double> bind_params(TapeT<double>&, const ParamStore&, bool);
template int conv(GraphT<float>&, int, const std::string&, int, int);
template int conv(GraphT<double>&, int, const std::string&, int, int);

}  // namespace ffabic
