#include "dataset.hpp"

#include <cmath>

#include "errors.hpp"
#include "rng.hpp"

namespace ffabic {

Tensor synth_image(uint64_t seed, int h, int w) {
    if (h <= 0 || w <= 0) throw input_error("image dims must be positive");
    Rng rng(seed);
    Tensor img({3, h, w});
    size_t plane = (size_t)h * w;
    const double tau = 6.283185307179586;

    double ang = rng.uniform(0.0, tau);
    double gx = std::cos(ang), gy = std::sin(ang);
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
        c0[c] = rng.uniform(0.1, 0.9);
        c1[c] = rng.uniform(0.1, 0.9);
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double xx = (x + 0.5) / w - 0.5, yy = (y + 0.5) / h - 0.5;
            double t = 0.5 + xx * gx + yy * gy;
            t = t < 0.0 ? 0.0 : t > 1.0 ? 1.0 : t;
            for (int c = 0; c < 3; ++c)
                img.v[(size_t)c * plane + (size_t)y * w + x] = (float)(c0[c] + (c1[c] - c0[c]) * t);
        }

    int gratings = 1 + (int)rng.below(3);
    for (int gi = 0; gi < gratings; ++gi) {
        double th = rng.uniform(0.0, tau), f = rng.uniform(1.0, 7.0), ph = rng.uniform(0.0, tau);
        double amp = rng.uniform(0.03, 0.12);
        double wc[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
        double cth = std::cos(th), sth = std::sin(th);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double xx = (x + 0.5) / w - 0.5, yy = (y + 0.5) / h - 0.5;
                double s = amp * std::sin(tau * f * (xx * cth + yy * sth) + ph);
                for (int c = 0; c < 3; ++c)
                    img.v[(size_t)c * plane + (size_t)y * w + x] += (float)(s * wc[c]);
            }
    }

    int shapes = 2 + (int)rng.below(4);
    for (int si = 0; si < shapes; ++si) {
        double cx = rng.uniform(0.1, 0.9), cy = rng.uniform(0.1, 0.9);
        double rx = rng.uniform(0.06, 0.3), ry = rng.uniform(0.06, 0.3);
        double rot = rng.uniform(0.0, tau), k = rng.uniform(20.0, 60.0);
        double alpha = rng.uniform(0.4, 1.0);
        double col[3] = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
        double cr = std::cos(rot), sr = std::sin(rot);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double dx = (x + 0.5) / w - cx, dy = (y + 0.5) / h - cy;
                double u = (dx * cr - dy * sr) / rx, v = (dx * sr + dy * cr) / ry;
                double m = alpha / (1.0 + std::exp(k * (u * u + v * v - 1.0)));
                for (int c = 0; c < 3; ++c) {
                    size_t i = (size_t)c * plane + (size_t)y * w + x;
                    img.v[i] = (float)((1.0 - m) * img.v[i] + m * col[c]);
                }
            }
    }

    for (auto& v : img.v) v = v < 0.01f ? 0.01f : v > 0.99f ? 0.99f : v;
    return img;
}

std::vector<Tensor> synth_dataset(uint64_t first_seed, int count, int h, int w) {
    std::vector<Tensor> out;
    out.reserve((size_t)count);
    for (int i = 0; i < count; ++i) out.push_back(synth_image(first_seed + (uint64_t)i, h, w));
    return out;
}

}  // namespace ffabic
