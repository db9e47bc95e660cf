#pragma once

#include <complex>
#include <functional>
#include <vector>

#include "ffabic/autodiff.hpp"
#include "ffabic/gradcheck.hpp"
#include "ffabic/rng.hpp"
#include "ffabic/tensor.hpp"

namespace testutil {

inline ffabic::Tensor64 random_tensor64(ffabic::Rng& rng, std::vector<int> shape, double lo = -1.0,
                                        double hi = 1.0) {
    ffabic::Tensor64 t(std::move(shape));
    for (auto& v : t.v) v = rng.uniform(lo, hi);
    return t;
}

inline ffabic::Tensor random_tensor32(ffabic::Rng& rng, std::vector<int> shape, double lo = -1.0,
                                      double hi = 1.0) {
    ffabic::Tensor t(std::move(shape));
    for (auto& v : t.v) v = (float)rng.uniform(lo, hi);
    return t;
}

// O(n^2) reference DFT over the trailing two dims, matching fft2c64 conventions
// (unnormalized forward).
inline ffabic::CTensor64 naive_dft2(const ffabic::CTensor64& x) {
    int nd = x.ndim();
    int H = x.shape[(size_t)nd - 2], W = x.shape[(size_t)nd - 1];
    size_t slabs = x.numel() / ((size_t)H * W);
    ffabic::CTensor64 out(x.shape);
    const double tau = 6.283185307179586476925287;
    for (size_t s = 0; s < slabs; ++s) {
        const std::complex<double>* in = x.data() + s * H * W;
        std::complex<double>* o = out.data() + s * H * W;
        for (int ky = 0; ky < H; ++ky)
            for (int kx = 0; kx < W; ++kx) {
                std::complex<double> acc = 0;
                for (int y = 0; y < H; ++y)
                    for (int xx = 0; xx < W; ++xx) {
                        double ph = -tau * ((double)ky * y / H + (double)kx * xx / W);
                        acc += in[(size_t)y * W + xx] * std::polar(1.0, ph);
                    }
                o[(size_t)ky * W + kx] = acc;
            }
    }
    return out;
}

// Builds a scalar loss from leaves on a fresh tape; used both for the analytic
// backward pass and for the finite-difference re-evaluations.
using GraphFn = std::function<int(ffabic::Tape64&, const std::vector<int>&)>;

// Max relative gradient error over every coordinate of every leaf.
inline double check_graph(const GraphFn& build, const std::vector<ffabic::Tensor64>& leaves,
                          double h = 1e-4) {
    namespace f = ffabic;
    auto eval = [&](const std::vector<f::Tensor64>& vals, std::vector<f::Tensor64>* grads) {
        f::Tape64 tape;
        std::vector<int> ids;
        ids.reserve(vals.size());
        for (const auto& v : vals) ids.push_back(tape.leaf(v, true));
        int loss = build(tape, ids);
        double out = tape.val(loss).v[0];
        if (grads) {
            tape.backward(loss);
            grads->clear();
            for (size_t i = 0; i < ids.size(); ++i)
                grads->push_back(tape.has_grad(ids[i]) ? tape.grad(ids[i])
                                                       : f::Tensor64(vals[i].shape));
        }
        return out;
    };

    std::vector<f::Tensor64> analytic;
    eval(leaves, &analytic);

    double worst = 0.0;
    for (size_t j = 0; j < leaves.size(); ++j) {
        auto fj = [&](const f::Tensor64& theta) {
            std::vector<f::Tensor64> vals = leaves;
            vals[j] = theta;
            return eval(vals, nullptr);
        };
        worst = std::max(worst, f::grad_check(fj, leaves[j], analytic[j], h));
    }
    return worst;
}

}  // namespace testutil
