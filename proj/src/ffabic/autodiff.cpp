#include "autodiff.hpp"

#include <cmath>
#include <cstring>

#include "errors.hpp"
#include "fft.hpp"

namespace ffabic {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kLn2 = 0.69314718055994530942;

double norm_cdf(double z) { return 0.5 * (1.0 + std::erf(z * kInvSqrt2)); }
double norm_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

template <typename T>
TensorT<T> transpose_b(const TensorT<T>& x, int B, int r, int c) {
    TensorT<T> out({B, c, r});
    for (int b = 0; b < B; ++b) {
        const T* src = x.data() + (size_t)b * r * c;
        T* dst = out.data() + (size_t)b * r * c;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) dst[(size_t)j * r + i] = src[(size_t)i * c + j];
    }
    return out;
}

}  // namespace

template <typename T>
void gemm_acc(int m, int n, int k, const T* A, const T* B, T* C) {
    for (int i = 0; i < m; ++i) {
        T* crow = C + (size_t)i * n;
        const T* arow = A + (size_t)i * k;
        for (int l = 0; l < k; ++l) {
            T a = arow[l];
            if (a == (T)0) continue;
            const T* brow = B + (size_t)l * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

template void gemm_acc<float>(int, int, int, const float*, const float*, float*);
template void gemm_acc<double>(int, int, int, const double*, const double*, double*);

template <typename T>
TensorT<T>& TapeT<T>::grad_of(int id) {
    Node& n = nodes_[(size_t)id];
    if (!n.grad_alloc) {
        n.grad = TensorT<T>(n.val.shape);
        n.grad_alloc = true;
    }
    return n.grad;
}

template <typename T>
int TapeT<T>::push(TensorT<T> val, bool needs_grad, std::function<void()> back) {
    nodes_.push_back(Node{std::move(val), TensorT<T>(), std::move(back), needs_grad, false});
    return (int)nodes_.size() - 1;
}

template <typename T>
int TapeT<T>::leaf(TensorT<T> value, bool needs_grad) {
    return push(std::move(value), needs_grad, nullptr);
}

template <typename T>
int TapeT<T>::unary_ptwise(int a, const std::function<T(T)>& f,
                           const std::function<T(T, T)>& dfdx_of_xy) {
    const TensorT<T>& x = val(a);
    TensorT<T> out(x.shape);
    for (size_t i = 0; i < x.numel(); ++i) out.v[i] = f(x.v[i]);
    bool ng = needs_grad(a);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, id, dfdx_of_xy]() {
        const TensorT<T>& g = grad(id);
        const TensorT<T>& x = val(a);
        const TensorT<T>& y = val(id);
        TensorT<T>& da = grad_of(a);
        for (size_t i = 0; i < g.numel(); ++i) da.v[i] += g.v[i] * dfdx_of_xy(x.v[i], y.v[i]);
    };
    return id;
}

template <typename T>
int TapeT<T>::add(int a, int b) {
    const TensorT<T>& xa = val(a);
    const TensorT<T>& xb = val(b);
    if (!same_shape(xa, xb))
        throw contract_error("add: shape mismatch " + shape_str(xa.shape) + " vs " + shape_str(xb.shape));
    TensorT<T> out(xa.shape);
    for (size_t i = 0; i < out.numel(); ++i) out.v[i] = xa.v[i] + xb.v[i];
    bool ng = needs_grad(a) || needs_grad(b);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, b, id]() {
        const TensorT<T>& g = grad(id);
        if (needs_grad(a)) {
            TensorT<T>& da = grad_of(a);
            for (size_t i = 0; i < g.numel(); ++i) da.v[i] += g.v[i];
        }
        if (needs_grad(b)) {
            TensorT<T>& db = grad_of(b);
            for (size_t i = 0; i < g.numel(); ++i) db.v[i] += g.v[i];
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::sub(int a, int b) {
    const TensorT<T>& xa = val(a);
    const TensorT<T>& xb = val(b);
    if (!same_shape(xa, xb))
        throw contract_error("sub: shape mismatch " + shape_str(xa.shape) + " vs " + shape_str(xb.shape));
    TensorT<T> out(xa.shape);
    for (size_t i = 0; i < out.numel(); ++i) out.v[i] = xa.v[i] - xb.v[i];
    bool ng = needs_grad(a) || needs_grad(b);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, b, id]() {
        const TensorT<T>& g = grad(id);
        if (needs_grad(a)) {
            TensorT<T>& da = grad_of(a);
            for (size_t i = 0; i < g.numel(); ++i) da.v[i] += g.v[i];
        }
        if (needs_grad(b)) {
            TensorT<T>& db = grad_of(b);
            for (size_t i = 0; i < g.numel(); ++i) db.v[i] -= g.v[i];
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::mul(int a, int b) {
    const TensorT<T>& xa = val(a);
    const TensorT<T>& xb = val(b);
    if (!same_shape(xa, xb))
        throw contract_error("mul: shape mismatch " + shape_str(xa.shape) + " vs " + shape_str(xb.shape));
    TensorT<T> out(xa.shape);
    for (size_t i = 0; i < out.numel(); ++i) out.v[i] = xa.v[i] * xb.v[i];
    bool ng = needs_grad(a) || needs_grad(b);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, b, id]() {
        const TensorT<T>& g = grad(id);
        if (needs_grad(a)) {
            TensorT<T>& da = grad_of(a);
            const TensorT<T>& xb = val(b);
            for (size_t i = 0; i < g.numel(); ++i) da.v[i] += g.v[i] * xb.v[i];
        }
        if (needs_grad(b)) {
            TensorT<T>& db = grad_of(b);
            const TensorT<T>& xa = val(a);
            for (size_t i = 0; i < g.numel(); ++i) db.v[i] += g.v[i] * xa.v[i];
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::scale(int a, T s) {
    return unary_ptwise(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
int TapeT<T>::add_const(int a, T c) {
    return unary_ptwise(a, [c](T x) { return x + c; }, [](T, T) { return (T)1; });
}

template <typename T>
int TapeT<T>::exp_(int a) {
    return unary_ptwise(a, [](T x) { return (T)std::exp((double)x); }, [](T, T y) { return y; });
}

template <typename T>
int TapeT<T>::log_(int a) {
    return unary_ptwise(a, [](T x) { return (T)std::log((double)x); },
                        [](T x, T) { return (T)(1.0 / (double)x); });
}

template <typename T>
int TapeT<T>::tanh_(int a) {
    return unary_ptwise(a, [](T x) { return (T)std::tanh((double)x); },
                        [](T, T y) { return (T)1 - y * y; });
}

template <typename T>
int TapeT<T>::sigmoid_(int a) {
    return unary_ptwise(a, [](T x) { return (T)(1.0 / (1.0 + std::exp(-(double)x))); },
                        [](T, T y) { return y * ((T)1 - y); });
}

template <typename T>
int TapeT<T>::softplus_(int a) {
    return unary_ptwise(
        a,
        [](T x) {
            double xd = (double)x;
            if (xd > 30.0) return x;
            return (T)std::log1p(std::exp(xd));
        },
        [](T x, T) { return (T)(1.0 / (1.0 + std::exp(-(double)x))); });
}

template <typename T>
int TapeT<T>::gelu(int a) {
    constexpr double c = 0.79788456080286535588;  // sqrt(2/pi)
    constexpr double k = 0.044715;
    return unary_ptwise(
        a,
        [](T x) {
            double xd = (double)x;
            double u = c * (xd + k * xd * xd * xd);
            return (T)(0.5 * xd * (1.0 + std::tanh(u)));
        },
        [](T x, T) {
            double xd = (double)x;
            double u = c * (xd + k * xd * xd * xd);
            double t = std::tanh(u);
            double du = c * (1.0 + 3.0 * k * xd * xd);
            return (T)(0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du);
        });
}

template <typename T>
int TapeT<T>::silu(int a) {
    return unary_ptwise(
        a,
        [](T x) {
            double s = 1.0 / (1.0 + std::exp(-(double)x));
            return (T)((double)x * s);
        },
        [](T x, T) {
            double s = 1.0 / (1.0 + std::exp(-(double)x));
            return (T)(s * (1.0 + (double)x * (1.0 - s)));
        });
}

template <typename T>
int TapeT<T>::lrelu(int a, T slope) {
    return unary_ptwise(a, [slope](T x) { return x >= (T)0 ? x : slope * x; },
                        [slope](T x, T) { return x >= (T)0 ? (T)1 : slope; });
}

template <typename T>
int TapeT<T>::clamp_min_pt(int a, T bound) {
    const TensorT<T>& x = val(a);
    TensorT<T> out(x.shape);
    for (size_t i = 0; i < x.numel(); ++i) out.v[i] = x.v[i] < bound ? bound : x.v[i];
    bool ng = needs_grad(a);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, id, bound]() {
        const TensorT<T>& g = grad(id);
        const TensorT<T>& x = val(a);
        TensorT<T>& da = grad_of(a);
        // pass when unclamped, or when the gradient would push the value up
        for (size_t i = 0; i < g.numel(); ++i)
            if (x.v[i] >= bound || g.v[i] < (T)0) da.v[i] += g.v[i];
    };
    return id;
}

template <typename T>
int TapeT<T>::add_bcast_last(int a, int b) {
    const TensorT<T>& xa = val(a);
    const TensorT<T>& xb = val(b);
    if (xa.ndim() != xb.ndim() || xb.shape.back() != 1)
        throw contract_error("add_bcast_last: bad shapes");
    for (int i = 0; i + 1 < xa.ndim(); ++i)
        if (xa.shape[(size_t)i] != xb.shape[(size_t)i]) throw contract_error("add_bcast_last: bad shapes");
    int L = xa.shape.back();
    size_t rows = xa.numel() / (size_t)L;
    TensorT<T> out(xa.shape);
    for (size_t r = 0; r < rows; ++r) {
        T bv = xb.v[r];
        for (int l = 0; l < L; ++l) out.v[r * L + l] = xa.v[r * L + l] + bv;
    }
    bool ng = needs_grad(a) || needs_grad(b);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, b, id, L, rows]() {
        const TensorT<T>& g = grad(id);
        if (needs_grad(a)) {
            TensorT<T>& da = grad_of(a);
            for (size_t i = 0; i < g.numel(); ++i) da.v[i] += g.v[i];
        }
        if (needs_grad(b)) {
            TensorT<T>& db = grad_of(b);
            for (size_t r = 0; r < rows; ++r) {
                T s = 0;
                for (int l = 0; l < L; ++l) s += g.v[r * (size_t)L + l];
                db.v[r] += s;
            }
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::mul_bcast_last(int a, int b) {
    const TensorT<T>& xa = val(a);
    const TensorT<T>& xb = val(b);
    if (xa.ndim() != xb.ndim() || xb.shape.back() != 1)
        throw contract_error("mul_bcast_last: bad shapes");
    for (int i = 0; i + 1 < xa.ndim(); ++i)
        if (xa.shape[(size_t)i] != xb.shape[(size_t)i]) throw contract_error("mul_bcast_last: bad shapes");
    int L = xa.shape.back();
    size_t rows = xa.numel() / (size_t)L;
    TensorT<T> out(xa.shape);
    for (size_t r = 0; r < rows; ++r) {
        T bv = xb.v[r];
        for (int l = 0; l < L; ++l) out.v[r * L + l] = xa.v[r * L + l] * bv;
    }
    bool ng = needs_grad(a) || needs_grad(b);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, b, id, L, rows]() {
        const TensorT<T>& g = grad(id);
        if (needs_grad(a)) {
            TensorT<T>& da = grad_of(a);
            const TensorT<T>& xb = val(b);
            for (size_t r = 0; r < rows; ++r)
                for (int l = 0; l < L; ++l) da.v[r * (size_t)L + l] += g.v[r * (size_t)L + l] * xb.v[r];
        }
        if (needs_grad(b)) {
            TensorT<T>& db = grad_of(b);
            const TensorT<T>& xa = val(a);
            for (size_t r = 0; r < rows; ++r) {
                T s = 0;
                for (int l = 0; l < L; ++l) s += g.v[r * (size_t)L + l] * xa.v[r * (size_t)L + l];
                db.v[r] += s;
            }
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::sum(int a) {
    const TensorT<T>& x = val(a);
    T s = 0;
    for (size_t i = 0; i < x.numel(); ++i) s += x.v[i];
    TensorT<T> out({1});
    out.v[0] = s;
    bool ng = needs_grad(a);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, id]() {
        T g = grad(id).v[0];
        TensorT<T>& da = grad_of(a);
        for (size_t i = 0; i < da.numel(); ++i) da.v[i] += g;
    };
    return id;
}

template <typename T>
int TapeT<T>::mean_all(int a) {
    return scale(sum(a), (T)(1.0 / (double)val(a).numel()));
}

template <typename T>
int TapeT<T>::mse(int a, int b) {
    int d = sub(a, b);
    return mean_all(mul(d, d));
}

template <typename T>
int TapeT<T>::reshape(int a, std::vector<int> shape) {
    const TensorT<T>& x = val(a);
    if (numel_of(shape) != x.numel())
        throw contract_error("reshape: numel mismatch " + shape_str(x.shape) + " -> " + shape_str(shape));
    TensorT<T> out(std::move(shape), x.v);
    bool ng = needs_grad(a);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, id]() {
        const TensorT<T>& g = grad(id);
        TensorT<T>& da = grad_of(a);
        for (size_t i = 0; i < g.numel(); ++i) da.v[i] += g.v[i];
    };
    return id;
}

template <typename T>
int TapeT<T>::slice_ch(int a, int c0, int c1) {
    const TensorT<T>& x = val(a);
    if (x.ndim() != 3) throw contract_error("slice_ch: expected [C,H,W]");
    int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    if (c0 < 0 || c1 <= c0 || c1 > C) throw contract_error("slice_ch: bad range");
    size_t plane = (size_t)H * W;
    TensorT<T> out({c1 - c0, H, W});
    std::memcpy(out.data(), x.data() + (size_t)c0 * plane, (size_t)(c1 - c0) * plane * sizeof(T));
    bool ng = needs_grad(a);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, id, c0, plane]() {
        const TensorT<T>& g = grad(id);
        TensorT<T>& da = grad_of(a);
        T* dst = da.data() + (size_t)c0 * plane;
        for (size_t i = 0; i < g.numel(); ++i) dst[i] += g.v[i];
    };
    return id;
}

template <typename T>
int TapeT<T>::concat_ch(const std::vector<int>& parts) {
    if (parts.empty()) throw contract_error("concat_ch: empty");
    int H = val(parts[0]).shape[1], W = val(parts[0]).shape[2];
    int C = 0;
    bool ng = false;
    for (int p : parts) {
        const TensorT<T>& x = val(p);
        if (x.ndim() != 3 || x.shape[1] != H || x.shape[2] != W)
            throw contract_error("concat_ch: shape mismatch");
        C += x.shape[0];
        ng = ng || needs_grad(p);
    }
    TensorT<T> out({C, H, W});
    size_t off = 0;
    for (int p : parts) {
        const TensorT<T>& x = val(p);
        std::memcpy(out.data() + off, x.data(), x.numel() * sizeof(T));
        off += x.numel();
    }
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    std::vector<int> ps = parts;
    nodes_[(size_t)id].back = [this, ps, id]() {
        const TensorT<T>& g = grad(id);
        size_t off = 0;
        for (int p : ps) {
            size_t n = val(p).numel();
            if (needs_grad(p)) {
                TensorT<T>& dp = grad_of(p);
                for (size_t i = 0; i < n; ++i) dp.v[i] += g.v[off + i];
            }
            off += n;
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::gather(int a, std::shared_ptr<const std::vector<int64_t>> map, std::vector<int> out_shape) {
    const TensorT<T>& x = val(a);
    size_t n = numel_of(out_shape);
    if (map->size() != n) throw contract_error("gather: map size mismatch");
    TensorT<T> out(std::move(out_shape));
    const auto& m = *map;
    for (size_t i = 0; i < n; ++i) out.v[i] = m[i] >= 0 ? x.v[(size_t)m[i]] : (T)0;
    bool ng = needs_grad(a);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, id, map]() {
        const TensorT<T>& g = grad(id);
        TensorT<T>& da = grad_of(a);
        const auto& m = *map;
        for (size_t i = 0; i < g.numel(); ++i)
            if (m[i] >= 0) da.v[(size_t)m[i]] += g.v[i];
    };
    return id;
}

template <typename T>
int TapeT<T>::bmm(int a, int b, bool ta, bool tb) {
    const TensorT<T>& xa = val(a);
    const TensorT<T>& xb = val(b);
    if (xa.ndim() != 3 || xb.ndim() != 3 || xa.shape[0] != xb.shape[0])
        throw contract_error("bmm: expected [B,.,.] pair, got " + shape_str(xa.shape) + " x " + shape_str(xb.shape));
    int B = xa.shape[0];
    int m = ta ? xa.shape[2] : xa.shape[1];
    int k = ta ? xa.shape[1] : xa.shape[2];
    int kb = tb ? xb.shape[2] : xb.shape[1];
    int n = tb ? xb.shape[1] : xb.shape[2];
    if (k != kb) throw contract_error("bmm: inner dim mismatch");

    auto aeff = std::make_shared<TensorT<T>>(ta ? transpose_b(xa, B, xa.shape[1], xa.shape[2]) : xa);
    auto beff = std::make_shared<TensorT<T>>(tb ? transpose_b(xb, B, xb.shape[1], xb.shape[2]) : xb);

    TensorT<T> out({B, m, n});
    for (int i = 0; i < B; ++i)
        gemm_acc(m, n, k, aeff->data() + (size_t)i * m * k, beff->data() + (size_t)i * k * n,
                 out.data() + (size_t)i * m * n);
    bool ng = needs_grad(a) || needs_grad(b);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, b, id, ta, tb, B, m, n, k, aeff, beff]() {
        const TensorT<T>& g = grad(id);
        if (needs_grad(a)) {
            // dA_eff = g . B_eff^T
            TensorT<T> bt = transpose_b(*beff, B, k, n);
            TensorT<T> daeff({B, m, k});
            for (int i = 0; i < B; ++i)
                gemm_acc(m, k, n, g.data() + (size_t)i * m * n, bt.data() + (size_t)i * n * k,
                         daeff.data() + (size_t)i * m * k);
            TensorT<T>& da = grad_of(a);
            if (ta) {
                TensorT<T> dat = transpose_b(daeff, B, m, k);
                for (size_t i = 0; i < da.numel(); ++i) da.v[i] += dat.v[i];
            } else {
                for (size_t i = 0; i < da.numel(); ++i) da.v[i] += daeff.v[i];
            }
        }
        if (needs_grad(b)) {
            // dB_eff = A_eff^T . g
            TensorT<T> at = transpose_b(*aeff, B, m, k);
            TensorT<T> dbeff({B, k, n});
            for (int i = 0; i < B; ++i)
                gemm_acc(k, n, m, at.data() + (size_t)i * k * m, g.data() + (size_t)i * m * n,
                         dbeff.data() + (size_t)i * k * n);
            TensorT<T>& db = grad_of(b);
            if (tb) {
                TensorT<T> dbt = transpose_b(dbeff, B, k, n);
                for (size_t i = 0; i < db.numel(); ++i) db.v[i] += dbt.v[i];
            } else {
                for (size_t i = 0; i < db.numel(); ++i) db.v[i] += dbeff.v[i];
            }
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::conv2d(int x, int w, int b, int stride, int pad) {
    const TensorT<T>& xv = val(x);
    const TensorT<T>& wv = val(w);
    const TensorT<T>& bv = val(b);
    if (xv.ndim() != 3 || wv.ndim() != 4) throw contract_error("conv2d: expected x [C,H,W], w [O,C,kh,kw]");
    int Cin = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    int Cout = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3];
    if (wv.shape[1] != Cin) throw contract_error("conv2d: channel mismatch");
    if (bv.numel() != (size_t)Cout) throw contract_error("conv2d: bias size mismatch");
    int OH = (H + 2 * pad - kh) / stride + 1;
    int OW = (W + 2 * pad - kw) / stride + 1;
    if (OH <= 0 || OW <= 0) throw contract_error("conv2d: empty output");

    int K = Cin * kh * kw;
    size_t on = (size_t)OH * OW;
    auto col = std::make_shared<TensorT<T>>(std::vector<int>{K, OH * OW});
    for (int ci = 0; ci < Cin; ++ci)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                T* crow = col->data() + (size_t)((ci * kh + ky) * kw + kx) * on;
                for (int oy = 0; oy < OH; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    const T* srow = xv.data() + ((size_t)ci * H + iy) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) crow[(size_t)oy * OW + ox] = srow[ix];
                    }
                }
            }

    TensorT<T> out({Cout, OH, OW});
    for (int co = 0; co < Cout; ++co) {
        T bias = bv.v[(size_t)co];
        T* orow = out.data() + (size_t)co * on;
        for (size_t i = 0; i < on; ++i) orow[i] = bias;
    }
    gemm_acc(Cout, OH * OW, K, wv.data(), col->data(), out.data());

    bool ng = needs_grad(x) || needs_grad(w) || needs_grad(b);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, x, w, b, id, col, Cin, H, W, Cout, kh, kw, OH, OW, stride, pad, K]() {
        const TensorT<T>& g = grad(id);  // [Cout, OH, OW]
        size_t on = (size_t)OH * OW;
        if (needs_grad(b)) {
            TensorT<T>& db = grad_of(b);
            for (int co = 0; co < Cout; ++co) {
                T s = 0;
                const T* grow = g.data() + (size_t)co * on;
                for (size_t i = 0; i < on; ++i) s += grow[i];
                db.v[(size_t)co] += s;
            }
        }
        if (needs_grad(w)) {
            // dW = g . col^T
            TensorT<T> colt = transpose_b(*col, 1, K, (int)on);
            TensorT<T>& dw = grad_of(w);
            gemm_acc(Cout, K, (int)on, g.data(), colt.data(), dw.data());
        }
        if (needs_grad(x)) {
            // dcol = w^T . g, then col2im scatter
            const TensorT<T>& wv = val(w);
            TensorT<T> wt = transpose_b(wv.reshaped({1, Cout, K}), 1, Cout, K);
            TensorT<T> dcol({K, (int)on});
            gemm_acc(K, (int)on, Cout, wt.data(), g.data(), dcol.data());
            TensorT<T>& dx = grad_of(x);
            for (int ci = 0; ci < Cin; ++ci)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const T* crow = dcol.data() + (size_t)((ci * kh + ky) * kw + kx) * on;
                        for (int oy = 0; oy < OH; ++oy) {
                            int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= H) continue;
                            T* drow = dx.data() + ((size_t)ci * H + iy) * W;
                            for (int ox = 0; ox < OW; ++ox) {
                                int ix = ox * stride + kx - pad;
                                if (ix >= 0 && ix < W) drow[ix] += crow[(size_t)oy * OW + ox];
                            }
                        }
                    }
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::softmax_lastdim(int a) {
    const TensorT<T>& x = val(a);
    int L = x.shape.back();
    size_t rows = x.numel() / (size_t)L;
    TensorT<T> out(x.shape);
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * L;
        T* yr = out.data() + r * L;
        T mx = xr[0];
        for (int l = 1; l < L; ++l) mx = std::max(mx, xr[l]);
        double s = 0;
        for (int l = 0; l < L; ++l) {
            double e = std::exp((double)(xr[l] - mx));
            yr[l] = (T)e;
            s += e;
        }
        double inv = 1.0 / s;
        for (int l = 0; l < L; ++l) yr[l] = (T)((double)yr[l] * inv);
    }
    bool ng = needs_grad(a);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, id, L, rows]() {
        const TensorT<T>& g = grad(id);
        const TensorT<T>& y = val(id);
        TensorT<T>& da = grad_of(a);
        for (size_t r = 0; r < rows; ++r) {
            const T* gr = g.data() + r * L;
            const T* yr = y.data() + r * L;
            T* dr = da.data() + r * L;
            T dot = 0;
            for (int l = 0; l < L; ++l) dot += gr[l] * yr[l];
            for (int l = 0; l < L; ++l) dr[l] += yr[l] * (gr[l] - dot);
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::layernorm_ch(int x, int gamma, int beta, T eps) {
    const TensorT<T>& xv = val(x);
    if (xv.ndim() != 3) throw contract_error("layernorm_ch: expected [C,H,W]");
    int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
    const TensorT<T>& gm = val(gamma);
    const TensorT<T>& bt = val(beta);
    if (gm.numel() != (size_t)C || bt.numel() != (size_t)C)
        throw contract_error("layernorm_ch: param size mismatch");
    size_t P = (size_t)H * W;
    auto xhat = std::make_shared<TensorT<T>>(xv.shape);
    auto istd = std::make_shared<std::vector<T>>(P);
    TensorT<T> out(xv.shape);
    for (size_t p = 0; p < P; ++p) {
        double mu = 0;
        for (int c = 0; c < C; ++c) mu += (double)xv.v[(size_t)c * P + p];
        mu /= C;
        double var = 0;
        for (int c = 0; c < C; ++c) {
            double d = (double)xv.v[(size_t)c * P + p] - mu;
            var += d * d;
        }
        var /= C;
        double is = 1.0 / std::sqrt(var + (double)eps);
        (*istd)[p] = (T)is;
        for (int c = 0; c < C; ++c) {
            T xh = (T)(((double)xv.v[(size_t)c * P + p] - mu) * is);
            xhat->v[(size_t)c * P + p] = xh;
            out.v[(size_t)c * P + p] = xh * gm.v[(size_t)c] + bt.v[(size_t)c];
        }
    }
    bool ng = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, x, gamma, beta, id, C, P, xhat, istd]() {
        const TensorT<T>& g = grad(id);
        if (needs_grad(beta)) {
            TensorT<T>& db = grad_of(beta);
            for (int c = 0; c < C; ++c) {
                T s = 0;
                for (size_t p = 0; p < P; ++p) s += g.v[(size_t)c * P + p];
                db.v[(size_t)c] += s;
            }
        }
        if (needs_grad(gamma)) {
            TensorT<T>& dg = grad_of(gamma);
            for (int c = 0; c < C; ++c) {
                T s = 0;
                for (size_t p = 0; p < P; ++p) s += g.v[(size_t)c * P + p] * xhat->v[(size_t)c * P + p];
                dg.v[(size_t)c] += s;
            }
        }
        if (needs_grad(x)) {
            const TensorT<T>& gm = val(gamma);
            TensorT<T>& dx = grad_of(x);
            for (size_t p = 0; p < P; ++p) {
                double m1 = 0, m2 = 0;
                for (int c = 0; c < C; ++c) {
                    double gh = (double)g.v[(size_t)c * P + p] * (double)gm.v[(size_t)c];
                    m1 += gh;
                    m2 += gh * (double)xhat->v[(size_t)c * P + p];
                }
                m1 /= C;
                m2 /= C;
                double is = (double)(*istd)[p];
                for (int c = 0; c < C; ++c) {
                    double gh = (double)g.v[(size_t)c * P + p] * (double)gm.v[(size_t)c];
                    dx.v[(size_t)c * P + p] +=
                        (T)(is * (gh - m1 - (double)xhat->v[(size_t)c * P + p] * m2));
                }
            }
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::avgpool2(int a) {
    const TensorT<T>& x = val(a);
    if (x.ndim() != 3) throw contract_error("avgpool2: expected [C,H,W]");
    int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    if (H % 2 || W % 2) throw contract_error("avgpool2: odd spatial dims " + shape_str(x.shape));
    int OH = H / 2, OW = W / 2;
    TensorT<T> out({C, OH, OW});
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                const T* p = x.data() + ((size_t)c * H + 2 * oy) * W + 2 * ox;
                out.v[((size_t)c * OH + oy) * OW + ox] = (T)0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
            }
    bool ng = needs_grad(a);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, id, C, H, W, OH, OW]() {
        const TensorT<T>& g = grad(id);
        TensorT<T>& da = grad_of(a);
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    T gv = (T)0.25 * g.v[((size_t)c * OH + oy) * OW + ox];
                    T* p = da.data() + ((size_t)c * H + 2 * oy) * W + 2 * ox;
                    p[0] += gv;
                    p[1] += gv;
                    p[W] += gv;
                    p[W + 1] += gv;
                }
    };
    return id;
}

template <typename T>
int TapeT<T>::quantize_ste(int x, const TensorT<T>* offset) {
    const TensorT<T>& xv = val(x);
    if (offset && !same_shape(xv, *offset)) throw contract_error("quantize_ste: offset shape mismatch");
    TensorT<T> out(xv.shape);
    for (size_t i = 0; i < xv.numel(); ++i) {
        double off = offset ? (double)offset->v[i] : 0.0;
        out.v[i] = (T)(std::round((double)xv.v[i] - off) + off);
    }
    bool ng = needs_grad(x);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, x, id]() {
        const TensorT<T>& g = grad(id);
        TensorT<T>& dx = grad_of(x);
        for (size_t i = 0; i < g.numel(); ++i) dx.v[i] += g.v[i];
    };
    return id;
}

template <typename T>
int TapeT<T>::freq_modulate(int x, int filt) {
    const TensorT<T>& xv = val(x);
    const TensorT<T>& fv = val(filt);
    if (xv.ndim() != 3 || fv.ndim() != 2) throw contract_error("freq_modulate: expected [N,B,B], [B,B]");
    int N = xv.shape[0], B = xv.shape[1];
    if (xv.shape[2] != B || fv.shape[0] != B || fv.shape[1] != B)
        throw contract_error("freq_modulate: block size mismatch");

    Tensor64 wsym({B, B});
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j)
            wsym.v[(size_t)i * B + j] = 0.5 * ((double)fv.v[(size_t)i * B + j] +
                                               (double)fv.v[(size_t)((B - i) % B) * B + (B - j) % B]);

    auto modulate = [B, N](const Tensor64& inp, const Tensor64& w) {
        CTensor64 c({N, B, B});
        for (size_t i = 0; i < inp.numel(); ++i) c.v[i] = inp.v[i];
        CTensor64 X = fft2c64(c);
        for (int n = 0; n < N; ++n)
            for (size_t k = 0; k < (size_t)B * B; ++k) X.v[(size_t)n * B * B + k] *= w.v[k];
        CTensor64 y = ifft2c64(X);
        Tensor64 out({N, B, B});
        for (size_t i = 0; i < out.numel(); ++i) out.v[i] = y.v[i].real();
        return out;
    };

    Tensor64 x64 = cast_tensor<double>(xv);
    Tensor64 y64 = modulate(x64, wsym);
    TensorT<T> out = cast_tensor<T>(y64);

    bool ng = needs_grad(x) || needs_grad(filt);
    if (!ng) return push(std::move(out), false, nullptr);
    auto x64p = std::make_shared<Tensor64>(std::move(x64));
    auto wsymp = std::make_shared<Tensor64>(std::move(wsym));
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, x, filt, id, N, B, x64p, wsymp, modulate]() {
        const TensorT<T>& g = grad(id);
        Tensor64 g64 = cast_tensor<double>(g);
        if (needs_grad(x)) {
            // real symmetric frequency response => the map is self-adjoint
            Tensor64 dx64 = modulate(g64, *wsymp);
            TensorT<T>& dx = grad_of(x);
            for (size_t i = 0; i < dx.numel(); ++i) dx.v[i] += (T)dx64.v[i];
        }
        if (needs_grad(filt)) {
            size_t bb = (size_t)B * B;
            CTensor64 cx({N, B, B}), cg({N, B, B});
            for (size_t i = 0; i < cx.numel(); ++i) {
                cx.v[i] = x64p->v[i];
                cg.v[i] = g64.v[i];
            }
            CTensor64 X = fft2c64(cx);
            CTensor64 G = fft2c64(cg);
            std::vector<double> dws(bb, 0.0);
            double inv = 1.0 / (double)bb;
            for (int n = 0; n < N; ++n)
                for (size_t k = 0; k < bb; ++k)
                    dws[k] += inv * (X.v[(size_t)n * bb + k] * std::conj(G.v[(size_t)n * bb + k])).real();
            TensorT<T>& df = grad_of(filt);
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < B; ++j)
                    df.v[(size_t)i * B + j] +=
                        (T)(0.5 * (dws[(size_t)i * B + j] + dws[(size_t)((B - i) % B) * B + (B - j) % B]));
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::gaussian_bits(int v, int mu, int sigma) {
    const TensorT<T>& vv = val(v);
    const TensorT<T>& mv = val(mu);
    const TensorT<T>& sv = val(sigma);
    if (!same_shape(vv, mv) || !same_shape(vv, sv)) throw contract_error("gaussian_bits: shape mismatch");
    constexpr double kPMin = 1e-30;
    constexpr double kBitsFloor = 1.0 / 65536.0;
    size_t n = vv.numel();
    TensorT<T> out(vv.shape);
    // saved intermediates for backward
    auto saved = std::make_shared<std::vector<double>>(n * 3);  // dp/dv, dp/dmu is -dp/dv, dp/dsigma, p
    for (size_t i = 0; i < n; ++i) {
        double d = (double)vv.v[i] - (double)mv.v[i];
        double s = (double)sv.v[i];
        double up = (d + 0.5) / s;
        double lo = (d - 0.5) / s;
        double p = norm_cdf(up) - norm_cdf(lo);
        bool floored_p = p < kPMin;
        if (floored_p) p = kPMin;
        double bits = -std::log2(p);
        bool floored_b = bits < kBitsFloor;
        if (floored_b) bits = kBitsFloor;
        out.v[i] = (T)bits;
        if (floored_p || floored_b) {
            (*saved)[i * 3 + 0] = 0.0;
            (*saved)[i * 3 + 1] = 0.0;
            (*saved)[i * 3 + 2] = 1.0;  // unused when dp terms are zero
        } else {
            double pu = norm_pdf(up), pl = norm_pdf(lo);
            (*saved)[i * 3 + 0] = (pu - pl) / s;                 // dp/dv
            (*saved)[i * 3 + 1] = -(pu * up - pl * lo) / s;      // dp/dsigma
            (*saved)[i * 3 + 2] = p;
        }
    }
    bool ng = needs_grad(v) || needs_grad(mu) || needs_grad(sigma);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, v, mu, sigma, id, n, saved]() {
        const TensorT<T>& g = grad(id);
        for (size_t i = 0; i < n; ++i) {
            double dpdv = (*saved)[i * 3 + 0];
            double dpds = (*saved)[i * 3 + 1];
            double p = (*saved)[i * 3 + 2];
            double dbits_dp = -1.0 / (p * kLn2);  // d(-log2 p)/dp
            double gi = (double)g.v[i];
            if (needs_grad(v)) grad_of(v).v[i] += (T)(gi * dbits_dp * dpdv);
            if (needs_grad(mu)) grad_of(mu).v[i] += (T)(gi * dbits_dp * -dpdv);
            if (needs_grad(sigma)) grad_of(sigma).v[i] += (T)(gi * dbits_dp * dpds);
        }
    };
    return id;
}

template <typename T>
int TapeT<T>::freq_loss(int a, int b) {
    const TensorT<T>& av = val(a);
    const TensorT<T>& bv = val(b);
    if (av.ndim() != 3 || !same_shape(av, bv)) throw contract_error("freq_loss: expected equal [C,H,W]");
    int C = av.shape[0], H = av.shape[1], W = av.shape[2];
    size_t hw = (size_t)H * W, n = (size_t)C * hw;
    double total = (double)n;
    constexpr double kActive = 1e-8;

    auto spectrum = [C, H, W](const TensorT<T>& x) {
        CTensor64 c({C, H, W});
        for (size_t i = 0; i < c.numel(); ++i) c.v[i] = (double)x.v[i];
        return fft2c64(c);
    };
    auto A = std::make_shared<CTensor64>(spectrum(av));
    auto B = std::make_shared<CTensor64>(spectrum(bv));

    double amp = 0.0, ph = 0.0;
    for (size_t k = 0; k < n; ++k) {
        double ma = std::abs(A->v[k]), mb = std::abs(B->v[k]);
        double d = ma - mb;
        amp += d * d;
        if (ma >= kActive || mb >= kActive) {
            // unit phasors; an empty side contributes phase zero
            std::complex<double> u1 = ma >= kActive ? A->v[k] / ma : 1.0;
            std::complex<double> u2 = mb >= kActive ? B->v[k] / mb : 1.0;
            ph += 2.0 - 2.0 * (u1.real() * u2.real() + u1.imag() * u2.imag());
        }
    }
    TensorT<T> out({1});
    out.v[0] = (T)((amp + ph) / total);

    bool ng = needs_grad(a) || needs_grad(b);
    if (!ng) return push(std::move(out), false, nullptr);
    int id = push(std::move(out), true, nullptr);
    nodes_[(size_t)id].back = [this, a, b, id, C, H, W, n, total, A, B]() {
        double g = (double)grad(id).v[0];
        // dL/dX is assembled per bin, then one inverse transform (times H*W,
        // since ifft2c64 normalizes) maps it back to the input plane
        auto accumulate = [&](int dst, const CTensor64& X, const CTensor64& Y) {
            CTensor64 gbin({C, H, W});
            for (size_t k = 0; k < n; ++k) {
                double ma = std::abs(X.v[k]), mb = std::abs(Y.v[k]);
                double gr = 0.0, gi = 0.0;
                if (ma > 0.0) {
                    double x = X.v[k].real(), y = X.v[k].imag();
                    double camp = 2.0 * (ma - mb) / (total * ma);
                    gr += camp * x;
                    gi += camp * y;
                    if (ma >= kActive) {  // the bin is active and phase1 is live
                        std::complex<double> u1(x / ma, y / ma);
                        std::complex<double> u2 = mb >= kActive ? Y.v[k] / mb
                                                                : std::complex<double>(1.0, 0.0);
                        double c = u1.real() * u2.real() + u1.imag() * u2.imag();
                        double s = -2.0 / (total * ma);
                        gr += s * (u2.real() - c * u1.real());
                        gi += s * (u2.imag() - c * u1.imag());
                    }
                }
                gbin.v[k] = g * std::complex<double>(gr, gi);
            }
            CTensor64 back = ifft2c64(gbin);
            TensorT<T>& dx = grad_of(dst);
            double scale = (double)H * W;
            for (size_t i = 0; i < dx.numel(); ++i) dx.v[i] += (T)(back.v[i].real() * scale);
        };
        if (needs_grad(a)) accumulate(a, *A, *B);
        if (needs_grad(b)) accumulate(b, *B, *A);
    };
    return id;
}

template <typename T>
void TapeT<T>::backward(int root) {
    if (root < 0 || (size_t)root >= nodes_.size()) throw contract_error("backward: bad root");
    if (nodes_[(size_t)root].val.numel() != 1) throw contract_error("backward: root must be scalar");
    if (!nodes_[(size_t)root].needs_grad) throw contract_error("backward: root has no grad path");
    grad_of(root).v[0] = (T)1;
    for (int id = root; id >= 0; --id) {
        Node& n = nodes_[(size_t)id];
        if (n.back && n.grad_alloc) n.back();
    }
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace ffabic
