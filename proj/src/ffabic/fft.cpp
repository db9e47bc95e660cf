#include "fft.hpp"

#include <cmath>

namespace ffabic {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(size_t n) { return n && (n & (n - 1)) == 0; }

size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Iterative radix-2 Cooley-Tukey, power-of-two length.
void fft_pow2(std::vector<std::complex<double>>& a, bool inverse) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? kTwoPi : -kTwoPi) / (double)len;
        const std::complex<double> wstep(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> t = a[i + k + len / 2] * w;
                a[i + k] = u + t;
                a[i + k + len / 2] = u - t;
                w *= wstep;
            }
        }
    }
    if (inverse) {
        const double inv = 1.0 / (double)n;
        for (auto& x : a) x *= inv;
    }
}

// Bluestein: express an arbitrary-length DFT as a circular convolution of
// power-of-two length >= 2n-1.
void fft_bluestein(std::vector<std::complex<double>>& a, bool inverse) {
    const size_t n = a.size();
    const size_t m = next_pow2(2 * n - 1);
    std::vector<std::complex<double>> chirp(n);
    for (size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the argument small for large n
        const uint64_t k2 = (uint64_t)k * k % (2 * n);
        const double ang = (inverse ? kTwoPi : -kTwoPi) * 0.5 * (double)k2 / (double)n;
        chirp[k] = std::complex<double>(std::cos(ang), std::sin(ang));
    }
    std::vector<std::complex<double>> fa(m, {0, 0}), fb(m, {0, 0});
    for (size_t k = 0; k < n; ++k) fa[k] = a[k] * chirp[k];
    fb[0] = std::conj(chirp[0]);
    for (size_t k = 1; k < n; ++k) fb[k] = fb[m - k] = std::conj(chirp[k]);
    fft_pow2(fa, false);
    fft_pow2(fb, false);
    for (size_t i = 0; i < m; ++i) fa[i] *= fb[i];
    fft_pow2(fa, true);
    for (size_t k = 0; k < n; ++k) a[k] = fa[k] * chirp[k];
    if (inverse) {
        const double inv = 1.0 / (double)n;
        for (auto& x : a) x *= inv;
    }
}

void transform_axis(CTensor64& t, int h, int w, bool over_rows, bool inverse) {
    const int64_t planes = t.numel() / ((int64_t)h * w);
    std::vector<std::complex<double>> buf;
    for (int64_t p = 0; p < planes; ++p) {
        std::complex<double>* base = t.data() + p * (int64_t)h * w;
        if (over_rows) {
            buf.resize((size_t)w);
            for (int r = 0; r < h; ++r) {
                for (int c = 0; c < w; ++c) buf[(size_t)c] = base[(int64_t)r * w + c];
                fft1d(buf, inverse);
                for (int c = 0; c < w; ++c) base[(int64_t)r * w + c] = buf[(size_t)c];
            }
        } else {
            buf.resize((size_t)h);
            for (int c = 0; c < w; ++c) {
                for (int r = 0; r < h; ++r) buf[(size_t)r] = base[(int64_t)r * w + c];
                fft1d(buf, inverse);
                for (int r = 0; r < h; ++r) base[(int64_t)r * w + c] = buf[(size_t)r];
            }
        }
    }
}

void check_2d(const std::vector<int>& shape) {
    if (shape.size() < 2) throw contract_error("fft2 needs at least 2 dims");
}

}  // namespace

void fft1d(std::vector<std::complex<double>>& a, bool inverse) {
    if (a.size() <= 1) return;
    if (is_pow2(a.size()))
        fft_pow2(a, inverse);
    else
        fft_bluestein(a, inverse);
}

CTensor64 fft2c64(const CTensor64& x) {
    check_2d(x.shape);
    const int h = x.shape[x.shape.size() - 2];
    const int w = x.shape[x.shape.size() - 1];
    CTensor64 out = x;
    transform_axis(out, h, w, true, false);
    transform_axis(out, h, w, false, false);
    return out;
}

CTensor64 ifft2c64(const CTensor64& x) {
    check_2d(x.shape);
    const int h = x.shape[x.shape.size() - 2];
    const int w = x.shape[x.shape.size() - 1];
    CTensor64 out = x;
    transform_axis(out, h, w, true, true);
    transform_axis(out, h, w, false, true);
    return out;
}

template <typename T>
TensorT<std::complex<T>> fft2(const TensorT<T>& x) {
    CTensor64 tmp(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) tmp.v[(size_t)i] = {(double)x.v[(size_t)i], 0.0};
    CTensor64 y = fft2c64(tmp);
    TensorT<std::complex<T>> out(x.shape);
    for (int64_t i = 0; i < y.numel(); ++i)
        out.v[(size_t)i] = std::complex<T>((T)y.v[(size_t)i].real(), (T)y.v[(size_t)i].imag());
    return out;
}

template <typename T>
TensorT<std::complex<T>> ifft2(const TensorT<std::complex<T>>& x) {
    CTensor64 tmp(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i)
        tmp.v[(size_t)i] = {(double)x.v[(size_t)i].real(), (double)x.v[(size_t)i].imag()};
    CTensor64 y = ifft2c64(tmp);
    TensorT<std::complex<T>> out(x.shape);
    for (int64_t i = 0; i < y.numel(); ++i)
        out.v[(size_t)i] = std::complex<T>((T)y.v[(size_t)i].real(), (T)y.v[(size_t)i].imag());
    return out;
}

template <typename T>
TensorT<T> ifft2_real(const TensorT<std::complex<T>>& x) {
    auto y = ifft2(x);
    TensorT<T> out(x.shape);
    for (int64_t i = 0; i < y.numel(); ++i) out.v[(size_t)i] = y.v[(size_t)i].real();
    return out;
}

template <typename T>
SpectrumT<T> spectrum(const TensorT<T>& x) {
    return spectrum_c(fft2(x));
}

template <typename T>
SpectrumT<T> spectrum_c(const TensorT<std::complex<T>>& X) {
    SpectrumT<T> s{TensorT<T>(X.shape), TensorT<T>(X.shape)};
    for (size_t i = 0; i < X.numel(); ++i) {
        const auto& c = X.v[i];
        const T amp = (T)std::hypot((double)c.real(), (double)c.imag());
        s.amplitude.v[(size_t)i] = amp;
        T ph = T(0);
        if (amp != T(0)) {
            ph = (T)std::atan2((double)c.imag(), (double)c.real());
            if (ph <= T(-3.14159265358979323846)) ph = T(3.14159265358979323846);
        }
        s.phase.v[(size_t)i] = ph;
    }
    return s;
}

template TensorT<std::complex<float>> fft2(const TensorT<float>&);
template TensorT<std::complex<double>> fft2(const TensorT<double>&);
template TensorT<std::complex<float>> ifft2(const TensorT<std::complex<float>>&);
template TensorT<std::complex<double>> ifft2(const TensorT<std::complex<double>>&);
template TensorT<float> ifft2_real(const TensorT<std::complex<float>>&);
template TensorT<double> ifft2_real(const TensorT<std::complex<double>>&);
template SpectrumT<float> spectrum(const TensorT<float>&);
template SpectrumT<double> spectrum(const TensorT<double>&);
template SpectrumT<float> spectrum_c(const TensorT<std::complex<float>>&);
template SpectrumT<double> spectrum_c(const TensorT<std::complex<double>>&);

}  // namespace ffabic
