#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"

namespace ffabic {

inline int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw contract_error("tensor dimension must be positive");
        n *= d;
    }
    return n;
}

// Dense row-major N-d array. The scalar type doubles as the dtype:
// float/double for real tensors, std::complex<> for spectra.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> v;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)), v(numel_of(shape), T(0)) {}
    TensorT(std::vector<int> s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
        if ((int64_t)v.size() != numel_of(shape)) throw contract_error("tensor data does not match shape");
    }

    int64_t numel() const { return (int64_t)v.size(); }
    int dim(int i) const { return shape[(size_t)i]; }
    int ndim() const { return (int)shape.size(); }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& operator[](int64_t i) { return v[(size_t)i]; }
    const T& operator[](int64_t i) const { return v[(size_t)i]; }

    static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }
    static TensorT full(std::vector<int> s, T value) {
        TensorT t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), value);
        return t;
    }

    TensorT reshaped(std::vector<int> s) const {
        if (numel_of(s) != numel()) throw contract_error("reshape changes element count");
        TensorT t;
        t.shape = std::move(s);
        t.v = v;
        return t;
    }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;
using CTensor = TensorT<std::complex<float>>;
using CTensor64 = TensorT<std::complex<double>>;

template <typename T>
bool same_shape(const TensorT<T>& a, const TensorT<T>& b) {
    return a.shape == b.shape;
}

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <typename T>
bool all_finite(const TensorT<T>& t) {
    for (const T& x : t.v)
        if (!std::isfinite((double)x)) return false;
    return true;
}

template <typename T>
bool all_finite(const TensorT<std::complex<T>>& t) {
    for (const auto& x : t.v)
        if (!std::isfinite((double)x.real()) || !std::isfinite((double)x.imag())) return false;
    return true;
}

template <typename T>
void check_finite(const TensorT<T>& t, const char* where) {
    if (!all_finite(t)) throw state_error(std::string("non-finite values in ") + where);
}

template <typename Dst, typename Src>
TensorT<Dst> cast_tensor(const TensorT<Src>& t) {
    TensorT<Dst> out(t.shape);
    for (int64_t i = 0; i < t.numel(); ++i) out.v[(size_t)i] = (Dst)t.v[(size_t)i];
    return out;
}

}  // namespace ffabic
