#pragma once

#include "tensor.hpp"

namespace ffabic {

// In-place 1D complex transform, any length (Bluestein for non powers of two).
// Forward kernel is e^{-2*pi*i*kn/N}; inverse applies 1/N.
void fft1d(std::vector<std::complex<double>>& a, bool inverse);

// Unnormalized forward 2D transform over the trailing two dims; leading dims
// are batched. Inverse applies 1/(H*W). All arithmetic runs in double
// regardless of the tensor dtype.
CTensor64 fft2c64(const CTensor64& x);
CTensor64 ifft2c64(const CTensor64& x);

template <typename T>
TensorT<std::complex<T>> fft2(const TensorT<T>& x);
template <typename T>
TensorT<std::complex<T>> ifft2(const TensorT<std::complex<T>>& x);
template <typename T>
TensorT<T> ifft2_real(const TensorT<std::complex<T>>& x);

template <typename T>
struct SpectrumT {
    TensorT<T> amplitude;  // |X|, nonnegative
    TensorT<T> phase;      // arg(X) in (-pi, pi], 0 where amplitude is 0
};
using Spectrum = SpectrumT<float>;
using Spectrum64 = SpectrumT<double>;

template <typename T>
SpectrumT<T> spectrum(const TensorT<T>& x);
template <typename T>
SpectrumT<T> spectrum_c(const TensorT<std::complex<T>>& bins);

}  // namespace ffabic
