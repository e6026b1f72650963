#pragma once

// Discrete Fourier transforms for spectral views. Power-of-two lengths run
// through an iterative radix-2 kernel; every other length goes through
// Bluestein's chirp-z reduction onto a padded radix-2 transform, so any
// segment length is supported. All arithmetic is double precision.

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "dlite/errors.hpp"

namespace dlite::signal {

using cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 Cooley-Tukey. n must be a power of two.
inline void fft_pow2(std::vector<cplx>& a, bool inverse) {
    const std::size_t n = a.size();
    if (!is_pow2(n)) throw ContractError("fft_pow2: size must be a power of two");
    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? kTwoPi : -kTwoPi) / double(len);
        const cplx wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const cplx u = a[i + j];
                const cplx v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        const double inv = 1.0 / double(n);
        for (auto& x : a) x *= inv;
    }
}

namespace detail {

// Bluestein: express an arbitrary-length DFT as a convolution and evaluate
// the convolution with a padded power-of-two FFT.
inline void fft_bluestein(std::vector<cplx>& a, bool inverse) {
    const std::size_t n = a.size();
    std::size_t m = 1;
    while (m < 2 * n - 1) m <<= 1;

    constexpr double kPi = 3.141592653589793238462643383279;
    // chirp[k] = exp(-i*pi*k^2/n); reduce k^2 mod 2n to keep angles small
    std::vector<cplx> chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::uint64_t k2 = (std::uint64_t(k) * k) % (2 * n);
        const double ang = (inverse ? kPi : -kPi) * double(k2) / double(n);
        chirp[k] = cplx(std::cos(ang), std::sin(ang));
    }

    std::vector<cplx> fa(m, cplx(0.0, 0.0)), fb(m, cplx(0.0, 0.0));
    for (std::size_t k = 0; k < n; ++k) fa[k] = a[k] * chirp[k];
    fb[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) fb[k] = fb[m - k] = std::conj(chirp[k]);

    fft_pow2(fa, false);
    fft_pow2(fb, false);
    for (std::size_t k = 0; k < m; ++k) fa[k] *= fb[k];
    fft_pow2(fa, true);

    for (std::size_t k = 0; k < n; ++k) a[k] = fa[k] * chirp[k];
    if (inverse) {
        const double inv = 1.0 / double(n);
        for (auto& x : a) x *= inv;
    }
}

}  // namespace detail

// In-place DFT of arbitrary length (forward: X_k = sum_n x_n e^{-2pi i kn/N};
// inverse includes the 1/N factor).
inline void fft(std::vector<cplx>& a, bool inverse = false) {
    if (a.empty()) throw ContractError("fft: empty input");
    if (a.size() == 1) return;
    if (is_pow2(a.size()))
        fft_pow2(a, inverse);
    else
        detail::fft_bluestein(a, inverse);
}

// Full complex spectrum of a real signal.
inline std::vector<cplx> fft_real(const std::vector<float>& x) {
    if (x.size() < 2) throw ContractError("fft_real: need at least two samples");
    std::vector<cplx> a(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i])) throw NumericError("fft_real: non-finite input sample");
        a[i] = cplx(double(x[i]), 0.0);
    }
    fft(a, false);
    return a;
}

// One-sided bin count for a real signal of length n: floor(n/2) + 1.
inline std::size_t onesided_bins(std::size_t n) { return n / 2 + 1; }

}  // namespace dlite::signal
