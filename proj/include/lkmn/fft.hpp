#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "lkmn/common.hpp"

namespace lkmn::detail {

// Complex transforms used by the fft2 op and the frequency-domain loss.
// All transforms here are unnormalized; `sign` is -1 for the forward DFT and
// +1 for the adjoint/inverse direction. Arbitrary lengths are handled via
// Bluestein's chirp-z reduction onto a power-of-two FFT, so training-time
// plane sizes need not be powers of two.

using cplx = std::complex<double>;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Iterative radix-2 Cooley-Tukey, in place, n a power of two.
inline void fft_pow2(cplx* a, std::size_t n, int sign) {
    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    const double pi = 3.14159265358979323846;
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * pi / static_cast<double>(len);
        const cplx wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cplx w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                cplx u = a[i + k];
                cplx v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// Bluestein chirp-z: DFT of arbitrary length via one linear convolution.
inline void fft_bluestein(std::vector<cplx>& a, int sign) {
    const std::size_t n = a.size();
    const double pi = 3.14159265358979323846;
    const std::size_t m = next_pow2(2 * n - 1);

    // chirp w_k = exp(sign * i * pi * k^2 / n); k^2 taken mod 2n to keep the
    // angle argument small
    std::vector<cplx> w(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::uint64_t k2 = (static_cast<std::uint64_t>(k) * k) % (2 * n);
        const double ang = sign * pi * static_cast<double>(k2) / static_cast<double>(n);
        w[k] = cplx(std::cos(ang), std::sin(ang));
    }

    std::vector<cplx> u(m, cplx(0, 0)), v(m, cplx(0, 0));
    for (std::size_t k = 0; k < n; ++k) u[k] = a[k] * w[k];
    v[0] = std::conj(w[0]);
    for (std::size_t k = 1; k < n; ++k) {
        v[k] = std::conj(w[k]);
        v[m - k] = std::conj(w[k]);
    }

    fft_pow2(u.data(), m, -1);
    fft_pow2(v.data(), m, -1);
    for (std::size_t k = 0; k < m; ++k) u[k] *= v[k];
    fft_pow2(u.data(), m, +1);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n; ++k) a[k] = u[k] * inv_m * w[k];
}

inline void fft_any(std::vector<cplx>& a, int sign) {
    if (a.size() <= 1) return;
    if (is_pow2(a.size())) {
        fft_pow2(a.data(), a.size(), sign);
    } else {
        fft_bluestein(a, sign);
    }
}

// Unnormalized 2-D transform of one h*w plane (row-major), rows first then
// columns.
inline void dft2(std::vector<cplx>& plane, std::int64_t h, std::int64_t w, int sign) {
    std::vector<cplx> line;
    line.resize(static_cast<std::size_t>(w));
    for (std::int64_t y = 0; y < h; ++y) {
        cplx* row = plane.data() + y * w;
        line.assign(row, row + w);
        fft_any(line, sign);
        std::copy(line.begin(), line.end(), row);
    }
    line.resize(static_cast<std::size_t>(h));
    for (std::int64_t x = 0; x < w; ++x) {
        for (std::int64_t y = 0; y < h; ++y) line[static_cast<std::size_t>(y)] = plane[y * w + x];
        fft_any(line, sign);
        for (std::int64_t y = 0; y < h; ++y) plane[y * w + x] = line[static_cast<std::size_t>(y)];
    }
}

} // namespace lkmn::detail
