#pragma once

// Unitary 2D DFT with the 1/sqrt(HW) factor in both directions, polar
// (amplitude/phase) factorization, and recombination.
//
// Transforms run per channel on [C,H,W] tensors. Internally everything is
// evaluated in complex<double>; power-of-two extents use radix-2, other
// extents a direct DFT with a twiddle table.

#include <bit>
#include <complex>
#include <numbers>
#include <utility>
#include <vector>

#include "wfdiff/ops.hpp"

namespace wfdiff {

using cdouble = std::complex<double>;

namespace detail {

// In-place 1D DFT of n samples spaced `stride` apart. sign = -1 forward,
// +1 inverse. Unnormalized.
inline void dft1d(cdouble* x, std::size_t n, std::size_t stride, int sign, std::vector<cdouble>& scratch) {
    if (n == 1) return;
    scratch.resize(n);
    for (std::size_t i = 0; i < n; ++i) scratch[i] = x[i * stride];
    if (std::has_single_bit(n)) {
        // Bit reversal.
        for (std::size_t i = 1, j = 0; i < n; ++i) {
            std::size_t bit = n >> 1;
            for (; j & bit; bit >>= 1) j ^= bit;
            j ^= bit;
            if (i < j) std::swap(scratch[i], scratch[j]);
        }
        for (std::size_t len = 2; len <= n; len <<= 1) {
            const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
            for (std::size_t i = 0; i < n; i += len) {
                for (std::size_t k = 0; k < len / 2; ++k) {
                    const cdouble wk = std::polar(1.0, ang * static_cast<double>(k));
                    const cdouble u = scratch[i + k];
                    const cdouble v = scratch[i + k + len / 2] * wk;
                    scratch[i + k] = u + v;
                    scratch[i + k + len / 2] = u - v;
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) x[i * stride] = scratch[i];
        return;
    }
    std::vector<cdouble> tw(n);
    for (std::size_t k = 0; k < n; ++k) {
        tw[k] = std::polar(1.0, sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
    }
    for (std::size_t k = 0; k < n; ++k) {
        cdouble acc{0.0, 0.0};
        for (std::size_t j = 0; j < n; ++j) acc += scratch[j] * tw[(j * k) % n];
        x[k * stride] = acc;
    }
}

// Unitary 2D transform of one H x W plane, in place.
inline void dft2_plane(cdouble* plane, std::size_t h, std::size_t w, int sign) {
    std::vector<cdouble> scratch;
    for (std::size_t r = 0; r < h; ++r) dft1d(plane + r * w, w, 1, sign, scratch);
    for (std::size_t c = 0; c < w; ++c) dft1d(plane + c, h, w, sign, scratch);
    const double norm = 1.0 / std::sqrt(static_cast<double>(h * w));
    for (std::size_t i = 0; i < h * w; ++i) plane[i] *= norm;
}

inline bool self_conjugate_bin(std::size_t u, std::size_t v, std::size_t h, std::size_t w) {
    return (2 * u) % h == 0 && (2 * v) % w == 0;
}

inline void require_chw(const Shape& s, const char* op) {
    if (s.size() != 3) throw DimensionError(std::string(op) + " expects [C,H,W], got " + shape_str(s));
}

// Forward unitary transform of a real [C,H,W] tensor. Bins equal to their own
// conjugate mirror get an exact +0 imaginary part, so their phase is 0 or pi.
template <class T>
std::vector<cdouble> forward_real(std::span<const T> x, const Shape& shape) {
    const std::size_t c = shape[0], h = shape[1], w = shape[2];
    std::vector<cdouble> z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = cdouble(static_cast<double>(x[i]), 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        cdouble* plane = z.data() + ch * h * w;
        dft2_plane(plane, h, w, -1);
        for (std::size_t u = 0; u < h; ++u)
            for (std::size_t v = 0; v < w; ++v)
                if (self_conjugate_bin(u, v, h, w)) plane[u * w + v].imag(0.0);
    }
    return z;
}

inline void inverse_inplace(std::vector<cdouble>& z, const Shape& shape) {
    const std::size_t c = shape[0], h = shape[1], w = shape[2];
    for (std::size_t ch = 0; ch < c; ++ch) dft2_plane(z.data() + ch * h * w, h, w, +1);
}

}  // namespace detail

/// Per-channel amplitude (>= 0) and phase (radians, (-pi, pi]) planes.
template <class T>
struct Spectrum {
    Tensor<T> amplitude;
    Tensor<T> phase;

    const Shape& shape() const { return amplitude.shape(); }
};

/// Complex coefficients of the unitary transform of x[C,H,W].
template <class T>
std::vector<cdouble> fft2_complex(const Tensor<T>& x) {
    detail::require_chw(x.shape(), "fft2");
    return detail::forward_real<T>(x.data(), x.shape());
}

template <class T>
Spectrum<T> fft2(const Tensor<T>& x) {
    const auto z = fft2_complex(x);
    std::vector<T> amp(z.size()), ph(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        amp[i] = static_cast<T>(std::abs(z[i]));
        ph[i] = (z[i].real() == 0.0 && z[i].imag() == 0.0) ? T{0} : static_cast<T>(std::arg(z[i]));
    }
    return {Tensor<T>(x.shape(), std::move(amp)), Tensor<T>(x.shape(), std::move(ph))};
}

/// Maximum |Im| tolerated in the inverse of a spectrum before it is rejected.
inline constexpr double kImagResidueTolerance = 1e-4;

/// Unitary inverse. The imaginary residue must stay below
/// kImagResidueTolerance; it is then discarded.
template <class T>
Tensor<T> ifft2(const Spectrum<T>& s) {
    detail::require_chw(s.amplitude.shape(), "ifft2");
    detail::require_same_shape(s.amplitude.shape(), s.phase.shape(), "ifft2");
    std::vector<cdouble> z(s.amplitude.numel());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = std::polar(1.0, static_cast<double>(s.phase[i])) * static_cast<double>(s.amplitude[i]);
    }
    detail::inverse_inplace(z, s.amplitude.shape());
    std::vector<T> out(z.size());
    double residue = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        residue = std::max(residue, std::abs(z[i].imag()));
        out[i] = static_cast<T>(z[i].real());
    }
    if (residue >= kImagResidueTolerance) {
        throw SymmetryError("inverse transform has imaginary residue " + std::to_string(residue) +
                            "; spectrum is not conjugate-symmetric");
    }
    return Tensor<T>(s.amplitude.shape(), std::move(out));
}

/// Inverse of amp_from's amplitude combined with phase_from's phase.
template <class T>
Tensor<T> recombine(const Spectrum<T>& amp_from, const Spectrum<T>& phase_from) {
    detail::require_same_shape(amp_from.shape(), phase_from.shape(), "recombine");
    return ifft2(Spectrum<T>{amp_from.amplitude, phase_from.phase});
}

// ---------------------------------------------------------------- differentiable

/// Real and imaginary parts of the unitary transform, both differentiable.
template <class T>
std::pair<Tensor<T>, Tensor<T>> dft2_parts(const Tensor<T>& x) {
    detail::require_chw(x.shape(), "dft2_parts");
    const auto z = detail::forward_real<T>(x.data(), x.shape());
    std::vector<T> re(z.size()), im(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        re[i] = static_cast<T>(z[i].real());
        im[i] = static_cast<T>(z[i].imag());
    }
    const Shape shape = x.shape();
    // Both parts are symmetric real operators (the DFT matrix is symmetric),
    // so each adjoint is the same part of the forward transform of the grad.
    auto adjoint = [x, shape](detail::Node<T>& self, bool imag_part) {
        if (!x.node()->requires_grad) return;
        const std::size_t h = shape[1], w = shape[2];
        std::vector<T> g(self.grad.begin(), self.grad.end());
        if (imag_part) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t u = (i / w) % h, v = i % w;
                if (detail::self_conjugate_bin(u, v, h, w)) g[i] = T{0};
            }
        }
        auto gz = detail::forward_real<T>(std::span<const T>(g), shape);
        auto& dst = x.node()->ensure_grad();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] += static_cast<T>(imag_part ? gz[i].imag() : gz[i].real());
        }
    };
    auto re_t = Tensor<T>::make_result(shape, std::move(re), {x},
                                       [adjoint](detail::Node<T>& self) { adjoint(self, false); });
    auto im_t = Tensor<T>::make_result(shape, std::move(im), {x},
                                       [adjoint](detail::Node<T>& self) { adjoint(self, true); });
    return {re_t, im_t};
}

/// Real part of the unitary inverse of re + i*im, differentiable. Imaginary
/// residue is discarded without a check (Hermitian projection).
template <class T>
Tensor<T> idft2_real(const Tensor<T>& re, const Tensor<T>& im) {
    detail::require_chw(re.shape(), "idft2_real");
    detail::require_same_shape(re.shape(), im.shape(), "idft2_real");
    std::vector<cdouble> z(re.numel());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = cdouble(re[i], im[i]);
    detail::inverse_inplace(z, re.shape());
    std::vector<T> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = static_cast<T>(z[i].real());
    const Shape shape = re.shape();
    return Tensor<T>::make_result(shape, std::move(out), {re, im}, [re, im, shape](detail::Node<T>& self) {
        std::vector<cdouble> gz(self.grad.size());
        for (std::size_t i = 0; i < gz.size(); ++i) gz[i] = cdouble(self.grad[i], 0.0);
        const std::size_t c = shape[0], h = shape[1], w = shape[2];
        for (std::size_t ch = 0; ch < c; ++ch) detail::dft2_plane(gz.data() + ch * h * w, h, w, -1);
        if (re.node()->requires_grad) {
            auto& d = re.node()->ensure_grad();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += static_cast<T>(gz[i].real());
        }
        if (im.node()->requires_grad) {
            auto& d = im.node()->ensure_grad();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += static_cast<T>(gz[i].imag());
        }
    });
}

/// Differentiable amplitude and phase of x[C,H,W].
template <class T>
std::pair<Tensor<T>, Tensor<T>> amplitude_phase(const Tensor<T>& x) {
    auto [re, im] = dft2_parts(x);
    return {magnitude(re, im), atan2(im, re)};
}

/// Differentiable Re(ifft2(amplitude * exp(i * phase))).
template <class T>
Tensor<T> polar_inverse(const Tensor<T>& amplitude, const Tensor<T>& phase) {
    return idft2_real(mul(amplitude, cos(phase)), mul(amplitude, sin(phase)));
}

}  // namespace wfdiff
