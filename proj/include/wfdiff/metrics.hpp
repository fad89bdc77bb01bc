#pragma once

// Full-reference quality metrics on [C,H,W] images with peak value 1.

#include <array>
#include <cmath>
#include <limits>

#include "wfdiff/tensor.hpp"

namespace wfdiff {

/// 10 log10(1 / MSE). Identical images give +infinity.
template <class T>
double psnr(const Tensor<T>& x, const Tensor<T>& ref) {
    if (x.shape() != ref.shape()) {
        throw DimensionError("psnr: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(ref.shape()));
    }
    double se = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(ref[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(x.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

struct SsimParams {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double peak = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_taps(std::size_t n, double sigma) {
    std::vector<double> taps(n);
    const double center = (static_cast<double>(n) - 1.0) / 2.0;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(i) - center;
        taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        total += taps[i];
    }
    for (auto& t : taps) t /= total;
    return taps;
}

// Separable 'valid' filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                        const std::vector<double>& taps) {
    const std::size_t n = taps.size(), ho = h - n + 1, wo = w - n + 1;
    std::vector<double> rows(h * wo), out(ho * wo);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < wo; ++x) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) acc += taps[k] * plane[y * w + x + k];
            rows[y * wo + x] = acc;
        }
    for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t x = 0; x < wo; ++x) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) acc += taps[k] * rows[(y + k) * wo + x];
            out[y * wo + x] = acc;
        }
    return out;
}

}  // namespace detail

/// Single-scale SSIM with a Gaussian window over valid positions, averaged
/// over the map and then over channels.
template <class T>
double ssim(const Tensor<T>& x, const Tensor<T>& ref, const SsimParams& p = {}) {
    if (x.shape() != ref.shape()) {
        throw DimensionError("ssim: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(ref.shape()));
    }
    if (x.ndim() != 3) throw DimensionError("ssim expects [C,H,W]");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h < p.window || w < p.window) {
        throw DimensionError("ssim: image " + shape_str(x.shape()) + " smaller than the " +
                             std::to_string(p.window) + "x" + std::to_string(p.window) + " window");
    }
    const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
    const double c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
    const auto taps = detail::gaussian_taps(p.window, p.sigma);
    double total = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        std::array<std::vector<double>, 5> planes;
        for (auto& pl : planes) pl.resize(h * w);
        for (std::size_t i = 0; i < h * w; ++i) {
            const double a = x[ch * h * w + i], b = ref[ch * h * w + i];
            planes[0][i] = a;
            planes[1][i] = b;
            planes[2][i] = a * a;
            planes[3][i] = b * b;
            planes[4][i] = a * b;
        }
        std::array<std::vector<double>, 5> f;
        for (std::size_t k = 0; k < 5; ++k) f[k] = detail::filter_valid(planes[k], h, w, taps);
        double acc = 0.0;
        for (std::size_t i = 0; i < f[0].size(); ++i) {
            const double mx = f[0][i], my = f[1][i];
            const double vx = f[2][i] - mx * mx, vy = f[3][i] - my * my, cov = f[4][i] - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += acc / static_cast<double>(f[0].size());
    }
    return total / static_cast<double>(c);
}

}  // namespace wfdiff
