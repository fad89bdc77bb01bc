#pragma once

// Deterministic synthetic scenes and an underwater-style degradation: a
// wavelength-dependent colour cast with a veiling light, followed by a
// Gaussian blur. Used for the bundled corpus and for training smoke runs.

#include <cmath>
#include <numbers>

#include "wfdiff/rng.hpp"
#include "wfdiff/tensor.hpp"

namespace wfdiff {

struct DegradationParams {
    double transmission[3] = {0.45, 0.8, 0.9};  // per-channel (R, G, B) attenuation
    double veil[3] = {0.05, 0.35, 0.45};        // background light mixed in
    double blur_sigma = 1.2;
};

template <class T>
struct SyntheticPair {
    Tensor<T> degraded;
    Tensor<T> clean;
    DegradationParams params;
};

/// Smooth colour gradient, a few flat shapes and a striped texture patch.
template <class T = float>
Tensor<T> synthetic_scene(std::size_t channels, std::size_t h, std::size_t w, Rng& rng) {
    std::vector<T> img(channels * h * w);
    std::vector<double> c0(channels), c1(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        c0[c] = rng.uniform(0.2, 0.9);
        c1[c] = rng.uniform(0.2, 0.9);
    }
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    auto at = [&](std::size_t c, std::size_t y, std::size_t x) -> T& { return img[(c * h + y) * w + x]; };
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double u = 0.5 + 0.5 * (std::cos(angle) * (double(x) / double(w) - 0.5) +
                                          std::sin(angle) * (double(y) / double(h) - 0.5));
            for (std::size_t c = 0; c < channels; ++c) at(c, y, x) = static_cast<T>(c0[c] + (c1[c] - c0[c]) * u);
        }

    const int shapes = 3 + static_cast<int>(rng.uniform_int(0, 3));
    for (int s = 0; s < shapes; ++s) {
        std::vector<double> col(channels);
        for (auto& v : col) v = rng.uniform(0.0, 1.0);
        const double cy = rng.uniform(0.0, double(h)), cx = rng.uniform(0.0, double(w));
        const double ry = rng.uniform(0.08, 0.3) * double(h), rx = rng.uniform(0.08, 0.3) * double(w);
        const bool disc = rng.uniform() < 0.5;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double dy = (double(y) - cy) / ry, dx = (double(x) - cx) / rx;
                const bool inside = disc ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
                if (inside)
                    for (std::size_t c = 0; c < channels; ++c) at(c, y, x) = static_cast<T>(col[c]);
            }
    }

    const std::size_t py = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(h / 2)));
    const std::size_t px = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(w / 2)));
    const double period = rng.uniform(2.5, 5.0), amp = rng.uniform(0.1, 0.25);
    const double dir = rng.uniform(0.0, std::numbers::pi);
    for (std::size_t y = py; y < std::min(h, py + h / 2); ++y)
        for (std::size_t x = px; x < std::min(w, px + w / 2); ++x) {
            const double phase = 2.0 * std::numbers::pi * (std::cos(dir) * double(x) + std::sin(dir) * double(y)) / period;
            const double d = amp * std::sin(phase);
            for (std::size_t c = 0; c < channels; ++c)
                at(c, y, x) = static_cast<T>(std::clamp(double(at(c, y, x)) + d, 0.0, 1.0));
        }
    return Tensor<T>({channels, h, w}, std::move(img));
}

/// Separable Gaussian blur with edge replication; radius ceil(3 sigma).
template <class T>
Tensor<T> gaussian_blur(const Tensor<T>& img, double sigma) {
    if (sigma <= 0.0) return img.clone();
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const auto r = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> taps(2 * r + 1);
    double total = 0.0;
    for (std::ptrdiff_t i = -r; i <= r; ++i) total += taps[i + r] = std::exp(-double(i * i) / (2.0 * sigma * sigma));
    for (auto& t : taps) t /= total;
    auto clampi = [](std::ptrdiff_t v, std::size_t n) { return std::size_t(std::clamp<std::ptrdiff_t>(v, 0, std::ptrdiff_t(n) - 1)); };
    std::vector<double> tmp(img.numel());
    std::vector<T> out(img.numel());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t base = ch * h * w;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (std::ptrdiff_t k = -r; k <= r; ++k) acc += taps[k + r] * double(img[base + y * w + clampi(std::ptrdiff_t(x) + k, w)]);
                tmp[base + y * w + x] = acc;
            }
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (std::ptrdiff_t k = -r; k <= r; ++k) acc += taps[k + r] * tmp[base + clampi(std::ptrdiff_t(y) + k, h) * w + x];
                out[base + y * w + x] = static_cast<T>(acc);
            }
    }
    return Tensor<T>(img.shape(), std::move(out));
}

/// Cast (I = J t + B (1 - t) per channel) followed by blur.
template <class T>
Tensor<T> degrade(const Tensor<T>& clean, const DegradationParams& p) {
    const std::size_t c = clean.dim(0), hw = clean.dim(1) * clean.dim(2);
    std::vector<T> cast(clean.numel());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t k = c == 3 ? ch : 1;
        for (std::size_t i = 0; i < hw; ++i) {
            const double v = double(clean[ch * hw + i]) * p.transmission[k] + p.veil[k] * (1.0 - p.transmission[k]);
            cast[ch * hw + i] = static_cast<T>(v);
        }
    }
    return gaussian_blur(Tensor<T>(clean.shape(), std::move(cast)), p.blur_sigma);
}

/// Random degradation around the default (reddish channel attenuated most).
inline DegradationParams random_degradation(Rng& rng) {
    DegradationParams p;
    p.transmission[0] = rng.uniform(0.3, 0.6);
    p.transmission[1] = rng.uniform(0.6, 0.9);
    p.transmission[2] = rng.uniform(0.7, 0.95);
    p.veil[0] = rng.uniform(0.0, 0.1);
    p.veil[1] = rng.uniform(0.25, 0.45);
    p.veil[2] = rng.uniform(0.35, 0.6);
    p.blur_sigma = rng.uniform(0.8, 1.6);
    return p;
}

template <class T = float>
SyntheticPair<T> synthetic_pair(std::size_t channels, std::size_t h, std::size_t w, Rng& rng) {
    auto clean = synthetic_scene<T>(channels, h, w, rng);
    const auto params = random_degradation(rng);
    return {degrade(clean, params), std::move(clean), params};
}

}  // namespace wfdiff
