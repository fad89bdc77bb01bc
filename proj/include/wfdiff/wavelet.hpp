#pragma once

// Single-level orthonormal 2D Haar transform.
//
// For each 2x2 block [[a, b], [c, d]]:
//   ll = (a + b + c + d) / 2    hl = (a - b + c - d) / 2
//   lh = (a + b - c - d) / 2    hh = (a - b - c + d) / 2
// The 4x4 block matrix is symmetric and orthogonal, so it is its own inverse.

#include <array>

#include "wfdiff/ops.hpp"

namespace wfdiff {

template <class T>
struct SubbandSet {
    Tensor<T> ll, lh, hl, hh;

    const Shape& shape() const { return ll.shape(); }
};

namespace detail {

// Rows: ll, lh, hl, hh. Columns: a, b, c, d.
inline constexpr std::array<std::array<int, 4>, 4> kHaarSigns{{
    {{+1, +1, +1, +1}},
    {{+1, +1, -1, -1}},
    {{+1, -1, +1, -1}},
    {{+1, -1, -1, +1}},
}};

}  // namespace detail

template <class T>
SubbandSet<T> dwt2(const Tensor<T>& img) {
    if (img.ndim() != 3) throw DimensionError("dwt2 expects [C,H,W], got " + shape_str(img.shape()));
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (h % 2 || w % 2) {
        throw DimensionError("dwt2 needs even extents, got " + shape_str(img.shape()) + " (pad first)");
    }
    const std::size_t h2 = h / 2, w2 = w / 2;
    const Shape half{c, h2, w2};
    std::array<std::vector<T>, 4> bands;
    for (auto& b : bands) b.resize(c * h2 * w2);
    auto block = [&](std::size_t ch, std::size_t y, std::size_t x) {
        const std::size_t base = (ch * h + 2 * y) * w + 2 * x;
        return std::array<std::size_t, 4>{base, base + 1, base + w, base + w + 1};
    };
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h2; ++y)
            for (std::size_t x = 0; x < w2; ++x) {
                const auto idx = block(ch, y, x);
                for (std::size_t k = 0; k < 4; ++k) {
                    T acc{0};
                    for (std::size_t p = 0; p < 4; ++p) acc += static_cast<T>(detail::kHaarSigns[k][p]) * img[idx[p]];
                    bands[k][(ch * h2 + y) * w2 + x] = acc * T{0.5};
                }
            }
    std::array<Tensor<T>, 4> out;
    for (std::size_t k = 0; k < 4; ++k) {
        out[k] = Tensor<T>::make_result(half, std::move(bands[k]), {img}, [img, k, c, h2, w2, w](detail::Node<T>& self) {
            if (!img.node()->requires_grad) return;
            auto& g = img.node()->ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = 0; y < h2; ++y)
                    for (std::size_t x = 0; x < w2; ++x) {
                        const T gv = self.grad[(ch * h2 + y) * w2 + x] * T{0.5};
                        const std::size_t base = (ch * 2 * h2 + 2 * y) * w + 2 * x;
                        const std::array<std::size_t, 4> idx{base, base + 1, base + w, base + w + 1};
                        for (std::size_t p = 0; p < 4; ++p) g[idx[p]] += static_cast<T>(detail::kHaarSigns[k][p]) * gv;
                    }
        });
    }
    return {out[0], out[1], out[2], out[3]};
}

template <class T>
Tensor<T> idwt2(const SubbandSet<T>& s) {
    const Shape& half = s.ll.shape();
    if (half.size() != 3) throw DimensionError("idwt2 expects [C,H/2,W/2] subbands");
    for (const auto* b : {&s.lh, &s.hl, &s.hh}) {
        if (b->shape() != half) {
            throw DimensionError("idwt2: subband shapes differ: " + shape_str(half) + " vs " + shape_str(b->shape()));
        }
    }
    const std::size_t c = half[0], h2 = half[1], w2 = half[2], w = 2 * w2;
    const std::array<Tensor<T>, 4> bands{s.ll, s.lh, s.hl, s.hh};
    std::vector<T> out(4 * c * h2 * w2);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h2; ++y)
            for (std::size_t x = 0; x < w2; ++x) {
                const std::size_t bi = (ch * h2 + y) * w2 + x;
                const std::size_t base = (ch * 2 * h2 + 2 * y) * w + 2 * x;
                const std::array<std::size_t, 4> idx{base, base + 1, base + w, base + w + 1};
                for (std::size_t p = 0; p < 4; ++p) {
                    T acc{0};
                    for (std::size_t k = 0; k < 4; ++k) acc += static_cast<T>(detail::kHaarSigns[k][p]) * bands[k][bi];
                    out[idx[p]] = acc * T{0.5};
                }
            }
    return Tensor<T>::make_result(Shape{c, 2 * h2, w}, std::move(out), {bands[0], bands[1], bands[2], bands[3]},
                                  [bands, c, h2, w2, w](detail::Node<T>& self) {
                                      for (std::size_t k = 0; k < 4; ++k) {
                                          if (!bands[k].node()->requires_grad) continue;
                                          auto& g = bands[k].node()->ensure_grad();
                                          for (std::size_t ch = 0; ch < c; ++ch)
                                              for (std::size_t y = 0; y < h2; ++y)
                                                  for (std::size_t x = 0; x < w2; ++x) {
                                                      const std::size_t base = (ch * 2 * h2 + 2 * y) * w + 2 * x;
                                                      const std::array<std::size_t, 4> idx{base, base + 1, base + w, base + w + 1};
                                                      T acc{0};
                                                      for (std::size_t p = 0; p < 4; ++p)
                                                          acc += static_cast<T>(detail::kHaarSigns[k][p]) * self.grad[idx[p]];
                                                      g[(ch * h2 + y) * w2 + x] += acc * T{0.5};
                                                  }
                                      }
                                  });
}

template <class T>
struct PaddedImage {
    Tensor<T> image;
    std::size_t height = 0;  // extents before padding
    std::size_t width = 0;
};

/// Reflect-pads by one row/column so that both extents are even. A single
/// row or column is replicated instead, since there is nothing to reflect.
template <class T>
PaddedImage<T> pad_even(const Tensor<T>& img) {
    if (img.ndim() != 3) throw DimensionError("pad_even expects [C,H,W]");
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const std::size_t ph = h + h % 2, pw = w + w % 2;
    if (ph == h && pw == w) return {img, h, w};
    auto reflect = [](std::size_t i, std::size_t n) { return i < n ? i : (n >= 2 ? 2 * n - 2 - i : n - 1); };
    std::vector<T> out(c * ph * pw);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < ph; ++y)
            for (std::size_t x = 0; x < pw; ++x)
                out[(ch * ph + y) * pw + x] = img[(ch * h + reflect(y, h)) * w + reflect(x, w)];
    return {Tensor<T>(Shape{c, ph, pw}, std::move(out)), h, w};
}

/// Top-left crop to height x width.
template <class T>
Tensor<T> crop(const Tensor<T>& img, std::size_t height, std::size_t width) {
    if (img.ndim() != 3 || height > img.dim(1) || width > img.dim(2) || height == 0 || width == 0) {
        throw DimensionError("crop target exceeds " + shape_str(img.shape()));
    }
    if (height == img.dim(1) && width == img.dim(2)) return img;
    return slice(slice(img, 1, 0, height), 2, 0, width);
}

template <class T>
Tensor<T> unpad(const PaddedImage<T>& p) {
    return crop(p.image, p.height, p.width);
}

}  // namespace wfdiff
