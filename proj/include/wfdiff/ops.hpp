#pragma once

// Differentiable tensor operations used by the network blocks and losses.
// Every op computes its forward value eagerly and, when a gradient is
// required, records a closure computing the adjoint.

#include <cmath>
#include <numbers>
#include <optional>
#include <set>
#include <type_traits>

#include <Eigen/Core>

#include "wfdiff/tensor.hpp"

namespace wfdiff {

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                             shape_str(b));
    }
}

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    Eigen::Map<RowMajor<T>> c(C, M, N);
    c.noalias() += Eigen::Map<const RowMajor<T>>(A, M, K) * Eigen::Map<const RowMajor<T>>(B, K, N);
}

// C[M,N] += A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    Eigen::Map<RowMajor<T>> c(C, M, N);
    c.noalias() += Eigen::Map<const RowMajor<T>>(A, M, K) * Eigen::Map<const RowMajor<T>>(B, N, K).transpose();
}

// C[M,N] += A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    Eigen::Map<RowMajor<T>> c(C, M, N);
    c.noalias() += Eigen::Map<const RowMajor<T>>(A, K, M).transpose() * Eigen::Map<const RowMajor<T>>(B, K, N);
}

template <class T, class Fwd, class Bwd>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Bwd dfdx) {
    std::vector<T> out(x.numel());
    const auto xs = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xs[i]);
    return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [x, dfdx](Node<T>& self) {
        auto& px = *x.node();
        if (!px.requires_grad) return;
        auto& g = px.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(px.data[i], self.data[i]);
    });
}

struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) throw DimensionError("axis out of range for shape " + shape_str(shape));
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node<T>& self) {
        accumulate_grad<T>(*a.node(), self.grad);
        accumulate_grad<T>(*b.node(), self.grad);
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "sub");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node<T>& self) {
        accumulate_grad<T>(*a.node(), self.grad);
        if (b.node()->requires_grad) {
            auto& g = b.node()->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "mul");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node<T>& self) {
        if (a.node()->requires_grad) {
            auto& g = a.node()->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b[i];
        }
        if (b.node()->requires_grad) {
            auto& g = b.node()->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a[i];
        }
    });
}

template <class T>
Tensor<T> add_n(const std::vector<Tensor<T>>& terms) {
    if (terms.empty()) throw DimensionError("add_n of an empty list");
    Tensor<T> acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return acc;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    return detail::unary_op(
        x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    return detail::unary_op(
        x, [c](T v) { return v + c; }, [](T, T) { return T{1}; });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

/// sqrt with a zero subgradient at 0.
template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::sqrt(v); },
        [](T, T y) { return y > T{0} ? T{0.5} / y : T{0}; });
}

/// |x| with subgradient sign(0) = 0. Central differences straddling the kink
/// disagree with this, which gradient checks report as a failure.
template <class T>
Tensor<T> abs(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::abs(v); },
        [](T v, T) { return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0}); });
}

template <class T>
Tensor<T> cos(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

template <class T>
Tensor<T> sin(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return T{1} / (T{1} + std::exp(-v)); }, [](T, T y) { return y * (T{1} - y); });
}

/// Exact (erf-based) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return T{0.5} * v * (T{1} + std::erf(v * T{std::numbers::sqrt2 / 2})); },
        [](T v, T) {
            const T cdf = T{0.5} * (T{1} + std::erf(v * T{std::numbers::sqrt2 / 2}));
            const T pdf = std::exp(T{-0.5} * v * v) * T{0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2};
            return cdf + v * pdf;
        });
}

/// Elementwise sqrt(re^2 + im^2); gradient taken as 0 where the magnitude is 0.
template <class T>
Tensor<T> magnitude(const Tensor<T>& re, const Tensor<T>& im) {
    detail::require_same_shape(re.shape(), im.shape(), "magnitude");
    std::vector<T> out(re.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(re[i], im[i]);
    return Tensor<T>::make_result(re.shape(), std::move(out), {re, im}, [re, im](detail::Node<T>& self) {
        for (int which = 0; which < 2; ++which) {
            const auto& src = which == 0 ? re : im;
            if (!src.node()->requires_grad) continue;
            auto& g = src.node()->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T m = self.data[i];
                if (m > T{0}) g[i] += self.grad[i] * src[i] / m;
            }
        }
    });
}

/// Full-quadrant arctangent atan2(im, re) in (-pi, pi]; 0 where both are 0.
template <class T>
Tensor<T> atan2(const Tensor<T>& im, const Tensor<T>& re) {
    detail::require_same_shape(re.shape(), im.shape(), "atan2");
    std::vector<T> out(re.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (re[i] == T{0} && im[i] == T{0}) ? T{0} : std::atan2(im[i], re[i]);
    }
    return Tensor<T>::make_result(re.shape(), std::move(out), {im, re}, [re, im](detail::Node<T>& self) {
        const bool gi = im.node()->requires_grad, gr = re.node()->requires_grad;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T r2 = re[i] * re[i] + im[i] * im[i];
            if (r2 == T{0}) continue;
            if (gi) im.node()->ensure_grad()[i] += self.grad[i] * re[i] / r2;
            if (gr) re.node()->ensure_grad()[i] -= self.grad[i] * im[i] / r2;
        }
    });
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    double acc = 0.0;
    for (const auto v : x.data()) acc += v;
    return Tensor<T>::make_result(Shape{1}, {static_cast<T>(acc)}, {x}, [x](detail::Node<T>& self) {
        if (!x.node()->requires_grad) return;
        auto& g = x.node()->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

/// Average over every axis but the first: [C, ...] -> [C].
template <class T>
Tensor<T> channel_mean(const Tensor<T>& x) {
    const auto s = detail::split_at(x.shape(), 0);
    const std::size_t per = s.inner;
    std::vector<T> out(s.extent);
    for (std::size_t c = 0; c < s.extent; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < per; ++i) acc += x[c * per + i];
        out[c] = static_cast<T>(acc / static_cast<double>(per));
    }
    return Tensor<T>::make_result(Shape{s.extent}, std::move(out), {x}, [x, per](detail::Node<T>& self) {
        if (!x.node()->requires_grad) return;
        auto& g = x.node()->ensure_grad();
        const T inv = T{1} / static_cast<T>(per);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i / per] * inv;
    });
}

// ---------------------------------------------------------------- broadcasting

/// x[C, ...] + b[C] broadcast over trailing axes.
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
    const auto s = detail::split_at(x.shape(), 0);
    if (b.numel() != s.extent) throw DimensionError("add_channel_bias: bias length != channels");
    const std::size_t per = s.inner;
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + b[i / per];
    return Tensor<T>::make_result(x.shape(), std::move(out), {x, b}, [x, b, per](detail::Node<T>& self) {
        accumulate_grad<T>(*x.node(), self.grad);
        if (b.node()->requires_grad) {
            auto& g = b.node()->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i / per] += self.grad[i];
        }
    });
}

/// x[C, ...] * s[C] broadcast over trailing axes.
template <class T>
Tensor<T> mul_channel(const Tensor<T>& x, const Tensor<T>& s) {
    const auto sp = detail::split_at(x.shape(), 0);
    if (s.numel() != sp.extent) throw DimensionError("mul_channel: scale length != channels");
    const std::size_t per = sp.inner;
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s[i / per];
    return Tensor<T>::make_result(x.shape(), std::move(out), {x, s}, [x, s, per](detail::Node<T>& self) {
        if (x.node()->requires_grad) {
            auto& g = x.node()->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s[i / per];
        }
        if (s.node()->requires_grad) {
            auto& g = s.node()->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i / per] += self.grad[i] * x[i];
        }
    });
}

// ---------------------------------------------------------------- shape

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    return Tensor<T>::make_result(std::move(shape), x.vec(), {x}, [x](detail::Node<T>& self) {
        accumulate_grad<T>(*x.node(), self.grad);
    });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis = 0) {
    if (parts.empty()) throw DimensionError("concat of an empty list");
    Shape shape = parts.front().shape();
    if (axis >= shape.size()) throw DimensionError("concat axis out of range");
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape a = p.shape(), b = shape;
        if (a.size() != b.size()) throw DimensionError("concat rank mismatch");
        a[axis] = b[axis] = 0;
        if (a != b) throw DimensionError("concat: incompatible shapes");
        total += p.dim(axis);
    }
    shape[axis] = total;
    const auto split = detail::split_at(shape, axis);
    std::vector<T> out(shape_numel(shape));
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t block = p.dim(axis) * split.inner;
        for (std::size_t o = 0; o < split.outer; ++o) {
            std::copy_n(p.data().begin() + o * block, block,
                        out.begin() + o * total * split.inner + offset * split.inner);
        }
        offset += p.dim(axis);
    }
    return Tensor<T>::make_result(shape, std::move(out), parts, [parts, split, total](detail::Node<T>& self) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t e = p.numel() / (split.outer * split.inner);
            const std::size_t block = e * split.inner;
            if (p.node()->requires_grad) {
                auto& g = p.node()->ensure_grad();
                for (std::size_t o = 0; o < split.outer; ++o) {
                    const T* src = self.grad.data() + o * total * split.inner + off * split.inner;
                    for (std::size_t i = 0; i < block; ++i) g[o * block + i] += src[i];
                }
            }
            off += e;
        }
    });
}

/// Elements [begin, end) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto split = detail::split_at(x.shape(), axis);
    if (begin >= end || end > split.extent) throw DimensionError("slice range out of bounds");
    Shape shape = x.shape();
    shape[axis] = end - begin;
    const std::size_t block = (end - begin) * split.inner;
    std::vector<T> out(shape_numel(shape));
    for (std::size_t o = 0; o < split.outer; ++o) {
        std::copy_n(x.data().begin() + (o * split.extent + begin) * split.inner, block,
                    out.begin() + o * block);
    }
    return Tensor<T>::make_result(std::move(shape), std::move(out), {x},
                                  [x, split, begin, block](detail::Node<T>& self) {
                                      if (!x.node()->requires_grad) return;
                                      auto& g = x.node()->ensure_grad();
                                      for (std::size_t o = 0; o < split.outer; ++o) {
                                          T* dst = g.data() + (o * split.extent + begin) * split.inner;
                                          for (std::size_t i = 0; i < block; ++i) dst[i] += self.grad[o * block + i];
                                      }
                                  });
}

/// Swaps the last two axes.
template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
    if (x.ndim() < 2) throw DimensionError("transpose needs rank >= 2");
    Shape shape = x.shape();
    const std::size_t r = shape[shape.size() - 2], c = shape.back();
    std::swap(shape[shape.size() - 2], shape.back());
    const std::size_t batch = x.numel() / (r * c);
    std::vector<T> out(x.numel());
    for (std::size_t b = 0; b < batch; ++b) {
        const T* src = x.data().data() + b * r * c;
        T* dst = out.data() + b * r * c;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    }
    return Tensor<T>::make_result(std::move(shape), std::move(out), {x}, [x, r, c, batch](detail::Node<T>& self) {
        if (!x.node()->requires_grad) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t b = 0; b < batch; ++b) {
            const T* src = self.grad.data() + b * r * c;
            T* dst = g.data() + b * r * c;
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += src[j * r + i];
        }
    });
}

// ---------------------------------------------------------------- linear algebra

/// Batched matrix product over identical leading axes: [.., m, k] x [.., k, n].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() < 2 || a.ndim() != b.ndim()) throw DimensionError("matmul: rank mismatch");
    const std::size_t nd = a.ndim();
    const std::size_t m = a.dim(nd - 2), k = a.dim(nd - 1), n = b.dim(nd - 1);
    if (b.dim(nd - 2) != k) {
        throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    for (std::size_t i = 0; i + 2 < nd; ++i) {
        if (a.dim(i) != b.dim(i)) throw DimensionError("matmul: batch extents differ");
    }
    Shape shape = a.shape();
    shape.back() = n;
    const std::size_t batch = a.numel() / (m * k);
    std::vector<T> out(batch * m * n, T{0});
    for (std::size_t bi = 0; bi < batch; ++bi) {
        detail::gemm_nn(m, n, k, a.data().data() + bi * m * k, b.data().data() + bi * k * n,
                        out.data() + bi * m * n);
    }
    return Tensor<T>::make_result(std::move(shape), std::move(out), {a, b},
                                  [a, b, m, k, n, batch](detail::Node<T>& self) {
                                      for (std::size_t bi = 0; bi < batch; ++bi) {
                                          const T* go = self.grad.data() + bi * m * n;
                                          if (a.node()->requires_grad) {
                                              detail::gemm_nt(m, k, n, go, b.data().data() + bi * k * n,
                                                              a.node()->ensure_grad().data() + bi * m * k);
                                          }
                                          if (b.node()->requires_grad) {
                                              detail::gemm_tn(k, n, m, a.data().data() + bi * m * k, go,
                                                              b.node()->ensure_grad().data() + bi * k * n);
                                          }
                                      }
                                  });
}

// ---------------------------------------------------------------- normalization

/// Softmax along `axis`, max-subtracted.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    const auto s = detail::split_at(x.shape(), axis);
    std::vector<T> out(x.numel());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            T mx = x[base];
            for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, x[base + e * s.inner]);
            double denom = 0.0;
            for (std::size_t e = 0; e < s.extent; ++e) {
                const T v = std::exp(x[base + e * s.inner] - mx);
                out[base + e * s.inner] = v;
                denom += v;
            }
            const T inv = static_cast<T>(1.0 / denom);
            for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] *= inv;
        }
    }
    return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [x, s](detail::Node<T>& self) {
        if (!x.node()->requires_grad) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.extent * s.inner + in;
                T dot{0};
                for (std::size_t e = 0; e < s.extent; ++e) {
                    const std::size_t i = base + e * s.inner;
                    dot += self.grad[i] * self.data[i];
                }
                for (std::size_t e = 0; e < s.extent; ++e) {
                    const std::size_t i = base + e * s.inner;
                    g[i] += self.data[i] * (self.grad[i] - dot);
                }
            }
        }
    });
}

/// Standardizes over the axes in `axes` (zero mean, unit variance up to eps),
/// then applies the affine map gamma * xhat + beta. gamma and beta are shaped
/// like the normalized axes (flattened length suffices).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const std::set<std::size_t>& axes, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T{1e-5}) {
    const Shape& shape = x.shape();
    std::size_t group_size = 1;
    for (auto a : axes) {
        if (a >= shape.size()) throw DimensionError("layer_norm axis out of range");
        group_size *= shape[a];
    }
    if (axes.empty()) throw DimensionError("layer_norm needs at least one axis");
    if (gamma.numel() != group_size || beta.numel() != group_size) {
        throw DimensionError("layer_norm: affine parameters must have " + std::to_string(group_size) +
                             " elements");
    }
    const std::size_t n = x.numel();
    const std::size_t groups = n / group_size;
    // Map every flat index to (group, member) by splitting its coordinates.
    std::vector<std::size_t> group_of(n), member_of(n);
    {
        std::vector<std::size_t> coord(shape.size(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t gidx = 0, midx = 0;
            for (std::size_t d = 0; d < shape.size(); ++d) {
                if (axes.count(d)) {
                    midx = midx * shape[d] + coord[d];
                } else {
                    gidx = gidx * shape[d] + coord[d];
                }
            }
            group_of[i] = gidx;
            member_of[i] = midx;
            for (std::size_t d = shape.size(); d-- > 0;) {
                if (++coord[d] < shape[d]) break;
                coord[d] = 0;
            }
        }
    }
    std::vector<double> mu(groups, 0.0), var(groups, 0.0);
    for (std::size_t i = 0; i < n; ++i) mu[group_of[i]] += x[i];
    for (auto& m : mu) m /= static_cast<double>(group_size);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = x[i] - mu[group_of[i]];
        var[group_of[i]] += d * d;
    }
    std::vector<T> inv_std(groups);
    for (std::size_t gi = 0; gi < groups; ++gi) {
        inv_std[gi] = static_cast<T>(1.0 / std::sqrt(var[gi] / static_cast<double>(group_size) + eps));
    }
    std::vector<T> xhat(n), out(n);
    for (std::size_t i = 0; i < n; ++i) {
        xhat[i] = static_cast<T>((x[i] - mu[group_of[i]]) * inv_std[group_of[i]]);
        out[i] = gamma[member_of[i]] * xhat[i] + beta[member_of[i]];
    }
    return Tensor<T>::make_result(
        shape, std::move(out), {x, gamma, beta},
        [x, gamma, beta, group_of = std::move(group_of), member_of = std::move(member_of),
         xhat = std::move(xhat), inv_std = std::move(inv_std), groups, group_size](detail::Node<T>& self) {
            const std::size_t n = self.grad.size();
            if (gamma.node()->requires_grad) {
                auto& g = gamma.node()->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) g[member_of[i]] += self.grad[i] * xhat[i];
            }
            if (beta.node()->requires_grad) {
                auto& g = beta.node()->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) g[member_of[i]] += self.grad[i];
            }
            if (!x.node()->requires_grad) return;
            std::vector<double> mean_d(groups, 0.0), mean_dx(groups, 0.0);
            std::vector<T> dxhat(n);
            for (std::size_t i = 0; i < n; ++i) {
                dxhat[i] = self.grad[i] * gamma[member_of[i]];
                mean_d[group_of[i]] += dxhat[i];
                mean_dx[group_of[i]] += dxhat[i] * xhat[i];
            }
            const double inv_n = 1.0 / static_cast<double>(group_size);
            auto& g = x.node()->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t gi = group_of[i];
                g[i] += static_cast<T>(inv_std[gi] *
                                       (dxhat[i] - mean_d[gi] * inv_n - xhat[i] * mean_dx[gi] * inv_n));
            }
        });
}

// ---------------------------------------------------------------- convolution

struct Conv2dGeometry {
    std::size_t c_in, h, w, c_out, kh, kw, stride, pad, h_out, w_out;
};

inline Conv2dGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t stride,
                                    std::size_t pad, bool depthwise) {
    if (x.size() != 3) throw DimensionError("conv2d input must be [C,H,W], got " + shape_str(x));
    if (w.size() != 4) throw DimensionError("conv2d weight must be [Cout,Cin,kh,kw], got " + shape_str(w));
    if (stride == 0) throw DimensionError("conv2d stride must be positive");
    Conv2dGeometry g{x[0], x[1], x[2], w[0], w[2], w[3], stride, pad, 0, 0};
    if (depthwise) {
        if (w[0] != x[0] || w[1] != 1) {
            throw DimensionError("depthwise weight must be [C,1,kh,kw] with C = " + std::to_string(x[0]));
        }
    } else if (w[1] != x[0]) {
        throw DimensionError("conv2d: weight expects " + std::to_string(w[1]) + " input channels, got " +
                             std::to_string(x[0]));
    }
    const std::size_t ph = g.h + 2 * pad, pw = g.w + 2 * pad;
    if (g.kh > ph || g.kw > pw) throw DimensionError("conv2d kernel larger than padded input");
    if ((ph - g.kh) % stride != 0 || (pw - g.kw) % stride != 0) {
        throw DimensionError("conv2d: non-integral output extent for input " + shape_str(x));
    }
    g.h_out = (ph - g.kh) / stride + 1;
    g.w_out = (pw - g.kw) / stride + 1;
    return g;
}

namespace detail {

template <class T>
void im2col(const Conv2dGeometry& g, const T* x, T* cols) {
    const std::size_t hw = g.h_out * g.w_out;
    for (std::size_t c = 0; c < g.c_in; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                T* row = cols + ((c * g.kh + i) * g.kw + j) * hw;
                for (std::size_t y = 0; y < g.h_out; ++y) {
                    const auto sy = static_cast<std::ptrdiff_t>(y * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t xo = 0; xo < g.w_out; ++xo) {
                        const auto sx = static_cast<std::ptrdiff_t>(xo * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
                        const bool in = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(g.h) &&
                                        sx < static_cast<std::ptrdiff_t>(g.w);
                        row[y * g.w_out + xo] = in ? x[(c * g.h + sy) * g.w + sx] : T{0};
                    }
                }
            }
        }
    }
}

template <class T>
void col2im(const Conv2dGeometry& g, const T* cols, T* dx) {
    const std::size_t hw = g.h_out * g.w_out;
    for (std::size_t c = 0; c < g.c_in; ++c) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                const T* row = cols + ((c * g.kh + i) * g.kw + j) * hw;
                for (std::size_t y = 0; y < g.h_out; ++y) {
                    const auto sy = static_cast<std::ptrdiff_t>(y * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t xo = 0; xo < g.w_out; ++xo) {
                        const auto sx = static_cast<std::ptrdiff_t>(xo * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
                        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        dx[(c * g.h + sy) * g.w + sx] += row[y * g.w_out + xo];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2D cross-correlation with zero padding: x[Cin,H,W], w[Cout,Cin,kh,kw],
/// optional bias[Cout].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w,
                 const std::optional<std::type_identity_t<Tensor<T>>>& bias = std::nullopt, std::size_t stride = 1,
                 std::size_t pad = 0) {
    const auto g = conv_geometry(x.shape(), w.shape(), stride, pad, false);
    if (bias && bias->numel() != g.c_out) throw DimensionError("conv2d: bias length != output channels");
    const std::size_t hw = g.h_out * g.w_out, kdim = g.c_in * g.kh * g.kw;
    const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && pad == 0;
    std::vector<T> cols;
    if (!pointwise) {
        cols.resize(kdim * hw);
        detail::im2col(g, x.data().data(), cols.data());
    }
    std::vector<T> out(g.c_out * hw, T{0});
    if (bias) {
        for (std::size_t c = 0; c < g.c_out; ++c) std::fill_n(out.begin() + c * hw, hw, (*bias)[c]);
    }
    detail::gemm_nn(g.c_out, hw, kdim, w.data().data(), pointwise ? x.data().data() : cols.data(), out.data());
    std::vector<Tensor<T>> parents{x, w};
    if (bias) parents.push_back(*bias);
    return Tensor<T>::make_result(
        Shape{g.c_out, g.h_out, g.w_out}, std::move(out), parents,
        [x, w, bias, g, hw, kdim, pointwise, cols = std::move(cols)](detail::Node<T>& self) {
            const T* go = self.grad.data();
            if (bias && bias->node()->requires_grad) {
                auto& gb = bias->node()->ensure_grad();
                for (std::size_t c = 0; c < g.c_out; ++c)
                    for (std::size_t i = 0; i < hw; ++i) gb[c] += go[c * hw + i];
            }
            if (w.node()->requires_grad) {
                detail::gemm_nt(g.c_out, kdim, hw, go, pointwise ? x.data().data() : cols.data(),
                                w.node()->ensure_grad().data());
            }
            if (x.node()->requires_grad) {
                if (pointwise) {
                    detail::gemm_tn(kdim, hw, g.c_out, w.data().data(), go, x.node()->ensure_grad().data());
                } else {
                    std::vector<T> dcols(kdim * hw, T{0});
                    detail::gemm_tn(kdim, hw, g.c_out, w.data().data(), go, dcols.data());
                    detail::col2im(g, dcols.data(), x.node()->ensure_grad().data());
                }
            }
        });
}

/// Depthwise cross-correlation (groups == channels): w[C,1,kh,kw].
template <class T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w,
                           const std::optional<std::type_identity_t<Tensor<T>>>& bias = std::nullopt,
                           std::size_t stride = 1, std::size_t pad = 0) {
    const auto g = conv_geometry(x.shape(), w.shape(), stride, pad, true);
    if (bias && bias->numel() != g.c_out) throw DimensionError("depthwise_conv2d: bias length != channels");
    std::vector<T> out(g.c_out * g.h_out * g.w_out, T{0});
    // Visits every (channel, tap, output row) with the contiguous run of
    // output columns whose source column lies inside the image.
    auto for_each_run = [g](auto&& fn) {
        const auto pad = static_cast<std::ptrdiff_t>(g.pad);
        for (std::size_t c = 0; c < g.c_in; ++c)
            for (std::size_t i = 0; i < g.kh; ++i)
                for (std::size_t j = 0; j < g.kw; ++j) {
                    // Valid xo satisfy 0 <= xo*stride + j - pad < w.
                    const auto off = static_cast<std::ptrdiff_t>(j) - pad;
                    const auto st = static_cast<std::ptrdiff_t>(g.stride);
                    std::ptrdiff_t x0 = off >= 0 ? 0 : (-off + st - 1) / st;
                    std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(
                        static_cast<std::ptrdiff_t>(g.w_out),
                        (static_cast<std::ptrdiff_t>(g.w) - off + st - 1) / st);
                    if (x0 >= x1) continue;
                    for (std::size_t y = 0; y < g.h_out; ++y) {
                        const auto sy = static_cast<std::ptrdiff_t>(y * g.stride + i) - pad;
                        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                        fn((c * g.h_out + y) * g.w_out, (c * g.h + std::size_t(sy)) * g.w, (c * g.kh + i) * g.kw + j,
                           std::size_t(x0), std::size_t(x1), off);
                    }
                }
    };
    {
        const T* xp = x.data().data();
        const T* wp = w.data().data();
        T* op = out.data();
        const std::size_t st = g.stride;
        for_each_run([&](std::size_t orow, std::size_t xrow, std::size_t wi, std::size_t x0, std::size_t x1,
                         std::ptrdiff_t off) {
            const T wv = wp[wi];
            T* __restrict o = op + orow;
            const T* xr = xp + xrow;
            for (std::size_t xo = x0; xo < x1; ++xo) o[xo] += wv * xr[std::ptrdiff_t(xo * st) + off];
        });
    }
    if (bias) {
        const std::size_t hw = g.h_out * g.w_out;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*bias)[i / hw];
    }
    std::vector<Tensor<T>> parents{x, w};
    if (bias) parents.push_back(*bias);
    return Tensor<T>::make_result(
        Shape{g.c_out, g.h_out, g.w_out}, std::move(out), parents, [x, w, bias, g, for_each_run](detail::Node<T>& self) {
            const bool gx = x.node()->requires_grad, gw = w.node()->requires_grad;
            T* dx = gx ? x.node()->ensure_grad().data() : nullptr;
            T* dw = gw ? w.node()->ensure_grad().data() : nullptr;
            const T* xp = x.data().data();
            const T* wp = w.data().data();
            const T* gp = self.grad.data();
            const std::size_t st = g.stride;
            for_each_run([&](std::size_t orow, std::size_t xrow, std::size_t wi, std::size_t x0, std::size_t x1,
                             std::ptrdiff_t off) {
                const T* go = gp + orow;
                if (gx) {
                    const T wv = wp[wi];
                    T* dxr = dx + xrow;
                    for (std::size_t xo = x0; xo < x1; ++xo) dxr[std::ptrdiff_t(xo * st) + off] += go[xo] * wv;
                }
                if (gw) {
                    const T* xr = xp + xrow;
                    T acc{0};
                    for (std::size_t xo = x0; xo < x1; ++xo) acc += go[xo] * xr[std::ptrdiff_t(xo * st) + off];
                    dw[wi] += acc;
                }
            });
            if (bias && bias->node()->requires_grad) {
                auto& gb = bias->node()->ensure_grad();
                const std::size_t hw = g.h_out * g.w_out;
                for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i / hw] += self.grad[i];
            }
        });
}

/// Nearest-neighbour 2x upsampling of [C,H,W].
template <class T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
    if (x.ndim() != 3) throw DimensionError("upsample expects [C,H,W]");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<T> out(c * 4 * h * w);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
                out[(ch * 2 * h + y) * 2 * w + xx] = x[(ch * h + y / 2) * w + xx / 2];
    return Tensor<T>::make_result(Shape{c, 2 * h, 2 * w}, std::move(out), {x}, [x, c, h, w](detail::Node<T>& self) {
        if (!x.node()->requires_grad) return;
        auto& g = x.node()->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < 2 * h; ++y)
                for (std::size_t xx = 0; xx < 2 * w; ++xx)
                    g[(ch * h + y / 2) * w + xx / 2] += self.grad[(ch * 2 * h + y) * 2 * w + xx];
    });
}

}  // namespace wfdiff
