#pragma once

// Parameterized layers, named-parameter collections and the Adam optimizer.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wfdiff/ops.hpp"

namespace wfdiff {

template <class T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <class T>
Tensor<T> make_param(Shape shape, Rng& rng, double bound) {
    auto t = bound == 0.0 ? Tensor<T>::zeros(std::move(shape))
                          : Tensor<T>::uniform(std::move(shape), rng, static_cast<T>(-bound), static_cast<T>(bound));
    t.set_requires_grad(true);
    return t;
}

template <class T>
Tensor<T> make_constant_param(Shape shape, T value) {
    auto t = Tensor<T>::full(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
}

template <class T>
void fill(Tensor<T>& t, T value) {
    std::fill(t.data().begin(), t.data().end(), value);
}

/// Weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero bias.
template <class T>
struct Conv2d {
    Tensor<T> weight;
    Tensor<T> bias;
    std::size_t stride = 1;
    std::size_t pad = 0;

    Conv2d() = default;
    Conv2d(std::size_t c_in, std::size_t c_out, std::size_t kernel, Rng& rng, std::size_t stride_ = 1,
           std::optional<std::size_t> pad_ = std::nullopt)
        : weight(make_param<T>({c_out, c_in, kernel, kernel}, rng, 1.0 / std::sqrt(double(c_in * kernel * kernel)))),
          bias(make_param<T>({c_out}, rng, 0.0)),
          stride(stride_),
          pad(pad_.value_or(kernel / 2)) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, std::optional<Tensor<T>>(bias), stride, pad); }

    /// Applies the layer to a [C] vector, treated as a 1x1 image.
    Tensor<T> on_vector(const Tensor<T>& v) const {
        const auto out = (*this)(reshape(v, {v.numel(), 1, 1}));
        return reshape(out, {out.numel()});
    }

    void collect(const std::string& prefix, NamedParams<T>& out) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }

    void zero() {
        fill(weight, T{0});
        fill(bias, T{0});
    }

    /// Pointwise identity (requires c_in == c_out and a 1x1 kernel).
    void set_identity() {
        const auto& s = weight.shape();
        if (s[0] != s[1] || s[2] != 1 || s[3] != 1) throw DimensionError("set_identity needs a square 1x1 conv");
        zero();
        for (std::size_t c = 0; c < s[0]; ++c) weight[c * s[1] + c] = T{1};
    }
};

template <class T>
struct DepthwiseConv2d {
    Tensor<T> weight;
    Tensor<T> bias;
    std::size_t pad = 0;

    DepthwiseConv2d() = default;
    DepthwiseConv2d(std::size_t channels, std::size_t kernel, Rng& rng)
        : weight(make_param<T>({channels, 1, kernel, kernel}, rng, 1.0 / double(kernel))),
          bias(make_param<T>({channels}, rng, 0.0)),
          pad(kernel / 2) {}

    Tensor<T> operator()(const Tensor<T>& x) const {
        return depthwise_conv2d(x, weight, std::optional<Tensor<T>>(bias), 1, pad);
    }

    void collect(const std::string& prefix, NamedParams<T>& out) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

/// Layer normalization over the channel axis of [C,H,W] (per pixel), with a
/// per-channel affine map initialized to identity.
template <class T>
struct ChannelLayerNorm {
    Tensor<T> gamma;
    Tensor<T> beta;
    T eps = T{1e-5};

    ChannelLayerNorm() = default;
    explicit ChannelLayerNorm(std::size_t channels)
        : gamma(make_constant_param<T>({channels}, T{1})), beta(make_constant_param<T>({channels}, T{0})) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, {0}, gamma, beta, eps); }

    void collect(const std::string& prefix, NamedParams<T>& out) const {
        out.emplace_back(prefix + ".gamma", gamma);
        out.emplace_back(prefix + ".beta", beta);
    }
};

template <class T>
std::size_t count_parameters(const NamedParams<T>& params) {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

/// Copies values (not storage) from `src` into same-named tensors of `dst`.
template <class T>
void load_parameters(NamedParams<T>& dst, const std::map<std::string, Tensor<T>>& src) {
    for (auto& [name, t] : dst) {
        const auto it = src.find(name);
        if (it == src.end()) throw FormatError("missing parameter '" + name + "'");
        if (it->second.shape() != t.shape()) {
            throw DimensionError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                                 ", expected " + shape_str(t.shape()));
        }
        std::copy(it->second.data().begin(), it->second.data().end(), t.data().begin());
    }
}

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

template <class T>
class Adam {
   public:
    Adam(std::vector<Tensor<T>> params, AdamOptions opt = {}) : params_(std::move(params)), opt_(opt) {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    static Adam from_named(const NamedParams<T>& named, AdamOptions opt = {}) {
        std::vector<Tensor<T>> ps;
        for (const auto& [name, t] : named) ps.push_back(t);
        return Adam(std::move(ps), opt);
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    /// Applies one update from the accumulated gradients, then clears them.
    void step() {
        ++t_;
        double scale = 1.0;
        if (opt_.clip_norm > 0.0) {
            double sq = 0.0;
            for (const auto& p : params_)
                if (p.has_grad())
                    for (const auto g : p.grad()) sq += double(g) * double(g);
            const double norm = std::sqrt(sq);
            if (norm > opt_.clip_norm) scale = opt_.clip_norm / norm;
        }
        const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.has_grad()) continue;
            const auto g = p.grad();
            auto d = p.data();
            for (std::size_t j = 0; j < d.size(); ++j) {
                const double gj = double(g[j]) * scale;
                m_[i][j] = opt_.beta1 * m_[i][j] + (1.0 - opt_.beta1) * gj;
                v_[i][j] = opt_.beta2 * v_[i][j] + (1.0 - opt_.beta2) * gj * gj;
                const double mhat = m_[i][j] / bc1, vhat = v_[i][j] / bc2;
                d[j] = static_cast<T>(double(d[j]) - opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps));
            }
        }
        zero_grad();
    }

    std::size_t steps() const { return t_; }
    void set_lr(double lr) { opt_.lr = lr; }

   private:
    std::vector<Tensor<T>> params_;
    AdamOptions opt_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace wfdiff
