#pragma once

// Residual denoising diffusion over Haar subbands. The diffused quantity is
// x0 = G - I' (ground truth minus the stage-1 estimate) for one band group,
// conditioned on I'. LL uses one chain, the three detail bands share a
// second chain as a stacked [3c, h, w] tensor.

#include <cmath>
#include <memory>
#include <numbers>

#include "wfdiff/losses.hpp"
#include "wfdiff/nn.hpp"
#include "wfdiff/wavelet.hpp"

namespace wfdiff {

/// Arrays are indexed by step t = 0..T; index 0 holds the conventions
/// beta = 0, alpha_bar = 1, sigma2 = 0.
struct DiffusionSchedule {
    std::size_t steps = 0;
    std::vector<double> beta, alpha, alpha_bar, sigma2;

    void check_step(std::size_t t) const {
        if (t < 1 || t > steps) {
            throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
        }
    }
};

/// Linear beta schedule from beta_start (t = 1) to beta_end (t = T).
inline DiffusionSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("schedule needs T >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
    }
    DiffusionSchedule s;
    s.steps = steps;
    s.beta.assign(steps + 1, 0.0);
    s.alpha.assign(steps + 1, 1.0);
    s.alpha_bar.assign(steps + 1, 1.0);
    s.sigma2.assign(steps + 1, 0.0);
    for (std::size_t t = 1; t <= steps; ++t) {
        const double frac = steps == 1 ? 0.0 : double(t - 1) / double(steps - 1);
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
        s.sigma2[t] = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
    }
    return s;
}

/// The 1000-step linear range (1e-4 .. 0.02) rescaled by 1000 / T, with the
/// upper end capped at 0.5 so that very short chains stay valid.
inline DiffusionSchedule default_schedule(std::size_t steps) {
    if (steps < 1) throw ConfigError("schedule needs T >= 1");
    const double k = 1000.0 / double(steps);
    const double end = std::min(0.02 * k, 0.5);
    return make_schedule(steps, std::min(1e-4 * k, end), end);
}

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
template <class T>
Tensor<T> q_sample(const Tensor<T>& x0, std::size_t t, const Tensor<T>& eps, const DiffusionSchedule& s) {
    s.check_step(t);
    detail::require_same_shape(x0.shape(), eps.shape(), "q_sample");
    const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
    std::vector<T> out(x0.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(a * double(x0[i]) + b * double(eps[i]));
    return Tensor<T>(x0.shape(), std::move(out));
}

/// One forward Markov step x_t = sqrt(alpha_t) x_{t-1} + sqrt(beta_t) eps.
template <class T>
Tensor<T> q_step(const Tensor<T>& x_prev, std::size_t t, const Tensor<T>& eps, const DiffusionSchedule& s) {
    s.check_step(t);
    const double a = std::sqrt(s.alpha[t]), b = std::sqrt(s.beta[t]);
    std::vector<T> out(x_prev.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(a * double(x_prev[i]) + b * double(eps[i]));
    return Tensor<T>(x_prev.shape(), std::move(out));
}

/// x0 implied by x_t and a noise estimate.
template <class T>
Tensor<T> predict_x0(const Tensor<T>& x_t, const Tensor<T>& eps, std::size_t t, const DiffusionSchedule& s) {
    s.check_step(t);
    const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
    std::vector<T> out(x_t.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>((double(x_t[i]) - b * double(eps[i])) / a);
    return Tensor<T>(x_t.shape(), std::move(out));
}

// ---------------------------------------------------------------- denoisers

/// Conditional noise predictor eps_theta(x_t, condition, t).
template <class T>
class Denoiser {
   public:
    virtual ~Denoiser() = default;
    virtual Tensor<T> predict_noise(const Tensor<T>& x_t, const Tensor<T>& condition, std::size_t t,
                                    const DiffusionSchedule& s) const = 0;
};

/// Test double that knows x0 and returns the noise consistent with it:
/// (x_t - sqrt(alpha_bar_t) x0) / sqrt(1 - alpha_bar_t).
template <class T>
class OracleDenoiser : public Denoiser<T> {
   public:
    explicit OracleDenoiser(Tensor<T> x0) : x0_(std::move(x0)) {}

    Tensor<T> predict_noise(const Tensor<T>& x_t, const Tensor<T>&, std::size_t t,
                            const DiffusionSchedule& s) const override {
        s.check_step(t);
        detail::require_same_shape(x_t.shape(), x0_.shape(), "oracle denoiser");
        const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
        std::vector<T> out(x_t.numel());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>((double(x_t[i]) - a * double(x0_[i])) / b);
        return Tensor<T>(x_t.shape(), std::move(out));
    }

   private:
    Tensor<T> x0_;
};

/// Test double that always returns the same stored noise tensor.
template <class T>
class FixedNoiseDenoiser : public Denoiser<T> {
   public:
    explicit FixedNoiseDenoiser(Tensor<T> eps) : eps_(std::move(eps)) {}
    Tensor<T> predict_noise(const Tensor<T>&, const Tensor<T>&, std::size_t, const DiffusionSchedule&) const override {
        return eps_;
    }

   private:
    Tensor<T> eps_;
};

struct DenoiserConfig {
    std::size_t data_channels = 3;
    std::size_t base_channels = 16;
    std::size_t scales = 2;
    std::size_t time_dim = 32;

    void validate() const {
        if (data_channels == 0 || base_channels == 0 || scales == 0) throw ConfigError("denoiser: sizes must be positive");
        if (time_dim == 0 || time_dim % 2) throw ConfigError("denoiser: time_dim must be even and positive");
    }
    std::size_t spatial_multiple() const { return std::size_t{1} << (scales - 1); }
    bool operator==(const DenoiserConfig&) const = default;
};

/// Sinusoidal embedding of the step, with t rescaled onto a 1000-step clock.
template <class T>
Tensor<T> timestep_embedding(std::size_t t, std::size_t steps, std::size_t dim) {
    const double pos = double(t) * 1000.0 / double(steps);
    const std::size_t half = dim / 2;
    std::vector<T> e(dim);
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        e[i] = static_cast<T>(std::sin(pos * freq));
        e[i + half] = static_cast<T>(std::cos(pos * freq));
    }
    return Tensor<T>(Shape{dim}, std::move(e));
}

/// Small conditional U-Net: input is concat(x_t, condition) along channels;
/// the time embedding enters every residual block as a per-channel bias.
/// The output convolution starts at zero.
template <class T>
class UNetDenoiser : public Denoiser<T> {
   public:
    UNetDenoiser() = default;
    UNetDenoiser(DenoiserConfig cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t S = cfg_.scales;
        in_ = Conv2d<T>(2 * cfg_.data_channels, width(0), 3, rng);
        time_mlp_ = Conv2d<T>(cfg_.time_dim, cfg_.time_dim, 1, rng);
        for (std::size_t s = 0; s < S; ++s) enc_.emplace_back(width(s), cfg_.time_dim, rng);
        for (std::size_t s = 0; s + 1 < S; ++s) {
            down_.emplace_back(width(s), width(s + 1), 2, rng, 2, 0);
            up_.emplace_back(width(s + 1), width(s), 3, rng);
            dec_.emplace_back(width(s), cfg_.time_dim, rng);
        }
        out_ = Conv2d<T>(width(0), cfg_.data_channels, 3, rng);
        out_.zero();
    }

    const DenoiserConfig& config() const { return cfg_; }

    Tensor<T> forward(const Tensor<T>& x_t, const Tensor<T>& condition, std::size_t t, std::size_t steps) const {
        detail::require_same_shape(x_t.shape(), condition.shape(), "denoiser input");
        if (x_t.ndim() != 3 || x_t.dim(0) != cfg_.data_channels) {
            throw DimensionError("denoiser expects [" + std::to_string(cfg_.data_channels) + ",h,w], got " +
                                 shape_str(x_t.shape()));
        }
        const std::size_t m = cfg_.spatial_multiple();
        if (x_t.dim(1) % m || x_t.dim(2) % m) {
            throw DimensionError("denoiser: extents must be divisible by " + std::to_string(m));
        }
        const auto temb = gelu(time_mlp_.on_vector(timestep_embedding<T>(t, steps, cfg_.time_dim)));
        auto h = in_(concat<T>({x_t, condition}, 0));
        std::vector<Tensor<T>> skips;
        for (std::size_t s = 0; s < cfg_.scales; ++s) {
            h = enc_[s](h, temb);
            if (s + 1 < cfg_.scales) {
                skips.push_back(h);
                h = down_[s](h);
            }
        }
        for (std::size_t s = cfg_.scales - 1; s-- > 0;) {
            h = add(up_[s](upsample_nearest2x(h)), skips[s]);
            h = dec_[s](h, temb);
        }
        return out_(gelu(h));
    }

    Tensor<T> predict_noise(const Tensor<T>& x_t, const Tensor<T>& condition, std::size_t t,
                            const DiffusionSchedule& s) const override {
        s.check_step(t);
        NoGradGuard no_grad;
        return forward(x_t, condition, t, s.steps);
    }

    NamedParams<T> parameters() const {
        NamedParams<T> out;
        in_.collect("in", out);
        time_mlp_.collect("time_mlp", out);
        for (std::size_t s = 0; s < enc_.size(); ++s) enc_[s].collect("enc" + std::to_string(s), out);
        for (std::size_t s = 0; s < down_.size(); ++s) {
            down_[s].collect("down" + std::to_string(s), out);
            up_[s].collect("up" + std::to_string(s), out);
            dec_[s].collect("dec" + std::to_string(s), out);
        }
        out_.collect("out", out);
        return out;
    }

   private:
    struct ResBlock {
        Conv2d<T> conv1, conv2, time_proj;

        ResBlock(std::size_t c, std::size_t time_dim, Rng& rng)
            : conv1(c, c, 3, rng), conv2(c, c, 3, rng), time_proj(time_dim, c, 1, rng) {}

        Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& temb) const {
            auto h = add_channel_bias(conv1(gelu(x)), time_proj.on_vector(temb));
            return add(x, conv2(gelu(h)));
        }

        void collect(const std::string& prefix, NamedParams<T>& out) const {
            conv1.collect(prefix + ".conv1", out);
            conv2.collect(prefix + ".conv2", out);
            time_proj.collect(prefix + ".time", out);
        }
    };

    std::size_t width(std::size_t s) const { return cfg_.base_channels << s; }

    DenoiserConfig cfg_;
    Conv2d<T> in_, time_mlp_, out_;
    std::vector<ResBlock> enc_, dec_;
    std::vector<Conv2d<T>> down_, up_;
};

// ---------------------------------------------------------------- reverse process

template <class T>
struct ReverseStep {
    Tensor<T> x_prev;     // x_{t-1}
    Tensor<T> x0_hat;     // x0 implied by the noise estimate
    Tensor<T> eps_hat;    // the noise estimate itself
};

/// One ancestral step: mean (x_t - beta_t / sqrt(1 - alpha_bar_t) eps) /
/// sqrt(alpha_t), plus sigma_t z (skipped at t = 1, or when add_noise is
/// false).
template <class T>
ReverseStep<T> p_step(const Tensor<T>& x_t, const Tensor<T>& condition, std::size_t t, const Denoiser<T>& denoiser,
                      const DiffusionSchedule& s, Rng& rng, bool add_noise = true) {
    s.check_step(t);
    const auto eps = denoiser.predict_noise(x_t, condition, t, s);
    detail::require_same_shape(eps.shape(), x_t.shape(), "denoiser output");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha[t]);
    const double eps_coef = s.beta[t] / std::sqrt(1.0 - s.alpha_bar[t]);
    const double sigma = std::sqrt(s.sigma2[t]);
    const bool noisy = add_noise && t > 1;
    std::vector<T> out(x_t.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = inv_sqrt_alpha * (double(x_t[i]) - eps_coef * double(eps[i]));
        if (noisy) v += sigma * rng.normal();
        out[i] = static_cast<T>(v);
    }
    return {Tensor<T>(x_t.shape(), std::move(out)), predict_x0(x_t, eps, t, s), eps};
}

/// Ancestral sampling from x_T ~ N(0, I) down to t = 1; returns the x0
/// estimate (a residual).
template <class T>
Tensor<T> sample(const Tensor<T>& condition, const Denoiser<T>& denoiser, const DiffusionSchedule& s, Rng& rng) {
    auto x = Tensor<T>::randn(condition.shape(), rng);
    for (std::size_t t = s.steps; t >= 1; --t) x = p_step(x, condition, t, denoiser, s, rng).x_prev;
    return x;
}

/// Same chain, but starting from a given x_T.
template <class T>
Tensor<T> sample_from(Tensor<T> x_T, const Tensor<T>& condition, const Denoiser<T>& denoiser, const DiffusionSchedule& s,
                      Rng& rng) {
    for (std::size_t t = s.steps; t >= 1; --t) x_T = p_step(x_T, condition, t, denoiser, s, rng).x_prev;
    return x_T;
}

/// A training draw: t uniform in [1, T], eps ~ N(0, I), and x_t for the
/// residual x0.
template <class T>
struct TrainingDraw {
    std::size_t t = 0;
    Tensor<T> eps;
    Tensor<T> x_t;
};

template <class T>
TrainingDraw<T> draw_training_sample(const Tensor<T>& x0, const DiffusionSchedule& s, Rng& rng) {
    const auto t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(s.steps)));
    auto eps = Tensor<T>::randn(x0.shape(), rng);
    auto x_t = q_sample(x0, t, eps, s);
    return {t, std::move(eps), std::move(x_t)};
}

namespace detail {

template <class T>
Tensor<T> residual(const Tensor<T>& initial, const Tensor<T>& target) {
    require_same_shape(initial.shape(), target.shape(), "residual");
    NoGradGuard no_grad;
    return sub(target, initial);
}

}  // namespace detail

/// Noise-prediction loss of any denoiser on one training draw, without an
/// update. Consumes the same random numbers as train_step.
template <class T>
double evaluate_step(const Tensor<T>& initial, const Tensor<T>& target, const Denoiser<T>& denoiser,
                     const DiffusionSchedule& s, Rng& rng, NoiseLossNorm norm = NoiseLossNorm::l1) {
    const auto d = draw_training_sample(detail::residual(initial, target), s, rng);
    NoGradGuard no_grad;
    return loss_dm(d.eps, denoiser.predict_noise(d.x_t, initial, d.t, s), norm).item();
}

/// One optimization step of eps-prediction on the residual target - initial.
/// Returns the loss before the update.
template <class T>
double train_step(const Tensor<T>& initial, const Tensor<T>& target, UNetDenoiser<T>& denoiser, Adam<T>& optimizer,
                  const DiffusionSchedule& s, Rng& rng, NoiseLossNorm norm = NoiseLossNorm::l1) {
    const auto d = draw_training_sample(detail::residual(initial, target), s, rng);
    const auto loss = loss_dm(d.eps, denoiser.forward(d.x_t, initial, d.t, s.steps), norm);
    const double value = loss.item();
    backward(loss);
    optimizer.step();
    return value;
}

/// Stacks the three detail bands along channels: [3c, h, w].
template <class T>
Tensor<T> stack_details(const SubbandSet<T>& s) {
    NoGradGuard no_grad;
    return concat<T>({s.lh, s.hl, s.hh}, 0);
}

template <class T>
struct FrdamResult {
    Tensor<T> image;
    SubbandSet<T> refined;
    Tensor<T> detail_residual;  // [3c, h, w]
    Tensor<T> ll_residual;      // [c, h, w]
};

/// Samples the detail and LL residuals (independent chains on streams forked
/// from `rng`), adds them to the stage-1 bands and inverts the Haar transform.
template <class T>
FrdamResult<T> frdam_adjust_detailed(const SubbandSet<T>& initial, const Denoiser<T>& ldfb, const Denoiser<T>& hdfb,
                                     const DiffusionSchedule& s, const Rng& rng) {
    NoGradGuard no_grad;
    const auto details = stack_details(initial);
    Rng rng_h = rng.fork(1), rng_l = rng.fork(2);
    auto r_h = sample(details, hdfb, s, rng_h);
    auto r_l = sample(initial.ll, ldfb, s, rng_l);
    const std::size_t c = initial.ll.dim(0);
    SubbandSet<T> refined;
    refined.ll = add(initial.ll, r_l);
    refined.lh = add(initial.lh, slice(r_h, 0, 0, c));
    refined.hl = add(initial.hl, slice(r_h, 0, c, 2 * c));
    refined.hh = add(initial.hh, slice(r_h, 0, 2 * c, 3 * c));
    return {idwt2(refined), refined, r_h, r_l};
}

template <class T>
Tensor<T> frdam_adjust(const SubbandSet<T>& initial, const Denoiser<T>& ldfb, const Denoiser<T>& hdfb,
                       const DiffusionSchedule& s, const Rng& rng) {
    return frdam_adjust_detailed(initial, ldfb, hdfb, s, rng).image;
}

}  // namespace wfdiff
