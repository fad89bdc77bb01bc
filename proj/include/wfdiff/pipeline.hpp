#pragma once

// Two-stage training and inference on whole images.
//   stage 1: WFI2-net maps degraded subbands to an initial estimate I'.
//   stage 2: with stage 1 frozen, LDFB / HDFB learn the residuals G - I'.

#include <functional>

#include "wfdiff/checkpoint.hpp"
#include "wfdiff/config.hpp"

namespace wfdiff {

/// Edge-replicating pad of [C,H,W] up to multiples of `m`.
template <class T>
PaddedImage<T> pad_to_multiple(const Tensor<T>& img, std::size_t m) {
    detail::require_chw(img.shape(), "pad_to_multiple");
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const std::size_t H = (h + m - 1) / m * m, W = (w + m - 1) / m * m;
    if (H == h && W == w) return {img, h, w};
    std::vector<T> out(c * H * W);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                out[(ch * H + y) * W + x] = img[(ch * h + std::min(y, h - 1)) * w + std::min(x, w - 1)];
    return {Tensor<T>({c, H, W}, std::move(out)), h, w};
}

using StepLogger = std::function<void(std::size_t step, double loss)>;

struct TrainHistory {
    std::vector<double> losses;

    double mean_of(std::size_t begin, std::size_t end) const {
        end = std::min(end, losses.size());
        if (begin >= end) return 0.0;
        double s = 0.0;
        for (std::size_t i = begin; i < end; ++i) s += losses[i];
        return s / double(end - begin);
    }
    /// Mean of the first `window` losses.
    double head_mean(std::size_t window) const { return mean_of(0, window); }
    /// Mean of the last `window` losses.
    double tail_mean(std::size_t window) const {
        return mean_of(losses.size() - std::min(window, losses.size()), losses.size());
    }
};

/// Stage-1 optimization on one degraded/clean pair. Returns the loss before
/// every update, followed by the loss after the final update.
template <class T>
TrainHistory train_stage1(WFINet<T>& net, const Tensor<T>& degraded, const Tensor<T>& clean, const TrainConfig& cfg,
                          const Stage1LossWeights& weights = {}, const StepLogger& log = {}) {
    detail::require_same_shape(degraded.shape(), clean.shape(), "train_stage1");
    const std::size_t m = 2 * net.config().spatial_multiple();
    if (degraded.dim(1) % m || degraded.dim(2) % m) {
        throw DimensionError("training images must have extents divisible by " + std::to_string(m));
    }
    const auto in = dwt2(degraded), gt = dwt2(clean);
    auto opt = Adam<T>::from_named(net.parameters(), {cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm});
    TrainHistory hist;
    for (std::size_t step = 0; step <= cfg.steps; ++step) {
        if (step == cfg.steps) {
            NoGradGuard no_grad;
            hist.losses.push_back(stage1_loss(net(in), gt, weights).item());
            break;
        }
        const auto loss = stage1_loss(net(in), gt, weights);
        hist.losses.push_back(loss.item());
        backward(loss);
        opt.step();
        if (log && cfg.log_every && step % cfg.log_every == 0) log(step, hist.losses.back());
    }
    return hist;
}

/// Stage-1 estimate of a whole image (any extents; padded internally).
template <class T>
Tensor<T> enhance_initial(const WFINet<T>& net, const Tensor<T>& img) {
    NoGradGuard no_grad;
    const auto padded = pad_to_multiple(img, 2 * net.config().spatial_multiple());
    return crop(idwt2(net(dwt2(padded.image))), padded.height, padded.width);
}

template <class T>
struct FrdamNets {
    UNetDenoiser<T> ldfb;
    UNetDenoiser<T> hdfb;

    FrdamNets(const DenoiserConfig& cfg, Rng& rng) : ldfb(band_config(cfg, 1), rng), hdfb(band_config(cfg, 3), rng) {}

    NamedParams<T> parameters() const {
        NamedParams<T> out;
        for (auto& [n, t] : ldfb.parameters()) out.emplace_back("ldfb." + n, t);
        for (auto& [n, t] : hdfb.parameters()) out.emplace_back("hdfb." + n, t);
        return out;
    }

   private:
    static DenoiserConfig band_config(DenoiserConfig cfg, std::size_t groups) {
        cfg.data_channels *= groups;
        return cfg;
    }
};

struct Stage2History {
    TrainHistory ldfb;
    TrainHistory hdfb;
};

/// Trains both denoisers on the residuals of a frozen stage-1 estimate.
template <class T>
Stage2History train_stage2(FrdamNets<T>& nets, const SubbandSet<T>& initial, const SubbandSet<T>& target,
                           const DiffusionSchedule& sched, const TrainConfig& cfg, Rng& rng,
                           NoiseLossNorm norm = NoiseLossNorm::l1, const StepLogger& log = {}) {
    const AdamOptions opt{cfg.lr, 0.9, 0.999, 1e-8, cfg.clip_norm};
    auto opt_l = Adam<T>::from_named(nets.ldfb.parameters(), opt);
    auto opt_h = Adam<T>::from_named(nets.hdfb.parameters(), opt);
    const auto cond_h = stack_details(initial), gt_h = stack_details(target);
    Rng rng_l = rng.fork(2), rng_h = rng.fork(1);
    Stage2History hist;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        hist.ldfb.losses.push_back(train_step(initial.ll, target.ll, nets.ldfb, opt_l, sched, rng_l, norm));
        hist.hdfb.losses.push_back(train_step(cond_h, gt_h, nets.hdfb, opt_h, sched, rng_h, norm));
        if (log && cfg.log_every && step % cfg.log_every == 0) {
            log(step, 0.5 * (hist.ldfb.losses.back() + hist.hdfb.losses.back()));
        }
    }
    return hist;
}

/// Stage 1 followed, optionally, by residual diffusion adjustment.
template <class T>
Tensor<T> enhance(const WFINet<T>& net, const FrdamNets<T>* frdam, const Tensor<T>& img, const DiffusionSchedule& sched,
                  const Rng& rng) {
    NoGradGuard no_grad;
    std::size_t m = 2 * net.config().spatial_multiple();
    if (frdam) m = std::max(m, 2 * frdam->ldfb.config().spatial_multiple());
    const auto padded = pad_to_multiple(img, m);
    const auto initial = net(dwt2(padded.image));
    const auto out = frdam ? frdam_adjust(initial, frdam->ldfb, frdam->hdfb, sched, rng) : idwt2(initial);
    return crop(out, padded.height, padded.width);
}

}  // namespace wfdiff
