#pragma once

// Training objectives. All reductions are element means, so magnitudes do
// not depend on resolution.

#include "wfdiff/fourier.hpp"
#include "wfdiff/wavelet.hpp"

namespace wfdiff {

/// Sum over the LH, HL and HH bands of the root-mean-square difference.
template <class T>
Tensor<T> loss_h(const SubbandSet<T>& pred, const SubbandSet<T>& gt) {
    auto band = [](const Tensor<T>& p, const Tensor<T>& g) { return sqrt(mean(square(sub(p, g)))); };
    return add_n<T>({band(pred.lh, gt.lh), band(pred.hl, gt.hl), band(pred.hh, gt.hh)});
}

/// Mean absolute difference between the Fourier amplitudes of two LL bands.
template <class T>
Tensor<T> loss_a(const Tensor<T>& pred_ll, const Tensor<T>& gt_ll) {
    detail::require_same_shape(pred_ll.shape(), gt_ll.shape(), "loss_a");
    auto amplitude = [](const Tensor<T>& x) {
        auto [re, im] = dft2_parts(x);
        return magnitude(re, im);
    };
    return mean(abs(sub(amplitude(pred_ll), amplitude(gt_ll))));
}

enum class NoiseLossNorm { l1, l2 };

/// Noise-prediction loss: mean |eps - eps_pred| (l1) or mean squared error (l2).
template <class T>
Tensor<T> loss_dm(const Tensor<T>& eps_true, const Tensor<T>& eps_pred, NoiseLossNorm norm = NoiseLossNorm::l1) {
    detail::require_same_shape(eps_true.shape(), eps_pred.shape(), "loss_dm");
    const auto diff = sub(eps_true, eps_pred);
    return mean(norm == NoiseLossNorm::l1 ? abs(diff) : square(diff));
}

struct Stage1LossWeights {
    double high_frequency = 1.0;
    double amplitude = 1.0;
};

template <class T>
Tensor<T> stage1_loss(const SubbandSet<T>& pred, const SubbandSet<T>& gt, const Stage1LossWeights& w = {}) {
    return add(scale(loss_h(pred, gt), static_cast<T>(w.high_frequency)),
               scale(loss_a(pred.ll, gt.ll), static_cast<T>(w.amplitude)));
}

}  // namespace wfdiff
