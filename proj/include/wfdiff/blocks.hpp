#pragma once

// Stage-1 network: wide transformer blocks on the stacked detail bands,
// spatial-frequency fusion blocks on the LL band, and cross-frequency
// conditioners linking the two U-Net branches.

#include <cmath>
#include <vector>

#include "wfdiff/fourier.hpp"
#include "wfdiff/nn.hpp"
#include "wfdiff/wavelet.hpp"

namespace wfdiff {

// ---------------------------------------------------------------- attention helpers

/// Multi-head attention over the h*w spatial tokens of q, k, v [C,h,w].
template <class T>
Tensor<T> spatial_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads) {
    const std::size_t c = q.dim(0), n = q.dim(1) * q.dim(2);
    if (c % heads != 0) throw DimensionError("attention: channels not divisible by heads");
    const std::size_t d = c / heads;
    const auto qt = transpose(reshape(q, {heads, d, n}));  // [heads, n, d]
    const auto kk = reshape(k, {heads, d, n});
    const auto vt = transpose(reshape(v, {heads, d, n}));
    const auto attn = softmax(scale(matmul(qt, kk), static_cast<T>(1.0 / std::sqrt(double(d)))), 2);
    const auto out = transpose(matmul(attn, vt));  // [heads, d, n]
    return reshape(out, q.shape());
}

// ---------------------------------------------------------------- WTB

struct WTBConfig {
    std::size_t channels = 48;
    std::size_t heads = 4;
    std::vector<std::size_t> dw_kernels{3, 5};
    std::size_t ffn_expansion = 2;
    std::size_t ca_reduction = 4;

    void validate() const {
        if (channels == 0 || heads == 0 || channels % heads != 0) {
            throw DimensionError("WTB: channels " + std::to_string(channels) + " not divisible by heads " +
                                 std::to_string(heads));
        }
        if (dw_kernels.empty()) throw DimensionError("WTB: need at least one depthwise kernel size");
        for (auto k : dw_kernels)
            if (k % 2 == 0) throw DimensionError("WTB: depthwise kernel sizes must be odd");
        if (ffn_expansion == 0 || ca_reduction == 0) throw DimensionError("WTB: expansion/reduction must be positive");
    }
};

/// T^ = SA(Q,K,V) + CA(L) + T, then T' = FFN(Norm(T^)) + T^, where
/// Q,K,V,L are equal channel splits of DepthwiseMultiScale(Pointwise(Norm(T))).
template <class T>
class WideTransformerBlock {
   public:
    WideTransformerBlock() = default;
    WideTransformerBlock(WTBConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const std::size_t c = cfg_.channels;
        norm1_ = ChannelLayerNorm<T>(c);
        proj_ = Conv2d<T>(c, 4 * c, 1, rng);
        for (auto k : cfg_.dw_kernels) dw_.emplace_back(4 * c, k, rng);
        attn_out_ = Conv2d<T>(c, c, 1, rng);
        const std::size_t hidden = std::max<std::size_t>(1, c / cfg_.ca_reduction);
        ca_down_ = Conv2d<T>(c, hidden, 1, rng);
        ca_up_ = Conv2d<T>(hidden, c, 1, rng);
        norm2_ = ChannelLayerNorm<T>(c);
        ffn_in_ = Conv2d<T>(c, cfg_.ffn_expansion * c, 1, rng);
        ffn_out_ = Conv2d<T>(cfg_.ffn_expansion * c, c, 1, rng);
    }

    const WTBConfig& config() const { return cfg_; }

    Tensor<T> forward(const Tensor<T>& t_prev) const {
        const std::size_t c = cfg_.channels;
        if (t_prev.ndim() != 3 || t_prev.dim(0) != c) {
            throw DimensionError("WTB expects [" + std::to_string(c) + ",h,w], got " + shape_str(t_prev.shape()));
        }
        const auto p = proj_(norm1_(t_prev));
        std::vector<Tensor<T>> scales;
        for (const auto& dw : dw_) scales.push_back(dw(p));
        const auto mixed = add_n(scales);
        const auto q = slice(mixed, 0, 0, c);
        const auto k = slice(mixed, 0, c, 2 * c);
        const auto v = slice(mixed, 0, 2 * c, 3 * c);
        const auto local = slice(mixed, 0, 3 * c, 4 * c);

        const auto sa = attn_out_(spatial_attention(q, k, v, cfg_.heads));
        const auto gate = sigmoid(ca_up_.on_vector(gelu(ca_down_.on_vector(channel_mean(local)))));
        const auto ca = mul_channel(local, gate);
        const auto t_hat = add(add(sa, ca), t_prev);
        return add(ffn_out_(gelu(ffn_in_(norm2_(t_hat)))), t_hat);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return forward(x); }

    void collect(const std::string& prefix, NamedParams<T>& out) const {
        norm1_.collect(prefix + ".norm1", out);
        proj_.collect(prefix + ".proj", out);
        for (std::size_t i = 0; i < dw_.size(); ++i) dw_[i].collect(prefix + ".dw" + std::to_string(i), out);
        attn_out_.collect(prefix + ".attn_out", out);
        ca_down_.collect(prefix + ".ca_down", out);
        ca_up_.collect(prefix + ".ca_up", out);
        norm2_.collect(prefix + ".norm2", out);
        ffn_in_.collect(prefix + ".ffn_in", out);
        ffn_out_.collect(prefix + ".ffn_out", out);
    }

   private:
    WTBConfig cfg_;
    ChannelLayerNorm<T> norm1_, norm2_;
    Conv2d<T> proj_, attn_out_, ca_down_, ca_up_, ffn_in_, ffn_out_;
    std::vector<DepthwiseConv2d<T>> dw_;
};

template <class T>
Tensor<T> wtb_forward(const Tensor<T>& t_prev, const WideTransformerBlock<T>& block) {
    return block.forward(t_prev);
}

// ---------------------------------------------------------------- SFFB

struct SFFBConfig {
    std::size_t channels = 16;
    std::vector<std::size_t> spatial_kernels{1, 3, 5};

    void validate() const {
        if (channels == 0) throw DimensionError("SFFB: channels must be positive");
        if (spatial_kernels.empty()) throw DimensionError("SFFB: need at least one spatial kernel");
        for (auto k : spatial_kernels)
            if (k % 2 == 0) throw DimensionError("SFFB: spatial kernel sizes must be odd");
    }
};

/// F_s = sum of parallel multi-scale convolutions; F_f = inverse FFT of
/// (two pointwise layers on the amplitude, two on the phase of F_s); output
/// F_s + F_f.
template <class T>
class SpatialFrequencyFusionBlock {
   public:
    SpatialFrequencyFusionBlock() = default;
    SpatialFrequencyFusionBlock(SFFBConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const std::size_t c = cfg_.channels;
        for (auto k : cfg_.spatial_kernels) sdu_.emplace_back(c, c, k, rng);
        amp1_ = Conv2d<T>(c, c, 1, rng);
        amp2_ = Conv2d<T>(c, c, 1, rng);
        pha1_ = Conv2d<T>(c, c, 1, rng);
        pha2_ = Conv2d<T>(c, c, 1, rng);
    }

    const SFFBConfig& config() const { return cfg_; }

    Tensor<T> spatial(const Tensor<T>& x) const {
        std::vector<Tensor<T>> branches;
        for (const auto& conv : sdu_) branches.push_back(conv(x));
        return add_n(branches);
    }

    Tensor<T> frequency(const Tensor<T>& f_s) const {
        const auto [amp, pha] = amplitude_phase(f_s);
        return polar_inverse(amp2_(amp1_(amp)), pha2_(pha1_(pha)));
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.ndim() != 3 || x.dim(0) != cfg_.channels) {
            throw DimensionError("SFFB expects [" + std::to_string(cfg_.channels) + ",h,w], got " +
                                 shape_str(x.shape()));
        }
        const auto f_s = spatial(x);
        return add(f_s, frequency(f_s));
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return forward(x); }

    /// Makes the frequency unit an exact round trip (F_f == F_s).
    void set_frequency_identity() {
        for (auto* c : {&amp1_, &amp2_, &pha1_, &pha2_}) c->set_identity();
    }

    void collect(const std::string& prefix, NamedParams<T>& out) const {
        for (std::size_t i = 0; i < sdu_.size(); ++i) sdu_[i].collect(prefix + ".sdu" + std::to_string(i), out);
        amp1_.collect(prefix + ".amp1", out);
        amp2_.collect(prefix + ".amp2", out);
        pha1_.collect(prefix + ".pha1", out);
        pha2_.collect(prefix + ".pha2", out);
    }

   private:
    SFFBConfig cfg_;
    std::vector<Conv2d<T>> sdu_;
    Conv2d<T> amp1_, amp2_, pha1_, pha2_;
};

template <class T>
Tensor<T> sffb_forward(const Tensor<T>& x, const SpatialFrequencyFusionBlock<T>& block) {
    return block.forward(x);
}

// ---------------------------------------------------------------- CFC

/// Cross-attention between branches. Queries and the detail values come
/// from the sum of the three detail slots, keys and LL values from the LL
/// features; the detail result is replicated into all three slots.
template <class T>
class CrossFrequencyConditioner {
   public:
    CrossFrequencyConditioner() = default;
    CrossFrequencyConditioner(std::size_t channels, Rng& rng)
        : channels_(channels),
          q_(channels, channels, 1, rng),
          k_(channels, channels, 1, rng),
          vt_(channels, channels, 1, rng),
          vf_(channels, channels, 1, rng) {}

    std::size_t channels() const { return channels_; }

    struct Output {
        Tensor<T> t_out;  // [3,C,h,w]
        Tensor<T> f_out;  // [C,h,w]
    };

    /// Attention weights softmax(Q K^T / sqrt(C)) over spatial tokens, [n, n].
    Tensor<T> attention(const Tensor<T>& t_sum, const Tensor<T>& f_in) const {
        const std::size_t c = channels_, n = f_in.dim(1) * f_in.dim(2);
        const auto q = transpose(reshape(q_(t_sum), {c, n}));  // [n, c]
        const auto k = reshape(k_(f_in), {c, n});             // [c, n]
        return softmax(scale(matmul(q, k), static_cast<T>(1.0 / std::sqrt(double(c)))), 1);
    }

    Output forward(const Tensor<T>& t_in, const Tensor<T>& f_in) const {
        const std::size_t c = channels_;
        if (f_in.ndim() != 3 || f_in.dim(0) != c) {
            throw DimensionError("CFC: f_in must be [" + std::to_string(c) + ",h,w], got " + shape_str(f_in.shape()));
        }
        const Shape expected{3, c, f_in.dim(1), f_in.dim(2)};
        if (t_in.shape() != expected) {
            throw DimensionError("CFC: t_in must be " + shape_str(expected) + ", got " + shape_str(t_in.shape()));
        }
        const std::size_t n = f_in.dim(1) * f_in.dim(2);
        const Shape plane{c, f_in.dim(1), f_in.dim(2)};
        const auto t_sum = add_n<T>({reshape(slice(t_in, 0, 0, 1), plane), reshape(slice(t_in, 0, 1, 2), plane),
                                     reshape(slice(t_in, 0, 2, 3), plane)});
        const auto attn = attention(t_sum, f_in);
        auto apply = [&](const Tensor<T>& v) {  // (A V) with V as [n, c], back to [C,h,w]
            return reshape(transpose(matmul(attn, transpose(reshape(v, {c, n})))), plane);
        };
        const auto t_single = apply(vt_(t_sum));
        const auto f_out = apply(vf_(f_in));
        const auto t_out = reshape(concat<T>({t_single, t_single, t_single}, 0), expected);
        return {t_out, f_out};
    }

    void collect(const std::string& prefix, NamedParams<T>& out) const {
        q_.collect(prefix + ".q", out);
        k_.collect(prefix + ".k", out);
        vt_.collect(prefix + ".vt", out);
        vf_.collect(prefix + ".vf", out);
    }

   private:
    std::size_t channels_ = 0;
    Conv2d<T> q_, k_, vt_, vf_;
};

template <class T>
typename CrossFrequencyConditioner<T>::Output cfc_forward(const Tensor<T>& t_in, const Tensor<T>& f_in,
                                                          const CrossFrequencyConditioner<T>& cfc) {
    return cfc.forward(t_in, f_in);
}

// ---------------------------------------------------------------- WFI2-net

struct WFINetConfig {
    std::size_t image_channels = 3;
    std::size_t scales = 2;
    std::size_t base_channels = 16;
    std::size_t blocks_per_scale = 1;
    std::size_t heads = 4;
    std::vector<std::size_t> dw_kernels{3, 5};
    std::vector<std::size_t> sdu_kernels{1, 3, 5};
    std::size_t ffn_expansion = 2;

    void validate() const {
        if (image_channels == 0 || scales == 0 || base_channels == 0 || blocks_per_scale == 0) {
            throw ConfigError("WFI2-net: channel, scale and block counts must be positive");
        }
        if ((3 * base_channels) % heads != 0) {
            throw ConfigError("WFI2-net: 3 * base_channels must be divisible by heads");
        }
        WTBConfig{3 * base_channels, heads, dw_kernels, ffn_expansion, 4}.validate();
        SFFBConfig{base_channels, sdu_kernels}.validate();
    }

    /// Subband extents must be divisible by this.
    std::size_t spatial_multiple() const { return std::size_t{1} << (scales - 1); }

    bool operator==(const WFINetConfig&) const = default;
};

/// Parallel two-branch encoder-decoder over Haar subbands. The detail branch
/// carries three slots of per-scale width C_s (stored as [3*C_s, h, w]); the
/// LL branch carries [C_s, h, w]. A conditioner exchanges information at every
/// encoder scale and at the bottleneck. Both branch tails add into the input
/// subbands, so zeroed tails give the identity map.
template <class T>
class WFINet {
   public:
    WFINet() = default;
    WFINet(WFINetConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const std::size_t c = cfg_.base_channels, ic = cfg_.image_channels, S = cfg_.scales;
        hf_embed_ = Conv2d<T>(ic, c, 3, rng);
        lf_embed_ = Conv2d<T>(ic, c, 3, rng);
        auto wtb_cfg = [&](std::size_t s) {
            return WTBConfig{3 * width(s), cfg_.heads, cfg_.dw_kernels, cfg_.ffn_expansion, 4};
        };
        auto sffb_cfg = [&](std::size_t s) { return SFFBConfig{width(s), cfg_.sdu_kernels}; };
        hf_enc_.resize(S);
        lf_enc_.resize(S);
        for (std::size_t s = 0; s < S; ++s) {
            for (std::size_t b = 0; b < cfg_.blocks_per_scale; ++b) {
                hf_enc_[s].emplace_back(wtb_cfg(s), rng);
                lf_enc_[s].emplace_back(sffb_cfg(s), rng);
            }
            cfc_.emplace_back(width(s), rng);
        }
        hf_dec_.resize(S - 1);
        lf_dec_.resize(S - 1);
        for (std::size_t s = 0; s + 1 < S; ++s) {
            hf_down_.emplace_back(3 * width(s), 3 * width(s + 1), 2, rng, 2, 0);
            lf_down_.emplace_back(width(s), width(s + 1), 2, rng, 2, 0);
            hf_up_.emplace_back(3 * width(s + 1), 3 * width(s), 3, rng);
            lf_up_.emplace_back(width(s + 1), width(s), 3, rng);
            for (std::size_t b = 0; b < cfg_.blocks_per_scale; ++b) {
                hf_dec_[s].emplace_back(wtb_cfg(s), rng);
                lf_dec_[s].emplace_back(sffb_cfg(s), rng);
            }
        }
        hf_tail_ = Conv2d<T>(c, ic, 3, rng);
        lf_tail_ = Conv2d<T>(c, ic, 3, rng);
        hf_tail_.zero();
        lf_tail_.zero();
    }

    const WFINetConfig& config() const { return cfg_; }

    SubbandSet<T> forward(const SubbandSet<T>& in) const {
        const Shape& sh = in.ll.shape();
        if (sh.size() != 3 || sh[0] != cfg_.image_channels) {
            throw DimensionError("WFI2-net expects subbands [" + std::to_string(cfg_.image_channels) + ",h,w], got " +
                                 shape_str(sh));
        }
        for (const auto* b : {&in.lh, &in.hl, &in.hh})
            if (b->shape() != sh) throw DimensionError("WFI2-net: subband shapes differ");
        const std::size_t m = cfg_.spatial_multiple();
        if (sh[1] % m || sh[2] % m) {
            throw DimensionError("WFI2-net: subband extents must be divisible by " + std::to_string(m));
        }
        const std::size_t S = cfg_.scales;
        auto t = concat<T>({hf_embed_(in.lh), hf_embed_(in.hl), hf_embed_(in.hh)}, 0);
        auto f = lf_embed_(in.ll);
        std::vector<Tensor<T>> t_skip, f_skip;
        for (std::size_t s = 0; s < S; ++s) {
            for (const auto& blk : hf_enc_[s]) t = blk(t);
            for (const auto& blk : lf_enc_[s]) f = blk(f);
            const Shape slots{3, width(s), t.dim(1), t.dim(2)};
            const auto x = cfc_[s].forward(reshape(t, slots), f);
            t = add(t, reshape(x.t_out, t.shape()));
            f = add(f, x.f_out);
            if (s + 1 < S) {
                t_skip.push_back(t);
                f_skip.push_back(f);
                t = hf_down_[s](t);
                f = lf_down_[s](f);
            }
        }
        for (std::size_t s = S - 1; s-- > 0;) {
            t = add(hf_up_[s](upsample_nearest2x(t)), t_skip[s]);
            f = add(lf_up_[s](upsample_nearest2x(f)), f_skip[s]);
            for (const auto& blk : hf_dec_[s]) t = blk(t);
            for (const auto& blk : lf_dec_[s]) f = blk(f);
        }
        const std::size_t c = cfg_.base_channels;
        SubbandSet<T> out;
        out.lh = add(in.lh, hf_tail_(slice(t, 0, 0, c)));
        out.hl = add(in.hl, hf_tail_(slice(t, 0, c, 2 * c)));
        out.hh = add(in.hh, hf_tail_(slice(t, 0, 2 * c, 3 * c)));
        out.ll = add(in.ll, lf_tail_(f));
        return out;
    }

    SubbandSet<T> operator()(const SubbandSet<T>& in) const { return forward(in); }

    NamedParams<T> parameters() const {
        NamedParams<T> out;
        hf_embed_.collect("hf.embed", out);
        lf_embed_.collect("lf.embed", out);
        for (std::size_t s = 0; s < hf_enc_.size(); ++s) {
            const std::string sc = std::to_string(s);
            for (std::size_t b = 0; b < hf_enc_[s].size(); ++b) {
                hf_enc_[s][b].collect("hf.enc" + sc + ".b" + std::to_string(b), out);
                lf_enc_[s][b].collect("lf.enc" + sc + ".b" + std::to_string(b), out);
            }
            cfc_[s].collect("cfc" + sc, out);
        }
        for (std::size_t s = 0; s < hf_dec_.size(); ++s) {
            const std::string sc = std::to_string(s);
            hf_down_[s].collect("hf.down" + sc, out);
            lf_down_[s].collect("lf.down" + sc, out);
            hf_up_[s].collect("hf.up" + sc, out);
            lf_up_[s].collect("lf.up" + sc, out);
            for (std::size_t b = 0; b < hf_dec_[s].size(); ++b) {
                hf_dec_[s][b].collect("hf.dec" + sc + ".b" + std::to_string(b), out);
                lf_dec_[s][b].collect("lf.dec" + sc + ".b" + std::to_string(b), out);
            }
        }
        hf_tail_.collect("hf.tail", out);
        lf_tail_.collect("lf.tail", out);
        return out;
    }

    std::size_t parameter_count() const { return count_parameters(parameters()); }

    void zero_tails() {
        hf_tail_.zero();
        lf_tail_.zero();
    }

   private:
    std::size_t width(std::size_t s) const { return cfg_.base_channels << s; }

    WFINetConfig cfg_;
    Conv2d<T> hf_embed_, lf_embed_, hf_tail_, lf_tail_;
    std::vector<std::vector<WideTransformerBlock<T>>> hf_enc_, hf_dec_;
    std::vector<std::vector<SpatialFrequencyFusionBlock<T>>> lf_enc_, lf_dec_;
    std::vector<CrossFrequencyConditioner<T>> cfc_;
    std::vector<Conv2d<T>> hf_down_, lf_down_, hf_up_, lf_up_;
};

template <class T>
SubbandSet<T> wfi2_forward(const SubbandSet<T>& subbands, const WFINet<T>& net) {
    return net.forward(subbands);
}

}  // namespace wfdiff
