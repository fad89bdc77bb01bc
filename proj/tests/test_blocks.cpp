#include <map>

#include "test_util.hpp"

using namespace wfdiff;
using namespace wfdiff::testing;

namespace {

template <class T>
std::map<std::string, Tensor<T>> by_name(const NamedParams<T>& p) {
    return {p.begin(), p.end()};
}

WTBConfig small_wtb() { return {8, 2, {3, 5}, 2, 4}; }

WFINetConfig tiny_net() { return {}; }

template <class T>
SubbandSet<T> random_subbands(Shape s, Rng& r) {
    return {Tensor<T>::randn(s, r), Tensor<T>::randn(s, r), Tensor<T>::randn(s, r), Tensor<T>::randn(s, r)};
}

// Cross-attention written with explicit loops over pixels and channels.
struct CfcOracle {
    std::vector<double> t_out, f_out, attn;
};

CfcOracle cfc_oracle(const Tensor<double>& t_in, const Tensor<double>& f_in,
                     const std::map<std::string, Tensor<double>>& p) {
    const std::size_t c = f_in.dim(0), n = f_in.dim(1) * f_in.dim(2);
    std::vector<double> tsum(c * n, 0.0);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t i = 0; i < c * n; ++i) tsum[i] += t_in[s * c * n + i];
    auto pointwise = [&](const std::string& name, const std::vector<double>& x) {
        const auto& w = p.at(name + ".weight");
        const auto& b = p.at(name + ".bias");
        std::vector<double> out(c * n);
        for (std::size_t o = 0; o < c; ++o)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = b[o];
                for (std::size_t i = 0; i < c; ++i) acc += w[o * c + i] * x[i * n + j];
                out[o * n + j] = acc;
            }
        return out;
    };
    const std::vector<double> f(f_in.data().begin(), f_in.data().end());
    const auto q = pointwise("cfc.q", tsum), k = pointwise("cfc.k", f);
    const auto vt = pointwise("cfc.vt", tsum), vf = pointwise("cfc.vf", f);
    CfcOracle out;
    out.attn.resize(n * n);
    for (std::size_t a = 0; a < n; ++a) {
        double mx = -1e300;
        for (std::size_t b = 0; b < n; ++b) {
            double dot = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) dot += q[ch * n + a] * k[ch * n + b];
            out.attn[a * n + b] = dot / std::sqrt(double(c));
            mx = std::max(mx, out.attn[a * n + b]);
        }
        double z = 0.0;
        for (std::size_t b = 0; b < n; ++b) z += out.attn[a * n + b] = std::exp(out.attn[a * n + b] - mx);
        for (std::size_t b = 0; b < n; ++b) out.attn[a * n + b] /= z;
    }
    std::vector<double> tt(c * n, 0.0);
    out.f_out.assign(c * n, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                tt[ch * n + a] += out.attn[a * n + b] * vt[ch * n + b];
                out.f_out[ch * n + a] += out.attn[a * n + b] * vf[ch * n + b];
            }
    for (int s = 0; s < 3; ++s) out.t_out.insert(out.t_out.end(), tt.begin(), tt.end());
    return out;
}

}  // namespace

// ---------------------------------------------------------------- WTB

TEST(Wtb, ZeroInputGivesZeroOutput) {
    Rng r(1);
    WideTransformerBlock<float> wtb(small_wtb(), r);
    const auto out = wtb(Tensor<float>::zeros({8, 4, 6}));
    for (auto v : out.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Wtb, PreservesShape) {
    Rng r(2);
    WideTransformerBlock<float> wtb({12, 3, {3}, 2, 4}, r);
    for (const auto& [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 1}, {3, 7}, {8, 8}, {5, 2}}) {
        EXPECT_EQ(wtb(Tensor<float>::randn({12, h, w}, r)).shape(), (Shape{12, h, w}));
    }
}

TEST(Wtb, ConfigAndShapeErrors) {
    Rng r(3);
    EXPECT_THROW(WideTransformerBlock<float>({10, 4, {3}, 2, 4}, r), DimensionError);
    EXPECT_THROW(WideTransformerBlock<float>({8, 2, {4}, 2, 4}, r), DimensionError);
    EXPECT_THROW(WideTransformerBlock<float>({8, 2, {}, 2, 4}, r), DimensionError);
    WideTransformerBlock<float> wtb(small_wtb(), r);
    EXPECT_THROW(wtb(Tensor<float>::zeros({6, 4, 4})), DimensionError);
}

TEST(Wtb, GradientMatchesFiniteDifferences) {
    Rng r(4);
    WideTransformerBlock<double> wtb(small_wtb(), r);
    NamedParams<double> params;
    wtb.collect("wtb", params);
    randomize(params, r, 0.4);
    auto x = Tensor<double>::randn({8, 4, 4}, r);
    const auto w = Tensor<double>::randn({8, 4, 4}, r);
    auto loss = [&] { return sum(mul(wtb(x), w)); };
    const auto rx = grad_check<double>(loss, {x});
    EXPECT_TRUE(rx.passed) << rx.max_rel_error;
    const auto plain = grad_check<double>([&] { return sum(wtb(x)); }, {x});
    EXPECT_TRUE(plain.passed) << plain.max_rel_error;
    std::vector<Tensor<double>> ps;
    for (auto& [n, t] : params) ps.push_back(t);
    GradCheckOptions opt;
    opt.max_elements = 16;
    const auto rp = grad_check<double>(loss, ps, opt);
    EXPECT_TRUE(rp.passed) << rp.max_rel_error;
}

// ---------------------------------------------------------------- SFFB

TEST(Sffb, IdentityFrequencyUnitDoublesSpatialFeatures) {
    Rng r(5);
    SpatialFrequencyFusionBlock<float> sffb({6, {1, 3, 5}}, r);
    sffb.set_frequency_identity();
    const auto x = Tensor<float>::randn({6, 8, 6}, r);
    const auto fs = sffb.spatial(x);
    EXPECT_LT(max_abs_diff(sffb(x), scale(fs, 2.0f)), 1e-4);
    EXPECT_LT(max_abs_diff(sffb.frequency(fs), fs), 1e-4);
}

TEST(Sffb, ZeroInputGivesZeroOutput) {
    Rng r(6);
    SpatialFrequencyFusionBlock<float> sffb({4, {1, 3}}, r);
    const auto result = sffb(Tensor<float>::zeros({4, 4, 4}));
    for (auto v : result.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Sffb, ConfigAndShapeErrors) {
    Rng r(7);
    EXPECT_THROW(SpatialFrequencyFusionBlock<float>({4, {2}}, r), DimensionError);
    EXPECT_THROW(SpatialFrequencyFusionBlock<float>({0, {1}}, r), DimensionError);
    SpatialFrequencyFusionBlock<float> sffb({4, {1}}, r);
    EXPECT_THROW(sffb(Tensor<float>::zeros({3, 4, 4})), DimensionError);
}

TEST(Sffb, GradientMatchesFiniteDifferences) {
    Rng r(8);
    SpatialFrequencyFusionBlock<double> sffb({8, {1, 3, 5}}, r);
    NamedParams<double> params;
    sffb.collect("sffb", params);
    randomize(params, r, 0.4);
    auto x = Tensor<double>::randn({8, 4, 4}, r);
    const auto w = Tensor<double>::randn({8, 4, 4}, r);
    auto loss = [&] { return sum(mul(sffb(x), w)); };
    const auto rx = grad_check<double>(loss, {x});
    EXPECT_TRUE(rx.passed) << rx.max_rel_error;
    std::vector<Tensor<double>> ps;
    for (auto& [n, t] : params) ps.push_back(t);
    GradCheckOptions opt;
    opt.max_elements = 16;
    const auto rp = grad_check<double>(loss, ps, opt);
    EXPECT_TRUE(rp.passed) << rp.max_rel_error;
}

// ---------------------------------------------------------------- CFC

TEST(Cfc, ShapesAndReplicatedSlots) {
    Rng r(9);
    CrossFrequencyConditioner<float> cfc(5, r);
    const auto out = cfc.forward(Tensor<float>::randn({3, 5, 4, 3}, r), Tensor<float>::randn({5, 4, 3}, r));
    EXPECT_EQ(out.t_out.shape(), (Shape{3, 5, 4, 3}));
    EXPECT_EQ(out.f_out.shape(), (Shape{5, 4, 3}));
    const std::size_t plane = 5 * 4 * 3;
    for (std::size_t i = 0; i < plane; ++i) {
        EXPECT_EQ(out.t_out[i], out.t_out[plane + i]);
        EXPECT_EQ(out.t_out[i], out.t_out[2 * plane + i]);
    }
}

TEST(Cfc, MatchesLoopOracle) {
    Rng r(10);
    CrossFrequencyConditioner<double> cfc(4, r);
    NamedParams<double> params;
    cfc.collect("cfc", params);
    randomize(params, r, 0.6);
    const auto t_in = Tensor<double>::randn({3, 4, 3, 5}, r), f_in = Tensor<double>::randn({4, 3, 5}, r);
    const auto out = cfc.forward(t_in, f_in);
    const auto ref = cfc_oracle(t_in, f_in, by_name(params));
    double et = 0, ef = 0;
    for (std::size_t i = 0; i < ref.t_out.size(); ++i) et = std::max(et, std::abs(out.t_out[i] - ref.t_out[i]));
    for (std::size_t i = 0; i < ref.f_out.size(); ++i) ef = std::max(ef, std::abs(out.f_out[i] - ref.f_out[i]));
    EXPECT_LT(et, 1e-5);
    EXPECT_LT(ef, 1e-5);
}

TEST(Cfc, AttentionRowsSumToOne) {
    Rng r(11);
    CrossFrequencyConditioner<float> cfc(8, r);
    NamedParams<float> params;
    cfc.collect("cfc", params);
    randomize(params, r, 2.0f);
    const auto t_sum = Tensor<float>::randn({8, 4, 4}, r, 3.0f), f_in = Tensor<float>::randn({8, 4, 4}, r, 3.0f);
    const auto a = cfc.attention(t_sum, f_in);
    ASSERT_EQ(a.shape(), (Shape{16, 16}));
    for (std::size_t i = 0; i < 16; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 16; ++j) {
            EXPECT_GE(a[i * 16 + j], 0.0f);
            s += a[i * 16 + j];
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Cfc, ShapeErrors) {
    Rng r(12);
    CrossFrequencyConditioner<float> cfc(4, r);
    EXPECT_THROW(cfc.forward(Tensor<float>::zeros({3, 4, 2, 2}), Tensor<float>::zeros({4, 2, 3})), DimensionError);
    EXPECT_THROW(cfc.forward(Tensor<float>::zeros({2, 4, 2, 2}), Tensor<float>::zeros({4, 2, 2})), DimensionError);
    EXPECT_THROW(cfc.forward(Tensor<float>::zeros({3, 4, 2, 2}), Tensor<float>::zeros({3, 2, 2})), DimensionError);
}

TEST(Cfc, GradientMatchesFiniteDifferences) {
    Rng r(13);
    CrossFrequencyConditioner<double> cfc(8, r);
    NamedParams<double> params;
    cfc.collect("cfc", params);
    randomize(params, r, 0.4);
    auto t_in = Tensor<double>::randn({3, 8, 4, 4}, r), f_in = Tensor<double>::randn({8, 4, 4}, r);
    const auto wt = Tensor<double>::randn({3, 8, 4, 4}, r), wf = Tensor<double>::randn({8, 4, 4}, r);
    auto loss = [&] {
        const auto o = cfc.forward(t_in, f_in);
        return add(sum(mul(o.t_out, wt)), sum(mul(o.f_out, wf)));
    };
    const auto rep = grad_check<double>(loss, {t_in, f_in});
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
    std::vector<Tensor<double>> ps;
    for (auto& [n, t] : params) ps.push_back(t);
    GradCheckOptions opt;
    opt.max_elements = 16;
    const auto rp = grad_check<double>(loss, ps, opt);
    EXPECT_TRUE(rp.passed) << rp.max_rel_error;
}

// ---------------------------------------------------------------- WFI2-net

TEST(WfiNet, IdentityAtInitialization) {
    Rng r(14);
    WFINet<float> net(tiny_net(), r);
    const auto in = random_subbands<float>({3, 8, 8}, r);
    const auto out = net(in);
    EXPECT_LT(max_abs_diff(out.ll, in.ll), 1e-6);
    EXPECT_LT(max_abs_diff(out.lh, in.lh), 1e-6);
    EXPECT_LT(max_abs_diff(out.hl, in.hl), 1e-6);
    EXPECT_LT(max_abs_diff(out.hh, in.hh), 1e-6);
}

TEST(WfiNet, ZeroTailsRestoreIdentityAfterPerturbation) {
    Rng r(15);
    WFINet<float> net(tiny_net(), r);
    randomize(net.parameters(), r, 0.1);
    const auto in = random_subbands<float>({3, 4, 6}, r);
    EXPECT_GT(max_abs_diff(net(in).ll, in.ll), 1e-3);
    net.zero_tails();
    const auto out = net(in);
    EXPECT_LT(max_abs_diff(out.ll, in.ll), 1e-6);
    EXPECT_LT(max_abs_diff(out.hh, in.hh), 1e-6);
}

TEST(WfiNet, OutputShapesMatchInput) {
    Rng r(16);
    WFINet<float> net({1, 3, 8, 1, 4, {3}, {1, 3}, 2}, r);
    for (const Shape& s : {Shape{1, 4, 4}, Shape{1, 8, 12}, Shape{1, 4, 16}}) {
        const auto out = net(random_subbands<float>(s, r));
        for (const auto* b : {&out.ll, &out.lh, &out.hl, &out.hh}) EXPECT_EQ(b->shape(), s);
    }
}

TEST(WfiNet, ParameterCountIsReportedAndConsistent) {
    Rng r(17);
    WFINet<float> net(tiny_net(), r);
    const auto params = net.parameters();
    std::size_t n = 0;
    std::set<std::string> names;
    for (const auto& [name, t] : params) {
        n += t.numel();
        EXPECT_TRUE(names.insert(name).second) << "duplicate " << name;
        for (auto v : t.data()) EXPECT_TRUE(std::isfinite(v));
    }
    EXPECT_EQ(net.parameter_count(), n);
    EXPECT_GT(n, 10000u);
    EXPECT_LT(n, 2000000u);
}

TEST(WfiNet, ConfigAndInputErrors) {
    Rng r(18);
    auto bad = tiny_net();
    bad.heads = 5;
    EXPECT_THROW(WFINet<float>(bad, r), ConfigError);
    bad = tiny_net();
    bad.scales = 0;
    EXPECT_THROW(WFINet<float>(bad, r), ConfigError);
    bad = tiny_net();
    bad.dw_kernels = {2};
    EXPECT_THROW(WFINet<float>(bad, r), std::invalid_argument);
    WFINet<float> net(tiny_net(), r);
    EXPECT_THROW(net(random_subbands<float>({3, 5, 4}, r)), DimensionError);
    EXPECT_THROW(net(random_subbands<float>({1, 4, 4}, r)), DimensionError);
    auto mixed = random_subbands<float>({3, 4, 4}, r);
    mixed.hh = Tensor<float>::zeros({3, 4, 6});
    EXPECT_THROW(net(mixed), DimensionError);
}

TEST(WfiNet, DeterministicGivenSeed) {
    Rng a(19), b(19);
    WFINet<float> n1(tiny_net(), a), n2(tiny_net(), b);
    const auto p1 = n1.parameters(), p2 = n2.parameters();
    ASSERT_EQ(p1.size(), p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(max_abs_diff(p1[i].second, p2[i].second), 0.0);
}
