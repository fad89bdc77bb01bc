#include "test_util.hpp"

using namespace wfdiff;
using namespace wfdiff::testing;

namespace {

DenoiserConfig tiny_denoiser(std::size_t channels = 1) { return {channels, 4, 2, 8}; }

bool bitwise_equal(const Tensor<float>& a, const Tensor<float>& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

// ---------------------------------------------------------------- schedule

TEST(Schedule, ThousandStepExamples) {
    const auto s = make_schedule(1000, 1e-4, 0.02);
    EXPECT_DOUBLE_EQ(s.alpha_bar[1], 0.9999);
    EXPECT_EQ(s.sigma2[1], 0.0);
    EXPECT_EQ(s.alpha_bar[0], 1.0);
    EXPECT_DOUBLE_EQ(s.beta[1], 1e-4);
    EXPECT_DOUBLE_EQ(s.beta[1000], 0.02);
    EXPECT_DOUBLE_EQ(s.beta[500], 1e-4 + (0.02 - 1e-4) * 499.0 / 999.0);
}

TEST(Schedule, AlphaBarMatchesDirectProduct) {
    for (std::size_t T : {10, 50, 1000}) {
        const auto s = default_schedule(T);
        long double prod = 1.0L;
        for (std::size_t t = 1; t <= T; ++t) {
            prod *= 1.0L - static_cast<long double>(s.beta[t]);
            EXPECT_NEAR(s.alpha_bar[t] / double(prod), 1.0, 1e-7) << "T=" << T << " t=" << t;
        }
    }
}

TEST(Schedule, InvariantsForDeskAndFullLengths) {
    for (std::size_t T : {10, 50, 1000}) {
        const auto s = default_schedule(T);
        ASSERT_EQ(s.beta.size(), T + 1);
        EXPECT_EQ(s.sigma2[1], 0.0);
        for (std::size_t t = 1; t <= T; ++t) {
            EXPECT_GT(s.beta[t], 0.0);
            EXPECT_LT(s.beta[t], 1.0);
            if (t > 1) {
                EXPECT_GT(s.beta[t], s.beta[t - 1]);
                EXPECT_GT(s.sigma2[t], 0.0);
            }
            EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
            EXPECT_GT(s.alpha_bar[t], 0.0);
            EXPECT_NEAR(s.alpha[t], 1.0 - s.beta[t], 1e-15);
            EXPECT_LE(s.sigma2[t], s.beta[t]);
            EXPECT_TRUE(std::isfinite(s.sigma2[t]));
        }
    }
}

TEST(Schedule, DefaultRescalesTheThousandStepRange) {
    const auto s50 = default_schedule(50);
    EXPECT_DOUBLE_EQ(s50.beta[1], 2e-3);
    EXPECT_DOUBLE_EQ(s50.beta[50], 0.4);
    const auto s1000 = default_schedule(1000);
    EXPECT_DOUBLE_EQ(s1000.beta[1000], 0.02);
    const auto s10 = default_schedule(10);
    EXPECT_DOUBLE_EQ(s10.beta[10], 0.5);
    EXPECT_LT(s10.alpha_bar[10], 0.05);
}

TEST(Schedule, InvalidRangesRejected) {
    EXPECT_THROW(make_schedule(0, 1e-4, 0.02), ConfigError);
    EXPECT_THROW(make_schedule(10, 0.0, 0.02), ConfigError);
    EXPECT_THROW(make_schedule(10, 0.03, 0.02), ConfigError);
    EXPECT_THROW(make_schedule(10, 1e-4, 1.0), ConfigError);
    EXPECT_THROW(default_schedule(0), ConfigError);
    EXPECT_NO_THROW(make_schedule(1, 0.1, 0.1));
}

// ---------------------------------------------------------------- forward process

TEST(QSample, Examples) {
    const auto s = default_schedule(50);
    Rng r(1);
    const auto x0 = Tensor<double>::randn({2, 3, 3}, r);
    const auto zero = q_sample(x0, 7, Tensor<double>::zeros({2, 3, 3}), s);
    for (std::size_t i = 0; i < x0.numel(); ++i) EXPECT_NEAR(zero[i], std::sqrt(s.alpha_bar[7]) * x0[i], 1e-12);

    const auto full = default_schedule(1000);
    const auto eps = Tensor<double>::randn({2, 3, 3}, r);
    EXPECT_LT(max_abs_diff(q_sample(x0, 1000, eps, full), eps), 2e-2);
    EXPECT_THROW(q_sample(x0, 0, eps, s), std::out_of_range);
    EXPECT_THROW(q_sample(x0, 51, eps, s), std::out_of_range);
    EXPECT_THROW(q_sample(x0, 1, Tensor<double>::zeros({2, 3}), s), DimensionError);
}

TEST(QSample, MonteCarloMomentsMatchMarginal) {
    const auto s = default_schedule(50);
    const Tensor<double> x0({4}, {1.0, -0.5, 0.25, 2.0});
    const std::size_t draws = 10000;
    Rng r(2);
    for (std::size_t t : {1, 10, 25, 50}) {
        std::vector<double> m(4, 0.0), m2(4, 0.0), im(4, 0.0), im2(4, 0.0);
        for (std::size_t k = 0; k < draws; ++k) {
            const auto x = q_sample(x0, t, Tensor<double>::randn({4}, r), s);
            auto y = x0;
            for (std::size_t u = 1; u <= t; ++u) y = q_step(y, u, Tensor<double>::randn({4}, r), s);
            for (std::size_t i = 0; i < 4; ++i) {
                m[i] += x[i];
                m2[i] += x[i] * x[i];
                im[i] += y[i];
                im2[i] += y[i] * y[i];
            }
        }
        const double var = 1.0 - s.alpha_bar[t], sd_mean = std::sqrt(var / double(draws));
        for (std::size_t i = 0; i < 4; ++i) {
            const double want = std::sqrt(s.alpha_bar[t]) * x0[i];
            for (auto [sum1, sum2] : {std::pair{m[i], m2[i]}, std::pair{im[i], im2[i]}}) {
                const double mean = sum1 / double(draws);
                const double v = sum2 / double(draws) - mean * mean;
                EXPECT_LT(std::abs(mean - want), 4.0 * sd_mean) << "t=" << t;
                EXPECT_NEAR(v / var, 1.0, 0.05) << "t=" << t;
            }
        }
    }
}

// ---------------------------------------------------------------- reverse process

TEST(Oracle, ExactNoiseInvertsAtEveryStep) {
    Rng r(3);
    for (std::size_t T : {10, 50, 1000}) {
        const auto s = default_schedule(T);
        const auto x0 = Tensor<double>::randn({3, 4, 4}, r);
        const OracleDenoiser<double> oracle(x0);
        for (std::size_t t = 1; t <= T; ++t) {
            const auto eps = Tensor<double>::randn({3, 4, 4}, r);
            const auto x_t = q_sample(x0, t, eps, s);
            Rng unused(0);
            const auto step = p_step(x_t, x0, t, FixedNoiseDenoiser<double>(eps), s, unused, false);
            ASSERT_LT(max_abs_diff(step.x0_hat, x0), 1e-5) << "T=" << T << " t=" << t;
            ASSERT_LT(max_abs_diff(predict_x0(x_t, oracle.predict_noise(x_t, x0, t, s), t, s), x0), 1e-5);
        }
    }
}

TEST(Oracle, ReverseChainRecoversX0) {
    const auto s = default_schedule(10);
    Rng r(4);
    const auto x0 = Tensor<float>::randn({3, 8, 8}, r);
    const OracleDenoiser<float> oracle(x0);
    Rng chain(5);
    const auto out = sample(Tensor<float>::zeros({3, 8, 8}), oracle, s, chain);
    EXPECT_LT(max_abs_diff(out, x0), 1e-3);
}

TEST(PStep, LastStepIsDeterministic) {
    const auto s = default_schedule(10);
    Rng r(6);
    const auto x = Tensor<float>::randn({1, 4, 4}, r), eps = Tensor<float>::randn({1, 4, 4}, r);
    const FixedNoiseDenoiser<float> den(eps);
    Rng a(1), b(2);
    EXPECT_TRUE(bitwise_equal(p_step(x, x, 1, den, s, a).x_prev, p_step(x, x, 1, den, s, b).x_prev));
    Rng c(1), d(2);
    EXPECT_FALSE(bitwise_equal(p_step(x, x, 2, den, s, c).x_prev, p_step(x, x, 2, den, s, d).x_prev));
}

TEST(PStep, MeanMatchesFormula) {
    const auto s = default_schedule(20);
    Rng r(7);
    const auto x = Tensor<double>::randn({1, 2, 2}, r), eps = Tensor<double>::randn({1, 2, 2}, r);
    Rng unused(0);
    const auto out = p_step(x, x, 9, FixedNoiseDenoiser<double>(eps), s, unused, false).x_prev;
    for (std::size_t i = 0; i < 4; ++i) {
        const double mu = (x[i] - s.beta[9] / std::sqrt(1.0 - s.alpha_bar[9]) * eps[i]) / std::sqrt(s.alpha[9]);
        EXPECT_NEAR(out[i], mu, 1e-12);
    }
    EXPECT_THROW(p_step(x, x, 0, FixedNoiseDenoiser<double>(eps), s, unused), std::out_of_range);
    EXPECT_THROW(p_step(x, x, 21, FixedNoiseDenoiser<double>(eps), s, unused), std::out_of_range);
}

TEST(PStep, NoiseHasPosteriorVariance) {
    const auto s = default_schedule(10);
    const std::size_t n = 20000;
    const auto x = Tensor<double>::zeros({1, 1, n}), eps = Tensor<double>::zeros({1, 1, n});
    Rng r(8);
    const auto out = p_step(x, x, 5, FixedNoiseDenoiser<double>(eps), s, r).x_prev;
    EXPECT_NEAR(energy(out) / double(n) / s.sigma2[5], 1.0, 0.05);
}

TEST(Sample, DeterministicPerSeedAndShaped) {
    const auto s = default_schedule(10);
    Rng init(9);
    UNetDenoiser<float> den(tiny_denoiser(2), init);
    randomize(den.parameters(), init, 0.2);
    const auto cond = Tensor<float>::randn({2, 4, 6}, init);
    Rng a(42), b(42), c(43);
    const auto sa = sample(cond, den, s, a), sb = sample(cond, den, s, b), sc = sample(cond, den, s, c);
    EXPECT_EQ(sa.shape(), cond.shape());
    EXPECT_TRUE(bitwise_equal(sa, sb));
    EXPECT_FALSE(bitwise_equal(sa, sc));
}

// ---------------------------------------------------------------- denoiser network

TEST(UNet, ZeroOutputAtInitialization) {
    Rng r(10);
    UNetDenoiser<float> den(tiny_denoiser(3), r);
    const auto s = default_schedule(10);
    const auto eps = den.predict_noise(Tensor<float>::randn({3, 8, 8}, r), Tensor<float>::randn({3, 8, 8}, r), 4, s);
    EXPECT_EQ(eps.shape(), (Shape{3, 8, 8}));
    for (auto v : eps.data()) EXPECT_EQ(v, 0.0f);
}

TEST(UNet, InputErrors) {
    Rng r(11);
    UNetDenoiser<float> den(tiny_denoiser(1), r);
    const auto s = default_schedule(10);
    EXPECT_THROW(den.predict_noise(Tensor<float>::zeros({1, 5, 4}), Tensor<float>::zeros({1, 5, 4}), 1, s),
                 DimensionError);
    EXPECT_THROW(den.predict_noise(Tensor<float>::zeros({2, 4, 4}), Tensor<float>::zeros({2, 4, 4}), 1, s),
                 DimensionError);
    EXPECT_THROW(den.predict_noise(Tensor<float>::zeros({1, 4, 4}), Tensor<float>::zeros({1, 4, 2}), 1, s),
                 DimensionError);
    EXPECT_THROW(den.predict_noise(Tensor<float>::zeros({1, 4, 4}), Tensor<float>::zeros({1, 4, 4}), 11, s),
                 std::out_of_range);
    EXPECT_THROW(UNetDenoiser<float>({1, 4, 2, 7}, r), ConfigError);
    EXPECT_THROW(UNetDenoiser<float>({1, 4, 0, 8}, r), ConfigError);
}

TEST(UNet, TimeStepChangesOutput) {
    Rng r(12);
    UNetDenoiser<double> den(tiny_denoiser(1), r);
    randomize(den.parameters(), r, 0.3);
    const auto s = default_schedule(10);
    const auto x = Tensor<double>::randn({1, 4, 4}, r), c = Tensor<double>::randn({1, 4, 4}, r);
    EXPECT_GT(max_abs_diff(den.predict_noise(x, c, 2, s), den.predict_noise(x, c, 9, s)), 1e-6);
}

TEST(UNet, GradientMatchesFiniteDifferences) {
    Rng r(13);
    UNetDenoiser<double> den(tiny_denoiser(2), r);
    randomize(den.parameters(), r, 0.3);
    auto x = Tensor<double>::randn({2, 4, 4}, r), c = Tensor<double>::randn({2, 4, 4}, r);
    const auto w = Tensor<double>::randn({2, 4, 4}, r);
    auto loss = [&] { return sum(mul(den.forward(x, c, 3, 10), w)); };
    const auto rx = grad_check<double>(loss, {x, c});
    EXPECT_TRUE(rx.passed) << rx.max_rel_error;
    std::vector<Tensor<double>> ps;
    for (auto& [n, t] : den.parameters()) ps.push_back(t);
    GradCheckOptions opt;
    opt.max_elements = 8;
    const auto rp = grad_check<double>(loss, ps, opt);
    EXPECT_TRUE(rp.passed) << rp.max_rel_error;
}

TEST(TimestepEmbedding, SinCosLayout) {
    const auto e = timestep_embedding<double>(5, 10, 8);
    ASSERT_EQ(e.shape(), (Shape{8}));
    EXPECT_NEAR(e[0], std::sin(500.0), 1e-12);
    EXPECT_NEAR(e[4], std::cos(500.0), 1e-12);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(e[i] * e[i] + e[i + 4] * e[i + 4], 1.0, 1e-12);
}

// ---------------------------------------------------------------- training

TEST(TrainStep, OracleDenoiserHasZeroLoss) {
    const auto s = default_schedule(50);
    Rng r(14);
    const auto initial = Tensor<double>::randn({3, 4, 4}, r), target = Tensor<double>::randn({3, 4, 4}, r);
    const OracleDenoiser<double> oracle(sub(target, initial));
    for (int k = 0; k < 20; ++k) EXPECT_LT(evaluate_step(initial, target, oracle, s, r), 1e-9);
}

TEST(TrainStep, UntrainedLossIsFiniteAndPositiveAndMatchesEvaluation) {
    const auto s = default_schedule(10);
    Rng init(15);
    UNetDenoiser<float> den(tiny_denoiser(1), init);
    randomize(den.parameters(), init, 0.2);
    const auto initial = Tensor<float>::randn({1, 8, 8}, init), target = Tensor<float>::randn({1, 8, 8}, init);
    auto opt = Adam<float>::from_named(den.parameters(), {1e-3});
    Rng a(16), b(16);
    const double before = evaluate_step(initial, target, den, s, a);
    const double loss = train_step(initial, target, den, opt, s, b);
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_GT(loss, 0.0);
    EXPECT_NEAR(loss, before, 1e-6);
    EXPECT_EQ(opt.steps(), 1u);
    EXPECT_THROW(train_step(initial, Tensor<float>::zeros({1, 8, 4}), den, opt, s, a), DimensionError);
}

TEST(TrainStep, ShortRunReducesLoss) {
    const auto s = default_schedule(10);
    Rng r(17);
    UNetDenoiser<float> den(tiny_denoiser(1), r);
    const auto initial = Tensor<float>::randn({1, 8, 8}, r, 0.3f);
    const auto target = add(initial, Tensor<float>::full({1, 8, 8}, 0.5f));
    auto opt = Adam<float>::from_named(den.parameters(), {3e-3});
    double head = 0, tail = 0;
    for (int k = 0; k < 200; ++k) {
        const double l = train_step(initial, target, den, opt, s, r);
        if (k < 20) head += l;
        if (k >= 180) tail += l;
    }
    EXPECT_LT(tail, 0.8 * head);
}

// ---------------------------------------------------------------- FRDAM

TEST(Frdam, ZeroResidualReducesToInverseTransform) {
    const auto s = default_schedule(10);
    Rng r(18);
    SubbandSet<float> initial{Tensor<float>::randn({3, 4, 6}, r), Tensor<float>::randn({3, 4, 6}, r),
                              Tensor<float>::randn({3, 4, 6}, r), Tensor<float>::randn({3, 4, 6}, r)};
    const OracleDenoiser<float> ldfb(Tensor<float>::zeros({3, 4, 6})), hdfb(Tensor<float>::zeros({9, 4, 6}));
    const auto res = frdam_adjust_detailed(initial, ldfb, hdfb, s, Rng(19));
    EXPECT_EQ(res.image.shape(), (Shape{3, 8, 12}));
    EXPECT_EQ(res.detail_residual.shape(), (Shape{9, 4, 6}));
    EXPECT_LT(max_abs_diff(res.image, idwt2(initial)), 1e-3);
}

TEST(Frdam, ResidualsLandInTheirBands) {
    const auto s = default_schedule(10);
    Rng r(20);
    SubbandSet<float> initial{Tensor<float>::zeros({1, 2, 2}), Tensor<float>::zeros({1, 2, 2}),
                              Tensor<float>::zeros({1, 2, 2}), Tensor<float>::zeros({1, 2, 2})};
    const Tensor<float> hf({3, 2, 2}, {1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3});
    const OracleDenoiser<float> ldfb(Tensor<float>::full({1, 2, 2}, 4.0f)), hdfb(hf);
    const auto res = frdam_adjust_detailed(initial, ldfb, hdfb, s, Rng(21));
    EXPECT_NEAR(res.refined.ll[0], 4.0f, 1e-3);
    EXPECT_NEAR(res.refined.lh[0], 1.0f, 1e-3);
    EXPECT_NEAR(res.refined.hl[0], 2.0f, 1e-3);
    EXPECT_NEAR(res.refined.hh[0], 3.0f, 1e-3);
}

TEST(Frdam, SeedDeterminism) {
    const auto s = default_schedule(10);
    Rng r(22);
    DenoiserConfig cfg = tiny_denoiser(1);
    UNetDenoiser<float> ldfb(cfg, r);
    cfg.data_channels = 3;
    UNetDenoiser<float> hdfb(cfg, r);
    randomize(ldfb.parameters(), r, 0.2);
    randomize(hdfb.parameters(), r, 0.2);
    SubbandSet<float> initial{Tensor<float>::randn({1, 4, 4}, r), Tensor<float>::randn({1, 4, 4}, r),
                              Tensor<float>::randn({1, 4, 4}, r), Tensor<float>::randn({1, 4, 4}, r)};
    const auto a = frdam_adjust(initial, ldfb, hdfb, s, Rng(7));
    const auto b = frdam_adjust(initial, ldfb, hdfb, s, Rng(7));
    const auto c = frdam_adjust(initial, ldfb, hdfb, s, Rng(8));
    EXPECT_TRUE(bitwise_equal(a, b));
    EXPECT_FALSE(bitwise_equal(a, c));
}

TEST(Frdam, StackDetailsOrder) {
    SubbandSet<float> s{Tensor<float>::full({1, 1, 1}, 0.f), Tensor<float>::full({1, 1, 1}, 1.f),
                        Tensor<float>::full({1, 1, 1}, 2.f), Tensor<float>::full({1, 1, 1}, 3.f)};
    const auto st = stack_details(s);
    EXPECT_EQ(st.shape(), (Shape{3, 1, 1}));
    EXPECT_EQ(st[0], 1.f);
    EXPECT_EQ(st[1], 2.f);
    EXPECT_EQ(st[2], 3.f);
}
