#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "contraq/seq_model.hpp"
#include "oracles.hpp"

using namespace contraq;

TEST(Kappa, Examples) {
    EXPECT_DOUBLE_EQ(kappa(IllPosedSpec::mild(1.0), 4), 0.25);
    EXPECT_DOUBLE_EQ(kappa(IllPosedSpec::mild(0.0), 917), 1.0);
    EXPECT_NEAR(kappa(IllPosedSpec::severe(1.0, 1.0), 3), std::exp(-3.0), 1e-16);
    EXPECT_NEAR(kappa(IllPosedSpec::severe(1.0, 1.0), 3), 0.049787, 5e-7);
}

TEST(Kappa, StrictlyDecreasing) {
    for (auto spec : {IllPosedSpec::mild(0.5, 2.0), IllPosedSpec::severe(0.3, 2.0)})
        for (std::size_t i = 1; i < 50; ++i) EXPECT_GT(kappa(spec, i), kappa(spec, i + 1));
}

TEST(Kappa, RejectsInvalidSpecs) {
    EXPECT_THROW(IllPosedSpec::mild(1.0, 0.5), std::invalid_argument);
    EXPECT_THROW(IllPosedSpec::severe(0.0, 1.0), std::invalid_argument);
    EXPECT_THROW(IllPosedSpec::severe(1.0, 0.5), std::invalid_argument);
}

TEST(SobolevNorm, FiniteExamples) {
    EXPECT_DOUBLE_EQ(sobolev_norm(CoefficientSequence({1.0, 0.0, 0.0}), 3.7), 1.0);
    EXPECT_NEAR(sobolev_norm(CoefficientSequence({1.0, 0.5}), 1.0), std::sqrt(2.0), 1e-15);
}

TEST(SobolevNorm, PowerDecayAgainstBruteForce) {
    // f_i = i^-1.55, beta = 1: terms i^-1.1. A 10^6-term partial sum misses a
    // tail of ~2.5, so the oracle adds the midpoint integral of the remainder.
    const auto f = CoefficientSequence::power_law(1.0, 1.55, 16);
    const std::size_t M = 1'000'000;
    const double brute = oracle::partial_sum([](double i) { return std::pow(i, -1.1); }, 1, M);
    const double rest = std::pow(M + 0.5, -0.1) / 0.1;
    EXPECT_NEAR(sobolev_norm(f, 1.0), std::sqrt(brute + rest), 1e-6);

    // faster decay: the 10^6-term partial sum alone is within tolerance
    const auto g = CoefficientSequence::power_law(1.0, 2.55, 16);
    const double brute_g = oracle::partial_sum([](double i) { return std::pow(i, -3.1); }, 1, M);
    EXPECT_NEAR(sobolev_norm(g, 1.0), std::sqrt(brute_g), 1e-6);
}

TEST(SobolevNorm, CertifiedRemainderAtDefaultHead) {
    const auto f = make_truth(1.0, 1.0, 0.05, 1u << 14);
    const auto r = sobolev_norm_certified(f, 1.0);
    EXPECT_LE(r.remainder_bound, 1e-12 * r.value);
}

TEST(SobolevNorm, DivergentTailThrows) {
    const auto f = CoefficientSequence::power_law(1.0, 1.2, 16);
    EXPECT_THROW(sobolev_norm(f, 1.0), DivergentNorm);
    EXPECT_THROW(CoefficientSequence::power_law(1.0, 0.4, 16), DivergentNorm);
}

TEST(MakeTruth, RadiusIsExact) {
    EXPECT_NEAR(sobolev_norm(make_truth(1.0, 1.0, 0.05, 10000), 1.0), 1.0, 1e-9);
    const auto z = make_truth(1.0, 0.0, 0.05, 10);
    EXPECT_EQ(l2_norm(z), 0.0);
    EXPECT_EQ(z[100], 0.0);
}

TEST(MakeTruth, LowerNormAgainstBruteForce) {
    const auto f = make_truth(2.0, 3.0, 0.05, 10000);
    // f_i^2 i^2 = A^2 i^{-2(2.55)+2} = A^2 i^-3.1
    const double A = f[1];
    const std::size_t M = 1'000'000;
    const double brute = oracle::partial_sum([](double i) { return std::pow(i, -3.1); }, 1, M) +
                         std::pow(M + 0.5, -2.1) / 2.1;
    EXPECT_NEAR(sobolev_norm(f, 1.0), A * std::sqrt(brute), 1e-6);
}

TEST(Observe, NoiselessLimit) {
    const auto f0 = make_truth(1.0, 1.0, 0.05, 64);
    const auto spec = IllPosedSpec::mild(1.0);
    std::vector<double> z(64, 0.0);
    const auto obs = observe_with_noise(f0, spec, 100.0, z);
    for (std::size_t i = 1; i <= 64; ++i) EXPECT_EQ(obs.y[i - 1], kappa(spec, i) * f0[i]);
}

TEST(Observe, DeterministicPerSeed) {
    const auto f0 = make_truth(1.0, 1.0, 0.05, 128);
    const auto spec = IllPosedSpec::mild(1.0);
    const auto a = observe(f0, spec, 1000.0, 128, 99);
    const auto b = observe(f0, spec, 1000.0, 128, 99);
    EXPECT_EQ(a.y, b.y);
    const auto c = observe(f0, spec, 1000.0, 128, 100);
    EXPECT_NE(a.y, c.y);
}

TEST(Observe, NoiseMeanWithinCltBand) {
    const auto f0 = CoefficientSequence::zeros(1);
    const auto spec = IllPosedSpec::mild(1.0);
    const double n = 50.0;
    const std::size_t R = 100000;
    double s = 0.0;
    for (std::size_t r = 0; r < R; ++r) s += observe(f0, spec, n, 1, stream_seed(5, r, Stream::Observation)).y[0];
    EXPECT_LT(std::abs(s / R), 4.0 / std::sqrt(double(R)) / std::sqrt(n));
}

TEST(Posterior, ScalarExample) {
    const auto prior = GaussianProductPrior::mild(0.0, 1.0, 1);  // lambda_1 = 1
    SequenceObservation obs{{2.0}, 1.0, 0};
    const auto post = posterior(prior, obs, IllPosedSpec::mild(0.0), Space::KFSpace);
    EXPECT_DOUBLE_EQ(post.mean[0], 1.0);
    EXPECT_DOUBLE_EQ(post.var[0], 0.5);
}

TEST(Posterior, TruncatedCoordinatesDegenerate) {
    const auto prior = GaussianProductPrior::severe(1.0, 0.0, 1.0, 3);
    SequenceObservation obs{{0.3, -0.2, 0.1, 0.4, 0.5}, 10.0, 0};
    for (auto sp : {Space::FSpace, Space::KFSpace}) {
        const auto post = posterior(prior, obs, IllPosedSpec::severe(1.0, 1.0), sp);
        for (std::size_t i = 3; i < 5; ++i) {
            EXPECT_EQ(post.mean[i], 0.0);
            EXPECT_EQ(post.var[i], 0.0);
        }
        EXPECT_EQ(post.tail_var.value, 0.0);
    }
}

TEST(Posterior, ConjugacyAgainstQuadratureBayes) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    for (int t = 0; t < 1000; ++t) {
        const double lam = std::exp(std::log(1e-4) + u(rng) * std::log(1e6));
        const double kap = std::exp(std::log(1e-3) + u(rng) * std::log(1e3));
        const double n = std::exp(u(rng) * std::log(1e5));
        const double theta = std::sqrt(lam) * z(rng);
        const double y = kap * theta + z(rng) / std::sqrt(n);

        const auto ref = oracle::quadrature_bayes(lam, kap, n, y);
        // single coordinate with lambda_1 = lam and kappa_1 = kap
        const auto prior = GaussianProductPrior::mild(0.0, lam, 1);
        const IllPosedSpec ks{IllPosedSpec::Kind::Mild, 0.0, kap, 0.0};
        const SequenceObservation o{{y}, n, 0};
        const auto f = posterior(prior, o, ks, Space::FSpace);
        const double scale = std::max(1.0, std::abs(ref.mean));
        EXPECT_NEAR(f.mean[0], ref.mean, 1e-8 * scale) << lam << " " << kap << " " << n << " " << y;
        EXPECT_NEAR(f.var[0], ref.var, 1e-8 * std::max(1.0, ref.var)) << lam << " " << kap << " " << n;
        const auto k = posterior(prior, o, ks, Space::KFSpace);
        EXPECT_NEAR(k.mean[0], kap * ref.mean, 1e-8 * std::max(1.0, std::abs(kap * ref.mean)));
        EXPECT_NEAR(k.var[0], kap * kap * ref.var, 1e-8 * std::max(1.0, kap * kap * ref.var));
    }
}

TEST(Posterior, ShrinkageStrict) {
    const auto spec = IllPosedSpec::mild(1.0);
    const auto prior = GaussianProductPrior::mild(1.0);
    const auto f0 = make_truth(1.0, 1.0, 0.05, 256);
    const auto obs = observe(f0, spec, 1e3, 256, 3);
    const auto post = posterior(prior, obs, spec, Space::KFSpace);
    for (std::size_t i = 1; i <= 256; ++i) {
        const double bound = prior.variance(i) * kappa(spec, i) * kappa(spec, i);
        EXPECT_LT(post.var[i - 1], bound);
        EXPECT_GT(post.var[i - 1], 0.0);
    }
}

TEST(PosteriorRisk, ZeroTruthZeroDataIsSumOfVariances) {
    const auto spec = IllPosedSpec::severe(1.0, 1.0);
    const auto prior = GaussianProductPrior::severe(1.0, 0.0, 1.0, 8);
    SequenceObservation obs{std::vector<double>(16, 0.0), 100.0, 0};
    const auto post = posterior(prior, obs, spec, Space::KFSpace);
    double s = 0.0;
    for (std::size_t i = 1; i <= 8; ++i) {
        const double lk2 = prior.variance(i) * std::pow(kappa(spec, i), 2);
        s += lk2 / (1.0 + 100.0 * lk2);
    }
    EXPECT_NEAR(posterior_risk_direct(post, CoefficientSequence::zeros(16), spec), s, 1e-15);
}

TEST(PosteriorRisk, DiffusePriorLeavesOnlyTruncationBias) {
    const auto spec = IllPosedSpec::severe(0.5, 1.0);
    const std::size_t k = 6, N = 40;
    const auto f0 = make_truth(1.0, 1.0, 0.05, N);
    auto prior = GaussianProductPrior::severe(0.0, 0.0, 1.0, k, 1e12);
    std::vector<double> z(N, 0.0);
    const auto obs = observe_with_noise(f0, spec, 1e4, z);
    const auto post = posterior(prior, obs, spec, Space::KFSpace);
    double bias = oracle::partial_sum([&](double i) { return std::pow(kappa(spec, std::size_t(i)) * f0[std::size_t(i)], 2); },
                                      k + 1, 2000);
    const double risk = posterior_risk_direct(post, f0, spec);
    // variances contribute sum 1/n per coordinate in the limit
    EXPECT_NEAR(risk, bias + k / 1e4, 1e-9);
}

TEST(PosteriorRisk, MatchesMonteCarlo) {
    const auto spec = IllPosedSpec::mild(1.0);
    const auto prior = GaussianProductPrior::mild(1.0);
    const std::size_t N = 64;
    const auto f0 = make_truth(1.0, 1.0, 0.05, N);
    const auto obs = observe(f0, spec, 500.0, N, 17);
    const auto post = posterior(prior, obs, spec, Space::KFSpace);
    const double risk = posterior_risk_direct(post, f0, spec);

    // Kf - Kf0 over the head from draws; beyond the head the posterior equals
    // the prior, contributing tail variance plus tail truth energy.
    double tail = post.tail_var.value;
    const PowerExpShape kf0 = f0.tail() * spec.shape();
    tail += oracle::partial_sum([&](double i) { return kf0(i) * kf0(i); }, N + 1, 2'000'000) +
            kf0.amp * kf0.amp * std::pow(2'000'000.5, 1.0 - 2.0 * kf0.a) / (2.0 * kf0.a - 1.0);
    Rng rng = make_rng(23);
    std::normal_distribution<double> z(0.0, 1.0);
    const std::size_t D = 100000;
    std::vector<double> v(D);
    for (std::size_t d = 0; d < D; ++d) {
        double s = 0.0;
        for (std::size_t i = 1; i <= N; ++i) {
            const double e = post.mean[i - 1] + std::sqrt(post.var[i - 1]) * z(rng) - kappa(spec, i) * f0[i];
            s += e * e;
        }
        v[d] = s + tail;
    }
    const auto m = mean_and_se(v);
    EXPECT_LT(std::abs(m.mean - risk), 4.0 * m.se);
}

TEST(RiskComponents, ThresholdCoordinate) {
    // choose n with n lambda_k kappa_k^2 = 1 at k = 5
    const auto spec = IllPosedSpec::severe(1.0, 1.0);
    const std::size_t k = 5;
    const auto prior = GaussianProductPrior::severe(1.0, 0.0, 1.0, k);
    const double lk2 = prior.variance(k) * std::pow(kappa(spec, k), 2);
    const double n = 1.0 / lk2;
    const auto all = expected_risk_components(prior, CoefficientSequence::zeros(1), spec, n);
    const auto fewer = expected_risk_components(GaussianProductPrior::severe(1.0, 0.0, 1.0, k - 1),
                                                CoefficientSequence::zeros(1), spec, n);
    EXPECT_NEAR(all.s_sum - fewer.s_sum, lk2 / 2.0, 1e-12 * lk2);
    EXPECT_NEAR(all.t_sum - fewer.t_sum, lk2 / 4.0, 1e-12 * lk2);
}

TEST(RiskComponents, SumsBoundedByKOverN) {
    for (double n : {1e2, 1e4, 1e6}) {
        const auto spec = IllPosedSpec::severe(1.0, 1.0);
        const std::size_t k = 12;
        const auto prior = GaussianProductPrior::severe(1.0, 0.5, 1.0, k);
        const auto r = expected_risk_components(prior, make_truth(1.0, 1.0, 0.05, 64), spec, n);
        EXPECT_LE(r.s_sum, k / n);
        EXPECT_LE(r.t_sum, k / n);
    }
}

TEST(RiskComponents, BiasAgainstBruteForce) {
    const auto spec = IllPosedSpec::mild(0.5);
    const std::size_t k = 30;
    const double n = 1e4;
    const auto prior = GaussianProductPrior::severe(1.0, 0.0, 1.0, k);
    const auto f0 = make_truth(1.0, 1.0, 0.05, 100);
    const auto r = expected_risk_components(prior, f0, spec, n);
    const std::size_t M = 1'000'000;
    const double brute = oracle::partial_sum(
        [&](double x) {
            const auto i = static_cast<std::size_t>(x);
            const double kf = kappa(spec, i) * f0[i];
            if (i > k) return kf * kf;
            const double d = 1.0 + n * prior.variance(i) * kappa(spec, i) * kappa(spec, i);
            return kf * kf / (d * d);
        },
        1, M);
    // remainder beyond 10^6 by the midpoint integral
    const PowerExpShape kf0 = f0.tail() * spec.shape();
    const double rest = kf0.amp * kf0.amp * std::pow(M + 0.5, 1.0 - 2.0 * kf0.a) / (2.0 * kf0.a - 1.0);
    EXPECT_NEAR(r.bias_sum, brute + rest, 1e-10 * (brute + rest));
}

TEST(CredibleRadius, LevelZeroIsMinimum) {
    const auto spec = IllPosedSpec::mild(1.0);
    const auto f0 = make_truth(1.0, 1.0, 0.05, 32);
    const auto obs = observe(f0, spec, 100.0, 32, 1);
    const auto post = posterior(GaussianProductPrior::mild(1.0), obs, spec, Space::FSpace);
    const auto d = posterior_distance_draws(post, f0, 500, 77);
    EXPECT_EQ(credible_radius(post, f0, 0.0, 500, 77), *std::min_element(d.begin(), d.end()));
    double prev = 0.0;
    for (double l : {0.1, 0.5, 0.9, 0.99}) {
        const double r = credible_radius(post, f0, l, 500, 77);
        EXPECT_GE(r, prev);
        prev = r;
    }
    EXPECT_THROW(credible_radius(post, f0, 0.5, 99, 1), std::invalid_argument);
}

TEST(CredibleRadius, PointMassPosterior) {
    DiagonalGaussianPosterior post;
    post.mean = {1.0, 2.0};
    post.var = {0.0, 0.0};
    post.space = Space::FSpace;
    const CoefficientSequence f0({0.0, 0.0});
    for (double l : {0.0, 0.3, 0.9}) EXPECT_NEAR(credible_radius(post, f0, l, 100, 5), std::sqrt(5.0), 1e-15);
}

TEST(CredibleRadius, TwoCoordinateAgainstOversampledOracle) {
    DiagonalGaussianPosterior post;
    post.mean = {0.3, -0.1};
    post.var = {0.04, 0.01};
    post.space = Space::FSpace;
    const CoefficientSequence f0({0.0, 0.0});
    const double r = credible_radius(post, f0, 0.9, 100000, 8);

    std::mt19937_64 rng(31337);
    std::normal_distribution<double> z(0.0, 1.0);
    const std::size_t M = 10'000'000;
    std::vector<double> d(M);
    for (auto& v : d) {
        const double a = 0.3 + 0.2 * z(rng), b = -0.1 + 0.1 * z(rng);
        v = std::sqrt(a * a + b * b);
    }
    std::nth_element(d.begin(), d.begin() + 9'000'000 - 1, d.end());
    EXPECT_NEAR(r, d[9'000'000 - 1], 0.01 * d[9'000'000 - 1]);
}

TEST(KlDivergence, Examples) {
    const CoefficientSequence a({0.6, 0.8}), b({0.0, 0.0});
    EXPECT_EQ(kl_divergence(a, a, 3.0), 0.0);
    EXPECT_NEAR(kl_divergence(a, b, 2.0), 1.0, 1e-15);
}

TEST(KlDivergence, CoordinatewiseGaussianKl) {
    const auto spec = IllPosedSpec::mild(1.0);
    const auto k1 = apply_operator(make_truth(1.0, 1.0, 0.05, 200), spec);
    const auto k2 = apply_operator(make_truth(1.0, 0.7, 0.3, 200), spec);
    const double n = 37.0;
    // KL(N(m1, 1/n) || N(m2, 1/n)) = n (m1 - m2)^2 / 2 per coordinate
    const std::size_t M = 1'000'000;
    const double s = oracle::partial_sum(
        [&](double x) {
            const auto i = static_cast<std::size_t>(x);
            const double d = k1[i] - k2[i];
            return 0.5 * n * d * d;
        },
        1, M);
    EXPECT_NEAR(kl_divergence(k1, k2, n), s, 1e-12 * s + 1e-12);
}
