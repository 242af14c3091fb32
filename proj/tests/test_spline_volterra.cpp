#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "contraq/spline_volterra.hpp"
#include "oracles.hpp"

using namespace contraq;

namespace {

std::vector<double> random_points(std::size_t count, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> x(count);
    for (auto& v : x) v = u(rng);
    return x;
}

std::vector<double> random_coefficients(int J, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<double> a(J);
    for (auto& v : a) v = z(rng);
    a[0] = 0.0;
    return a;
}

double distance_to_knot(const BSplineBasis& b, double x) {
    double d = 1.0;
    for (double t : b.knots()) d = std::min(d, std::abs(x - t));
    return d;
}

}  // namespace

TEST(BSpline, DimensionAndKnots) {
    const BSplineBasis b(3, 5);
    EXPECT_EQ(b.dimension(), 7);
    EXPECT_EQ(b.knots().size(), 10u);
    EXPECT_EQ(BSplineBasis::with_dimension(4, 16).intervals(), 13);
}

TEST(BSpline, HatPeak) {
    const BSplineBasis b(2, 4);
    for (int j = 1; j <= b.dimension(); ++j) EXPECT_NEAR(bspline_eval(b, j, (j - 1) / 4.0), 1.0, 1e-15);
}

TEST(BSpline, PartitionOfUnityAndNonnegativity) {
    for (int q : {2, 3, 4, 5})
        for (int m : {1, 3, 8, 29}) {
            const BSplineBasis b(q, m);
            auto xs = random_points(1000, 100 * q + m);
            xs.push_back(0.3);
            xs.push_back(1.0);
            for (double x : xs) {
                double s = 0.0;
                for (int j = 1; j <= b.dimension(); ++j) {
                    const double v = bspline_eval(b, j, x);
                    EXPECT_GE(v, 0.0);
                    s += v;
                }
                EXPECT_NEAR(s, 1.0, 1e-12) << q << " " << m << " " << x;
            }
        }
}

TEST(BSpline, IntegralMatchesKnotSpanFormula) {
    for (int q : {2, 3, 4}) {
        const BSplineBasis b(q, 6);
        const auto& t = b.knots();
        for (int j = 1; j <= b.dimension(); ++j) {
            // Simpson over each knot span, 10^5 points in total
            double s = 0.0;
            for (int k = 0; k < 6; ++k)
                s += oracle::simpson([&](double x) { return bspline_eval(b, j, x); }, k / 6.0, (k + 1) / 6.0, 16666);
            EXPECT_NEAR(s, (t[j - 1 + q] - t[j - 1]) / q, 1e-8);
        }
    }
}

TEST(BSpline, DerivativeMatchesFiniteDifferences) {
    for (int q : {2, 3, 4, 5}) {
        const BSplineBasis b(q, 11);
        for (double x : random_points(1000, 7 + q, 1e-3, 1.0 - 1e-3)) {
            if (distance_to_knot(b, x) < 1e-5) continue;
            for (int j = 1; j <= b.dimension(); ++j) {
                const double h = 1e-6;
                const double fd = (bspline_eval(b, j, x + h) - bspline_eval(b, j, x - h)) / (2 * h);
                EXPECT_NEAR(bspline_derivative(b, j, x), fd, 1e-5) << q << " " << j << " " << x;
            }
        }
    }
}

TEST(BSpline, DerivativesSumToZero) {
    const BSplineBasis b(4, 9);
    for (double x : random_points(100, 3)) {
        double s = 0.0;
        for (int j = 1; j <= b.dimension(); ++j) s += bspline_derivative(b, j, x);
        EXPECT_NEAR(s, 0.0, 1e-12);
    }
}

TEST(BSpline, QuadraticDerivativeContinuousAtKnots) {
    const BSplineBasis b(3, 7);
    for (int k = 1; k < 7; ++k) {
        const double x = k / 7.0;
        for (int j = 1; j <= b.dimension(); ++j)
            EXPECT_NEAR(bspline_derivative(b, j, x - 1e-13), bspline_derivative(b, j, x + 1e-13), 1e-9);
    }
}

TEST(Volterra, ConstantFunctionIntegratesToIdentity) {
    for (int q : {2, 3, 4}) {
        const BSplineBasis b(q, 9);
        const SplineFunction sf(b, b.greville());
        for (double x : random_points(50, q)) {
            EXPECT_NEAR(sf.f(x), 1.0, 1e-10);
            EXPECT_NEAR(sf.Kf(x), x, 1e-10);
        }
    }
}

TEST(Volterra, ZeroCoefficients) {
    const auto kf = volterra_apply_spline(std::vector<double>(8, 0.0), BSplineBasis::with_dimension(3, 8));
    for (double x : random_points(20, 1)) EXPECT_EQ(kf(x), 0.0);
}

TEST(Volterra, SplineIdentityMatchesQuadrature) {
    for (int q : {2, 3, 4}) {
        const BSplineBasis b = BSplineBasis::with_dimension(q, 13);
        const auto a = random_coefficients(13, 40 + q);
        const SplineFunction sf(b, a);
        const auto kf = volterra_apply_spline(a, b);
        for (double x : random_points(100, 80 + q)) {
            const double num = volterra_apply_numeric([&](double t) { return sf.f(t); }, x, b.knots());
            EXPECT_NEAR(kf(x), num, 1e-10) << q << " " << x;
        }
    }
}

TEST(Volterra, NumericExamples) {
    for (double x : {0.0, 0.25, 0.7, 1.0}) {
        EXPECT_NEAR(volterra_apply_numeric([](double t) { return 2 * t; }, x), x * x, 1e-14);
        EXPECT_NEAR(volterra_apply_numeric([](double t) { return std::cos(2 * std::numbers::pi * t); }, x),
                    std::sin(2 * std::numbers::pi * x) / (2 * std::numbers::pi), 1e-14);
    }
}

TEST(Volterra, NonconvergenceSignalled) {
    EXPECT_THROW(volterra_apply_numeric([](double t) { return std::sin(1.0 / t) / t; }, 1.0),
                 QuadratureNonconvergence);
}

TEST(Gram, SinglePointAtHatPeak) {
    const BSplineBasis b(2, 4);
    RegressionDesign d{{0.5}, 1.0};
    const auto g = gram_matrix(d, b);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) EXPECT_NEAR(g.entries(i, j), (i == 2 && j == 2) ? 1.0 : 0.0, 1e-15);
}

TEST(Gram, MatchesBruteForceAndRowSums) {
    for (int q : {2, 3, 4}) {
        const BSplineBasis b = BSplineBasis::with_dimension(q, 10);
        const auto d = uniform_design(300, 1.0);
        const auto g = gram_matrix(d, b);
        for (int i = 1; i <= 10; ++i) {
            double row = 0.0, direct = 0.0;
            for (int j = 1; j <= 10; ++j) {
                double s = 0.0;
                for (double x : d.x) s += bspline_eval(b, i, x) * bspline_eval(b, j, x);
                EXPECT_NEAR(g.entries(i - 1, j - 1), s / 300.0, 1e-14);
                row += g.entries(i - 1, j - 1);
            }
            for (double x : d.x) direct += bspline_eval(b, i, x);
            EXPECT_NEAR(row, direct / 300.0, 1e-14);
        }
    }
}

TEST(DesignConditions, UniformDesignGrid) {
    for (int q : {2, 3, 4})
        for (int J : {8, 16, 32})
            for (std::size_t n : {256u, 512u, 1024u}) {
                const auto dc = check_design_conditions(uniform_design(n, 1.0), BSplineBasis::with_dimension(q, J));
                EXPECT_TRUE(dc.pass) << q << " " << J << " " << n << " d1 " << dc.d1_min << " " << dc.d1_max
                                     << " d2 " << dc.d2_min << " " << dc.d2_max;
            }
}

TEST(DesignConditions, RatioStableAcrossJ) {
    std::vector<double> ratios;
    for (int J : {8, 16, 32}) {
        const auto dc = check_design_conditions(uniform_design(512, 1.0), BSplineBasis::with_dimension(3, J));
        ratios.push_back(dc.d1_max / dc.d1_min);
    }
    const double lo = *std::min_element(ratios.begin(), ratios.end());
    const double hi = *std::max_element(ratios.begin(), ratios.end());
    EXPECT_LE((hi - lo) / lo, 0.25) << ratios[0] << " " << ratios[1] << " " << ratios[2];
}

TEST(DesignConditions, DegenerateDesignFails) {
    RegressionDesign d{std::vector<double>(100, 0.4), 1.0};
    const auto dc = check_design_conditions(d, BSplineBasis::with_dimension(3, 8));
    EXPECT_NEAR(dc.d1_min, 0.0, 1e-12);
    EXPECT_FALSE(dc.pass);
}

TEST(DesignConditions, SpectrumStabilisesInN) {
    const auto b = BSplineBasis::with_dimension(3, 16);
    const auto a = check_design_conditions(uniform_design(1u << 14, 1.0), b);
    const auto c = check_design_conditions(uniform_design(1u << 15, 1.0), b);
    EXPECT_NEAR(a.d1_min, c.d1_min, 1e-3);
    EXPECT_NEAR(a.d1_max, c.d1_max, 1e-3);
}

TEST(SplinePriorDraw, ForcedCoefficients) {
    const auto b = BSplineBasis::with_dimension(3, 9);
    const SplineFunction ones(b, std::vector<double>(9, 1.0));
    std::vector<double> last(9, 0.0);
    last[8] = 1.0;
    const SplineFunction spike(b, last);
    for (double x : random_points(50, 2)) {
        EXPECT_NEAR(ones.f(x), 0.0, 1e-15);
        EXPECT_NEAR(spike.f(x), 9.0 * scaled_lower_eval(b, 8, x), 1e-13);
    }
}

TEST(SplinePriorDraw, SymmetricMean) {
    SplinePrior prior;
    const std::size_t R = 100000;
    std::vector<double> v(R);
    for (std::size_t r = 0; r < R; ++r) v[r] = draw_spline_prior(prior, 3, stream_seed(1, r, Stream::PriorDraw), 10).function.f(0.5);
    const auto m = mean_and_se(v);
    EXPECT_LT(std::abs(m.mean), 4.0 * m.se);
}

TEST(SplinePriorDraw, Reproducible) {
    SplinePrior prior;
    const auto a = draw_spline_prior(prior, 3, 99);
    const auto b = draw_spline_prior(prior, 3, 99);
    EXPECT_EQ(a.J, b.J);
    EXPECT_EQ(a.a, b.a);
    EXPECT_GE(a.J, 3);
}

TEST(SplinePriorDraw, JConditionHolds) {
    for (auto prior : {SplinePrior{SplinePrior::Family::Poisson, 8.0, 1.0}, SplinePrior{SplinePrior::Family::Geometric, 0.2, 1.0}}) {
        const auto rep = check_j_condition(prior, 3);
        EXPECT_TRUE(rep.pass);
        EXPECT_GT(rep.c_u, 0.0);
        // the fitted c_d makes the lower condition hold everywhere on the range
        for (int j = rep.j_first; j <= 1000; j += 37) {
            double p = 0.0;
            for (int J = j; J <= 2 * j; ++J) p += std::exp(prior.log_pmf(J, 3));
            if (p > 0.0) EXPECT_LE(std::exp(-rep.c_d * j * std::pow(std::log(j), rep.t)), p * (1 + 1e-9));
        }
    }
}

TEST(SplinePosterior, NoInformationLimit) {
    const auto d = uniform_design(64, 1e8);
    std::vector<double> y(64);
    for (std::size_t i = 0; i < 64; ++i) y[i] = std::sin(6.0 * d.x[i]);
    SplinePrior prior;
    const std::vector<int> grid{4, 8, 16};
    const auto post = spline_posterior(d, y, prior, 3, grid);
    double z = 0.0;
    for (int J : grid) z += std::exp(prior.log_pmf(J, 3));
    for (const auto& c : post.components) {
        EXPECT_NEAR(c.weight, std::exp(prior.log_pmf(c.J, 3)) / z, 1e-6);
        EXPECT_LT(c.mean.cwiseAbs().maxCoeff(), 1e-6);
        const auto cov = c.covariance();
        EXPECT_LT((cov - Eigen::MatrixXd::Identity(c.J - 1, c.J - 1)).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(SplinePosterior, SingleCoefficientToyMatchesQuadratureBayes) {
    // q = 2, J = 2: Kf(x) = a_2 x
    for (double x1 : {0.3, 0.8})
        for (double y1 : {-1.0, 0.4, 2.5}) {
            SplinePrior prior;
            prior.tau = 1.3;
            const RegressionDesign d{{x1}, 0.6};
            const std::vector<int> grid{2};
            const std::vector<double> y{y1};
            const auto post = spline_posterior(d, y, prior, 2, grid);
            const auto ref = oracle::quadrature_bayes(1.3 * 1.3, x1, 1.0 / (0.6 * 0.6), y1);
            EXPECT_NEAR(post.components[0].mean[0], ref.mean, 1e-8);
            EXPECT_NEAR(post.components[0].covariance()(0, 0), ref.var, 1e-8);
        }
}

TEST(SplinePosterior, MatchesDenseWoodburySolve) {
    const std::size_t n = 200;
    const int q = 3, J = 8;
    const auto d = uniform_design(n, 0.3);
    std::vector<double> y(n);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) y[i] = std::cos(3.0 * d.x[i]) + 0.3 * z(rng);
    SplinePrior prior;
    prior.tau = 0.7;
    const std::vector<int> grid{J};
    const auto post = spline_posterior(d, y, prior, q, grid);
    const auto b = BSplineBasis::with_dimension(q, J);
    Eigen::MatrixXd X(n, J - 1);
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 2; j <= J; ++j) X(i, j - 2) = bspline_eval(b, j, d.x[i]);
    const double t2 = 0.49, s2 = 0.09;
    const Eigen::MatrixXd S = s2 * Eigen::MatrixXd::Identity(n, n) + t2 * X * X.transpose();
    const Eigen::Map<const Eigen::VectorXd> Y(y.data(), n);
    const Eigen::MatrixXd SinvX = S.ldlt().solve(X);
    const Eigen::VectorXd mean = t2 * X.transpose() * S.ldlt().solve(Y);
    const Eigen::MatrixXd cov = t2 * Eigen::MatrixXd::Identity(J - 1, J - 1) - t2 * t2 * X.transpose() * SinvX;
    EXPECT_LT((post.components[0].mean - mean).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((post.components[0].covariance() - cov).cwiseAbs().maxCoeff(), 1e-8);
    // marginal likelihood of N(0, S)
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    const double logdet = ldlt.vectorD().array().log().sum();
    const double ml = -0.5 * (n * std::log(2 * std::numbers::pi) + logdet + Y.dot(ldlt.solve(Y)));
    EXPECT_NEAR(post.components[0].log_marginal, ml, 1e-8 * std::abs(ml));
}

TEST(SplinePosterior, NoiselessSplineSelectsLargeEnoughJ) {
    const int q = 3, Jstar = 8;
    const auto d = uniform_design(2048, 0.05);
    const SplineFunction truth(BSplineBasis::with_dimension(q, Jstar), random_coefficients(Jstar, 12));
    std::vector<double> y(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) y[i] = truth.Kf(d.x[i]);
    const std::vector<int> grid{4, 8, 16, 32};
    const auto post = spline_posterior(d, y, SplinePrior{}, q, grid);
    double w = 0.0;
    for (const auto& c : post.components)
        if (c.J >= Jstar) w += c.weight;
    EXPECT_GT(w, 0.99);
}

TEST(EmpiricalNorm, Examples) {
    const auto d = uniform_design(37, 1.0);
    auto f = [](double x) { return std::sin(x); };
    EXPECT_EQ(empirical_norm(f, f, d), 0.0);
    EXPECT_NEAR(empirical_norm([](double x) { return x + 1.0; }, [](double x) { return x; }, d), 1.0, 1e-15);
    double s = 0.0;
    for (double x : d.x) s += std::pow(std::sin(x) - x * x, 2);
    EXPECT_NEAR(empirical_norm(f, [](double x) { return x * x; }, d), std::sqrt(s / 37.0), 1e-15);
}

TEST(SplineModulus, ZeroDelta) { EXPECT_EQ(spline_modulus_report(3.0, 16, 0.0), 0.0); }

TEST(SplineModulus, ConstantDifferencesFiniteRatio) {
    const auto d = uniform_design(512, 1.0);
    const auto b = BSplineBasis::with_dimension(3, 16);
    std::vector<double> a(16);
    for (int j = 0; j < 16; ++j) a[j] = j;
    const SplineFunction sf(b, a);
    std::vector<double> fx(512), kx(512), zero(512, 0.0);
    for (std::size_t i = 0; i < 512; ++i) fx[i] = sf.f(d.x[i]), kx[i] = sf.Kf(d.x[i]);
    const double ratio = empirical_norm(fx, zero) / (16.0 * empirical_norm(kx, zero));
    EXPECT_TRUE(std::isfinite(ratio));
    EXPECT_GT(ratio, 0.0);
}

TEST(SplineModulus, ConstantStableAndBoundHolds) {
    const auto d = uniform_design(1024, 1.0);
    std::vector<double> sups;
    for (int J : {8, 16, 32}) {
        const auto b = BSplineBasis::with_dimension(3, J);
        const auto c = calibrate_spline_modulus(d, b, 2000, 3);
        EXPECT_LE(c.mc_max, c.exact_sup * (1 + 1e-10));
        sups.push_back(c.exact_sup);
        const SplineDesignCache cache(d, b);
        std::vector<double> f(d.size()), kf(d.size()), zero(d.size(), 0.0);
        for (int r = 0; r < 10000 / 3; ++r) {
            const auto a = random_coefficients(J, 1000 + r);
            cache.evaluate(a, f, kf);
            EXPECT_LE(empirical_norm(f, zero), c.exact_sup * J * empirical_norm(kf, zero) * (1 + 1e-9));
        }
    }
    const double lo = *std::min_element(sups.begin(), sups.end());
    const double hi = *std::max_element(sups.begin(), sups.end());
    EXPECT_LE((hi - lo) / lo, 0.25) << sups[0] << " " << sups[1] << " " << sups[2];
}

TEST(DesignCache, AgreesWithPointwiseEvaluation) {
    const auto d = uniform_design(100, 1.0);
    const auto b = BSplineBasis::with_dimension(4, 12);
    const auto a = random_coefficients(12, 8);
    const SplineFunction sf(b, a);
    const SplineDesignCache cache(d, b);
    std::vector<double> f(100), kf(100);
    cache.evaluate(a, f, kf);
    for (std::size_t i = 0; i < 100; ++i) {
        EXPECT_NEAR(f[i], sf.f(d.x[i]), 1e-12);
        EXPECT_NEAR(kf[i], sf.Kf(d.x[i]), 1e-13);
    }
}

TEST(HolderTruth, SingleTermLipschitz) {
    const auto h = make_holder_truth(1.0, 2.0, 1);
    // grid sup of |f'| from central differences
    double sup = 0.0;
    for (int i = 1; i < 10000; ++i) {
        const double x = i / 10000.0, e = 1e-7;
        sup = std::max(sup, std::abs(h(x + e) - h(x - e)) / (2 * e));
    }
    EXPECT_NEAR(sup, 2.0, 2e-3);
    // one term: proportional to cos(2 pi x)
    EXPECT_NEAR(h(0.0) / h(0.5), -1.0, 1e-12);
}

TEST(HolderTruth, ZeroConstant) {
    const auto h = make_holder_truth(0.7, 0.0, 6);
    for (double x : {0.0, 0.3, 1.0}) EXPECT_EQ(h(x), 0.0);
}

TEST(HolderTruth, GridQuotientWithinTolerance) {
    for (double beta : {0.5, 1.0, 1.5}) {
        const auto h = make_holder_truth(beta, 1.0, 8);
        const int G = 10001;
        std::vector<double> g(G);
        for (int i = 0; i < G; ++i) g[i] = h.top_derivative(i / double(G - 1));
        double best = 0.0;
        for (int gap = 1; gap < G; ++gap) {
            const double w = std::pow(gap / double(G - 1), h.exponent());
            double m = 0.0;
            for (int i = 0; i + gap < G; ++i) m = std::max(m, std::abs(g[i + gap] - g[i]));
            best = std::max(best, m / w);
        }
        EXPECT_LE(best, 1.01) << beta;
    }
}

TEST(HolderTruth, PrimitiveAndDerivativeConsistent) {
    const auto h = make_holder_truth(1.5, 1.0, 6);
    for (double x : random_points(20, 4)) {
        EXPECT_NEAR(h.primitive(x), volterra_apply_numeric([&](double t) { return h(t); }, x), 1e-10);
        const double e = 1e-6;
        EXPECT_NEAR((h(x + e) - h(x - e)) / (2 * e), h.top_derivative(x), 1e-6);
    }
}
