#ifndef CONTRAQ_CORE_HPP
#define CONTRAQ_CORE_HPP

/** @file
 * Shared numerics for the contraction laboratory: error types, seeded
 * random streams, power-law tail sums, quadrature rules and quantiles.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <boost/random/normal_distribution.hpp>

namespace contraq {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DivergentNorm : Error {
    using Error::Error;
};
struct HypothesisUnmet : Error {
    using Error::Error;
};
struct TruncationTooCoarse : Error {
    using Error::Error;
};
struct ChainViolation : Error {
    std::vector<double> witness;
    ChainViolation(const std::string& what, std::vector<double> g)
        : Error(what), witness(std::move(g)) {}
};
struct QuadratureNonconvergence : Error {
    using Error::Error;
};
struct GridTooCoarse : Error {
    using Error::Error;
};
struct SingularSystem : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Regimes
// ---------------------------------------------------------------------------

enum class Regime { MildSeq, SevereSeq, Volterra, Deconv };

inline std::string_view to_string(Regime r) {
    switch (r) {
    case Regime::MildSeq: return "MildSeq";
    case Regime::SevereSeq: return "SevereSeq";
    case Regime::Volterra: return "Volterra";
    case Regime::Deconv: return "Deconv";
    }
    return "?";
}

inline Regime parse_regime(std::string_view s) {
    if (s == "MildSeq") return Regime::MildSeq;
    if (s == "SevereSeq") return Regime::SevereSeq;
    if (s == "Volterra") return Regime::Volterra;
    if (s == "Deconv") return Regime::Deconv;
    throw std::invalid_argument("unknown regime '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// Purpose tags; every (seed, replication, purpose, cell) tuple owns one stream.
enum class Stream : std::uint64_t {
    Observation = 1,
    PosteriorDraw = 2,
    PriorDraw = 3,
    ModulusChain = 4,
    TailMC = 5,
    SmallBallMC = 6,
    Calibration = 7,
    Generic = 8,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t replication,
                                 Stream purpose, std::uint64_t cell = 0) {
    std::uint64_t h = splitmix64(master);
    h = splitmix64(h ^ (replication * 0xd1b54a32d192ed03ULL));
    h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
    return splitmix64(h ^ (cell * 0x8cb92ba72f3d8dd7ULL));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

/// Standard normal sampler (ziggurat).
using Normal = boost::random::normal_distribution<double>;

/// Fills `out` with independent standard normals.
inline void fill_normal(Rng& rng, std::span<double> out) {
    Normal z(0.0, 1.0);
    for (double& v : out) v = z(rng);
}

// ---------------------------------------------------------------------------
// Series tails
// ---------------------------------------------------------------------------

/// A summed tail together with a certified bound on its truncation error.
struct TailSum {
    double value = 0.0;
    double bound = 0.0;
};

/// Sum over i > N of i^(-s), s > 1, by Euler-Maclaurin at a shifted start.
inline TailSum power_tail_sum(double s, std::size_t N) {
    if (!(s > 1.0)) throw DivergentNorm("power tail with exponent <= 1 diverges");
    constexpr std::size_t kStart = 32;
    double explicit_part = 0.0;
    std::size_t start = N;
    if (start < kStart) {
        for (std::size_t i = start + 1; i <= kStart; ++i)
            explicit_part += std::pow(static_cast<double>(i), -s);
        start = kStart;
    }
    const double x = static_cast<double>(start);
    // B_2 .. B_10 and B_12 (the latter only bounds the remainder).
    constexpr std::array<double, 5> bern{1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0,
                                         5.0 / 66.0};
    double sum = std::pow(x, 1.0 - s) / (s - 1.0) - 0.5 * std::pow(x, -s);
    double rising = s;  // (s)_{2k-1}
    double fact = 2.0;  // (2k)!
    for (std::size_t k = 1; k <= bern.size(); ++k) {
        sum += bern[k - 1] / fact * rising * std::pow(x, -s - 2.0 * k + 1.0);
        rising *= (s + 2.0 * k - 1.0) * (s + 2.0 * k);
        fact *= (2.0 * k + 1.0) * (2.0 * k + 2.0);
    }
    const double next = 691.0 / 2730.0 / fact * rising * std::pow(x, -s - 11.0);
    TailSum out;
    out.value = explicit_part + sum;
    out.bound = std::abs(next) + 4.0 * std::numeric_limits<double>::epsilon() * out.value;
    return out;
}

/// Sum over i > N of amp * i^(-a) * exp(-b * i^s) for b > 0 by direct
/// summation; stops once terms are decreasing geometrically and negligible.
inline TailSum stretched_exp_tail_sum(double amp, double a, double b, double s, std::size_t N) {
    TailSum out;
    if (amp == 0.0) return out;
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t i = N + 1;; ++i) {
        const double x = static_cast<double>(i);
        const double term = amp * std::pow(x, -a) * std::exp(-b * std::pow(x, s));
        out.value += term;
        if (term < prev && prev < std::numeric_limits<double>::infinity()) {
            const double ratio = term / prev;
            if (ratio < 0.999 && term <= 1e-18 * out.value * (1.0 - ratio)) {
                out.bound = term * ratio / (1.0 - ratio);
                return out;
            }
        }
        if (term == 0.0) return out;
        prev = term;
        if (i > N + 50'000'000) throw DivergentNorm("stretched exponential tail did not settle");
    }
}

// ---------------------------------------------------------------------------
// Order statistics and summaries
// ---------------------------------------------------------------------------

/// Empirical quantile as the inverse of the empirical CDF; level 0 gives the
/// minimum and level 1 the maximum.
inline double empirical_quantile(std::vector<double> values, double level) {
    if (values.empty()) throw std::invalid_argument("quantile of empty sample");
    level = std::clamp(level, 0.0, 1.0);
    const auto m = values.size();
    std::size_t k = static_cast<std::size_t>(std::ceil(level * static_cast<double>(m)));
    k = k == 0 ? 0 : k - 1;
    k = std::min(k, m - 1);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
    return values[k];
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

inline MeanSe mean_and_se(std::span<const double> x) {
    MeanSe r;
    if (x.empty()) return r;
    double s = 0.0;
    for (double v : x) s += v;
    r.mean = s / static_cast<double>(x.size());
    if (x.size() > 1) {
        double ss = 0.0;
        for (double v : x) ss += (v - r.mean) * (v - r.mean);
        r.se = std::sqrt(ss / static_cast<double>(x.size() - 1) / static_cast<double>(x.size()));
    }
    return r;
}

/// Monte Carlo probability estimate.
struct McEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
    std::size_t draws = 0;
};

inline McEstimate bernoulli_estimate(std::size_t hits, std::size_t draws) {
    McEstimate e;
    e.draws = draws;
    if (draws == 0) return e;
    e.estimate = static_cast<double>(hits) / static_cast<double>(draws);
    e.stderr_ = std::sqrt(e.estimate * (1.0 - e.estimate) / static_cast<double>(draws));
    return e;
}

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

inline double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// log Phi(x), accurate far into the lower tail.
inline double log_normal_cdf(double x) {
    if (x > -30.0) return std::log(normal_cdf(x));
    const double a = -x;
    const double a2 = a * a;
    const double series = 1.0 - 1.0 / a2 + 3.0 / (a2 * a2) - 15.0 / (a2 * a2 * a2);
    return -0.5 * a2 - std::log(a * std::sqrt(2.0 * std::numbers::pi)) + std::log(series);
}

inline double log_sum_exp(std::span<const double> x) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : x) m = std::max(m, v);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

// ---------------------------------------------------------------------------
// Gauss-Legendre quadrature
// ---------------------------------------------------------------------------

template <int N>
struct GaussRule {
    std::array<double, N> nodes{};
    std::array<double, N> weights{};
};

/// N-point Gauss-Legendre rule on [-1, 1] (Newton on P_N).
template <int N>
const GaussRule<N>& gauss_legendre() {
    static const GaussRule<N> rule = [] {
        GaussRule<N> r;
        for (int i = 0; i < N; ++i) {
            double x = std::cos(std::numbers::pi * (i + 0.75) / (N + 0.5));
            double dp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = x;
                for (int k = 2; k <= N; ++k) {
                    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = N * (x * p1 - p0) / (x * x - 1.0);
                const double dx = p1 / dp;
                x -= dx;
                if (std::abs(dx) < 1e-16) break;
            }
            r.nodes[i] = x;
            r.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        return r;
    }();
    return rule;
}

/// Composite Gauss-Legendre over [a, b] split into `panels` equal panels.
template <int N = 16, class F>
double composite_gauss(F&& f, double a, double b, std::size_t panels) {
    const auto& rule = gauss_legendre<N>();
    const double h = (b - a) / static_cast<double>(panels);
    double total = 0.0;
    for (std::size_t p = 0; p < panels; ++p) {
        const double lo = a + h * static_cast<double>(p);
        const double mid = lo + 0.5 * h;
        double s = 0.0;
        for (int i = 0; i < N; ++i) s += rule.weights[i] * f(mid + 0.5 * h * rule.nodes[i]);
        total += 0.5 * h * s;
    }
    return total;
}

inline std::vector<double> linspace(double a, double b, std::size_t n) {
    std::vector<double> x(n);
    if (n == 1) {
        x[0] = a;
        return x;
    }
    for (std::size_t i = 0; i < n; ++i)
        x[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    return x;
}

inline std::vector<double> logspace(double a, double b, std::size_t n) {
    auto x = linspace(std::log(a), std::log(b), n);
    for (double& v : x) v = std::exp(v);
    return x;
}

}  // namespace contraq

#endif  // CONTRAQ_CORE_HPP
