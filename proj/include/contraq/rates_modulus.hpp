#ifndef CONTRAQ_RATES_MODULUS_HPP
#define CONTRAQ_RATES_MODULUS_HPP

/** @file
 * Tail sets, modulus-of-continuity bounds, rate exponents, Lambert-W
 * truncation levels and Monte Carlo checks of the prior-mass bounds used to
 * convert direct contraction rates into inverse ones.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

#include "contraq/core.hpp"
#include "contraq/seq_model.hpp"

namespace contraq {

// ---------------------------------------------------------------------------
// Tail sets and the modulus bound
// ---------------------------------------------------------------------------

/// { f : sum_{i > k_n} f_i^2 <= c rho_n^2 }
struct TailSet {
    std::size_t k_n = 1;
    double rho_n = 1.0;
    double c = 0.0;

    double radius_sq() const { return c * rho_n * rho_n; }

    double tail_mass(std::span<const double> head) const {
        double s = 0.0;
        for (std::size_t i = k_n; i < head.size(); ++i) s += head[i] * head[i];
        return s;
    }

    bool contains(const CoefficientSequence& f) const {
        double s = 0.0;
        for (std::size_t i = k_n + 1; i <= f.size(); ++i) s += f[i] * f[i];
        s += f.tail_square().value;
        return s <= radius_sq();
    }
};

struct ModulusBound {
    double inversion_term = 0.0;  // delta / kappa_{k_n}
    double tail_term = 0.0;       // sqrt(c) rho_n
    double bias_term = 0.0;       // 2 ||f0||_s k_n^{-beta}

    double total() const { return inversion_term + tail_term + bias_term; }
};

inline ModulusBound modulus_upper_bound(const TailSet& ts, const IllPosedSpec& spec, double f0_norm_s,
                                        double beta, double delta) {
    if (delta < 0.0) throw std::invalid_argument("modulus bound needs delta >= 0");
    ModulusBound b;
    b.inversion_term = delta / kappa(spec, ts.k_n);
    b.tail_term = std::sqrt(ts.c) * ts.rho_n;
    b.bias_term = 2.0 * f0_norm_s * std::pow(static_cast<double>(ts.k_n), -beta);
    return b;
}

/// kappa_{k}^{-2} ||K g||^2 + c rho^2 - ||g||^2 for a finite vector g.
inline double modulus_chain_slack(const TailSet& ts, const IllPosedSpec& spec, std::span<const double> g) {
    long double g2 = 0.0L, kg2 = 0.0L;
    for (std::size_t i = 1; i <= g.size(); ++i) {
        const double k = kappa(spec, i);
        g2 += static_cast<long double>(g[i - 1]) * g[i - 1];
        kg2 += static_cast<long double>(k * g[i - 1]) * (k * g[i - 1]);
    }
    const double kk = kappa(spec, ts.k_n);
    return static_cast<double>(kg2 / (static_cast<long double>(kk) * kk)) + ts.radius_sq() - static_cast<double>(g2);
}

struct ChainReport {
    std::size_t samples = 0;
    std::size_t violations = 0;
    double min_slack = std::numeric_limits<double>::infinity();
    double max_slack = -std::numeric_limits<double>::infinity();
};

/// Draws random g in the tail set and checks
/// ||g||^2 <= kappa_{k_n}^{-2} ||K g||^2 + c rho_n^2 for each.
inline ChainReport check_modulus_chain(const TailSet& ts, const IllPosedSpec& spec, std::size_t samples,
                                       std::uint64_t seed) {
    ChainReport rep;
    Rng rng = make_rng(seed);
    Normal z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t dim = ts.k_n + 32;
    std::vector<double> g(dim);
    for (std::size_t s = 0; s < samples; ++s) {
        const double head_scale = std::exp(4.0 * (u(rng) - 0.5));
        double tail2 = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            g[i] = z(rng);
            if (i < ts.k_n)
                g[i] *= head_scale;
            else
                tail2 += g[i] * g[i];
        }
        // scale the tail to a random fraction of the allowed mass (boundary included)
        const double frac = s % 10 == 0 ? 1.0 : u(rng);
        const double target = frac * ts.radius_sq();
        const double scale = tail2 > 0.0 ? std::sqrt(target / tail2) : 0.0;
        for (std::size_t i = ts.k_n; i < dim; ++i) g[i] *= scale;

        const double slack = modulus_chain_slack(ts, spec, g);
        double g2 = 0.0;
        for (double v : g) g2 += v * v;
        ++rep.samples;
        rep.min_slack = std::min(rep.min_slack, slack);
        rep.max_slack = std::max(rep.max_slack, slack);
        if (slack < -1e-12 * std::max(1.0, g2)) {
            ++rep.violations;
            std::ostringstream msg;
            msg << "modulus chain violated with slack " << slack;
            throw ChainViolation(msg.str(), g);
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Prior mass of the tail-set complement
// ---------------------------------------------------------------------------

/// exp(-(c/8) rho^2 k^{1+2 alpha}); requires k^{2 alpha} >= 2(1+2 alpha)/(alpha c rho^2).
inline double prior_mass_tail_bound(double alpha, std::size_t k_n, double rho_n, double c) {
    const double k = static_cast<double>(k_n);
    const double need = 2.0 * (1.0 + 2.0 * alpha) / (alpha * c * rho_n * rho_n);
    if (!(alpha > 0.0) || !(c > 0.0) || std::pow(k, 2.0 * alpha) < need) {
        std::ostringstream msg;
        msg << "tail-mass bound hypothesis unmet: k^{2a} = " << std::pow(k, 2.0 * alpha) << " < " << need;
        throw HypothesisUnmet(msg.str());
    }
    return std::exp(-(c / 8.0) * rho_n * rho_n * std::pow(k, 1.0 + 2.0 * alpha));
}

/// Monte Carlo estimate of Pr( sum_{i > k_n} lambda_i W_i^2 > c rho_n^2 ).
/// Coordinates beyond N contribute their expectation.
inline McEstimate prior_mass_tail_mc(const GaussianProductPrior& prior, const TailSet& ts, std::size_t draws,
                                     std::size_t N, std::uint64_t seed) {
    if (N < ts.k_n) throw std::invalid_argument("prior_mass_tail_mc needs N >= k_n");
    const bool has_tail_mass = !prior.truncation || *prior.truncation > ts.k_n;
    if (!has_tail_mass) return bernoulli_estimate(0, draws);
    if (ts.c == 0.0) return bernoulli_estimate(draws, draws);

    const TailSum omitted = prior.variance_tail(N);
    if (omitted.value > 1e-3 * ts.radius_sq()) {
        std::ostringstream msg;
        msg << "omitted prior tail " << omitted.value << " exceeds 1e-3 * c rho^2";
        throw TruncationTooCoarse(msg.str());
    }
    const std::size_t last = prior.truncation ? std::min(N, *prior.truncation) : N;
    std::vector<double> lam;
    for (std::size_t i = ts.k_n + 1; i <= last; ++i) lam.push_back(prior.variance(i));
    const double threshold = ts.radius_sq() - omitted.value;

    Rng rng = make_rng(seed);
    Normal z(0.0, 1.0);
    std::size_t hits = 0;
    for (std::size_t d = 0; d < draws; ++d) {
        double s = 0.0;
        for (double l : lam) {
            const double w = z(rng);
            s += l * w * w;
        }
        if (s > threshold) ++hits;
    }
    return bernoulli_estimate(hits, draws);
}

struct SmallBallEstimate {
    McEstimate mc;
    bool low_confidence = false;
    /// e = (1 + 2a - 2 min(a,b)) / (min(a,b) + p); the bound is C1 exp(-C2 eps^{-e}).
    double lemma_exponent = 0.0;
    /// -log(estimate) / eps^{-e}: the C2 this estimate implies with C1 = 1.
    double implied_c2 = 0.0;
};

/// Monte Carlo prior mass of { ||K f - K f0|| <= eps } under a mild prior.
inline SmallBallEstimate kl_smallball_mc(const GaussianProductPrior& prior, const CoefficientSequence& f0,
                                         double beta, const IllPosedSpec& spec, double epsilon, std::size_t N,
                                         std::size_t draws, std::uint64_t seed) {
    SmallBallEstimate out;
    const double ab = std::min(prior.alpha, beta);
    out.lemma_exponent = (1.0 + 2.0 * prior.alpha - 2.0 * ab) / (ab + spec.p);

    std::vector<double> sd(N), target(N);
    for (std::size_t i = 1; i <= N; ++i) {
        const double k = kappa(spec, i);
        sd[i - 1] = k * std::sqrt(prior.variance(i));
        target[i - 1] = k * f0[i];
    }
    double omitted = prior.variance_tail(N, &spec).value;
    for (std::size_t i = N + 1; i <= f0.size(); ++i) omitted += std::pow(kappa(spec, i) * f0[i], 2);
    const PowerExpShape kf0 = f0.tail() * spec.shape();
    omitted += tail_sum(kf0 * kf0, std::max(N, f0.size())).value;
    const double eps2 = epsilon * epsilon - omitted;

    Rng rng = make_rng(seed);
    Normal z(0.0, 1.0);
    std::size_t hits = 0;
    for (std::size_t d = 0; d < draws; ++d) {
        double s = 0.0;
        bool inside = eps2 >= 0.0;
        for (std::size_t i = 0; i < N && inside; ++i) {
            const double e = sd[i] * z(rng) - target[i];
            s += e * e;
            if (s > eps2) inside = false;
        }
        if (inside) ++hits;
    }
    out.mc = bernoulli_estimate(hits, draws);
    out.low_confidence = out.mc.estimate * static_cast<double>(draws) < 100.0;
    out.implied_c2 = out.mc.estimate > 0.0 ? -std::log(out.mc.estimate) / std::pow(epsilon, -out.lemma_exponent)
                                           : std::numeric_limits<double>::infinity();
    return out;
}

// ---------------------------------------------------------------------------
// Lambert W and the severe truncation level
// ---------------------------------------------------------------------------

/// Principal branch W_0(x) for x >= 0 by Halley iteration.
inline double lambert_w(double x) {
    if (x < 0.0) throw std::invalid_argument("lambert_w: principal branch needs x >= 0");
    if (x == 0.0) return 0.0;
    if (std::isinf(x)) return x;
    const double l1 = std::log1p(x);
    double w = l1 * (1.0 - std::log1p(l1) / (2.0 + l1));
    for (int it = 0; it < 64; ++it) {
        const double ew = std::exp(w);
        const double f = w * ew - x;
        const double wp1 = w + 1.0;
        const double step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if (std::abs(step) <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(w)) break;
    }
    return w;
}

/// W_0(exp(log_x)) for arguments too large to exponentiate.
inline double lambert_w_of_log(double log_x) {
    if (log_x < 600.0) return lambert_w(std::exp(log_x));
    double w = log_x - std::log(log_x);
    for (int it = 0; it < 64; ++it) {
        const double step = (w + std::log(w) - log_x) / (1.0 + 1.0 / w);
        w -= step;
        if (std::abs(step) <= 4.0 * std::numeric_limits<double>::epsilon() * w) break;
    }
    return w;
}

/// Continuous root k of n k^{-alpha} exp(-(xi + 2 gamma) k^p) = 1.
inline double severe_k_n_continuous(double alpha, double xi, double gamma, double p, double n) {
    const double B = xi + 2.0 * gamma;
    if (!(B > 0.0)) throw std::invalid_argument("severe_k_n needs xi + 2 gamma > 0");
    if (!(n >= 2.0)) throw std::invalid_argument("severe_k_n needs n >= 2");
    if (alpha == 0.0) return std::pow(std::log(n) / B, 1.0 / p);
    const double c = p * B / alpha;
    const double w = lambert_w_of_log((p / alpha) * std::log(n) + std::log(c));
    return std::pow(w / c, 1.0 / p);
}

/// Integer truncation level: the continuous root rounded half up, at least 1.
inline std::size_t severe_k_n(double alpha, double xi, double gamma, double p, double n) {
    const double k = severe_k_n_continuous(alpha, xi, gamma, p, n);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(k + 0.5)));
}

// ---------------------------------------------------------------------------
// Rate exponents
// ---------------------------------------------------------------------------

struct RateParams {
    double alpha = 1.0;
    double beta = 1.0;
    double p = 1.0;
    double gamma = 1.0;
    double xi = 0.0;
    double t = 0.0;  // tail exponent of the prior on J (spline regime)
};

/// Rates n^{-exponent} (log n)^{log_power}; in the severe regime the inverse
/// rate is (log n)^{-inverse_exponent} and `inverse_is_logarithmic` is set.
struct RateExponents {
    double inverse_exponent = 0.0;
    double direct_exponent = 0.0;
    double inverse_log_power = 0.0;
    double direct_log_power = 0.0;
    bool inverse_is_logarithmic = false;
    Regime regime = Regime::MildSeq;
};

inline RateExponents rate_exponent(Regime regime, const RateParams& q) {
    RateExponents r;
    r.regime = regime;
    switch (regime) {
    case Regime::MildSeq: {
        const double ab = std::min(q.alpha, q.beta);
        const double den = 1.0 + 2.0 * q.alpha + 2.0 * q.p;
        r.inverse_exponent = ab / den;
        r.direct_exponent = (ab + q.p) / den;
        break;
    }
    case Regime::SevereSeq: {
        const double B = q.xi + 2.0 * q.gamma;
        r.inverse_exponent = q.beta / q.p;
        r.inverse_is_logarithmic = true;
        r.direct_exponent = q.gamma / B;
        r.direct_log_power = -q.beta / q.p + q.gamma * q.alpha / (q.p * B);
        break;
    }
    case Regime::Volterra: {
        const double den = 2.0 * q.beta + 3.0;
        r.inverse_exponent = q.beta / den;
        r.direct_exponent = (q.beta + 1.0) / den;
        r.inverse_log_power = 3.0 * std::max(1.0, q.t) * (q.beta + 1.0) / den;
        r.direct_log_power = std::max(1.0, q.t) * q.beta / (2.0 * q.beta + 1.0);
        break;
    }
    case Regime::Deconv: {
        const double den = 1.0 + 2.0 * q.beta + 2.0 * q.p;
        r.inverse_exponent = q.beta / den;
        r.direct_exponent = (q.beta + q.p) / den;
        r.inverse_log_power = std::numeric_limits<double>::quiet_NaN();
        r.direct_log_power = std::numeric_limits<double>::quiet_NaN();
        break;
    }
    }
    return r;
}

/// Modulus bound evaluated at delta = direct radius.
inline double implied_inverse_radius(const std::function<ModulusBound(double)>& bound_at, double direct_radius) {
    if (direct_radius < 0.0) throw std::invalid_argument("direct radius must be nonnegative");
    return bound_at(direct_radius).total();
}

}  // namespace contraq

#endif  // CONTRAQ_RATES_MODULUS_HPP
