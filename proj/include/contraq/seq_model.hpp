#ifndef CONTRAQ_SEQ_MODEL_HPP
#define CONTRAQ_SEQ_MODEL_HPP

/** @file
 * Gaussian sequence white-noise model Y_i = kappa_i f_i + n^{-1/2} Z_i with
 * product Gaussian priors and their exact conjugate posteriors.
 *
 * Infinite sequences are an explicit head of N coordinates plus an analytic
 * tail of the form amp * i^{-a} * exp(-b * i^s); every sum over the tail is
 * carried out in closed form with a certified remainder bound.
 */

#include <cassert>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "contraq/core.hpp"

namespace contraq {

// ---------------------------------------------------------------------------
// Analytic term shapes
// ---------------------------------------------------------------------------

/// The term amp * i^{-a} * exp(-b * i^s).
struct PowerExpShape {
    double amp = 0.0;
    double a = 0.0;
    double b = 0.0;
    double s = 1.0;

    double operator()(double i) const {
        if (amp == 0.0) return 0.0;
        double v = amp * std::pow(i, -a);
        if (b != 0.0) v *= std::exp(-b * std::pow(i, s));
        return v;
    }
    bool is_zero() const { return amp == 0.0; }
};

inline PowerExpShape operator*(const PowerExpShape& x, const PowerExpShape& y) {
    PowerExpShape r;
    r.amp = x.amp * y.amp;
    r.a = x.a + y.a;
    if (x.b == 0.0) {
        r.b = y.b;
        r.s = y.s;
    } else if (y.b == 0.0) {
        r.b = x.b;
        r.s = x.s;
    } else if (x.s == y.s) {
        r.b = x.b + y.b;
        r.s = x.s;
    } else {
        throw std::invalid_argument("cannot combine stretched exponentials of different powers");
    }
    return r;
}

/// Sum of the shape over i > N.
inline TailSum tail_sum(const PowerExpShape& t, std::size_t N) {
    if (t.amp == 0.0) return {};
    if (t.b == 0.0) {
        auto r = power_tail_sum(t.a, N);
        return {t.amp * r.value, std::abs(t.amp) * r.bound};
    }
    if (t.b < 0.0) throw DivergentNorm("tail grows exponentially");
    return stretched_exp_tail_sum(t.amp, t.a, t.b, t.s, N);
}

// ---------------------------------------------------------------------------
// Operator
// ---------------------------------------------------------------------------

/// Singular values of the forward operator, pinned to their upper envelope.
struct IllPosedSpec {
    enum class Kind { Mild, Severe };
    Kind kind = Kind::Mild;
    double p = 1.0;
    double C = 1.0;
    double gamma = 1.0;

    static IllPosedSpec mild(double p, double C = 1.0) {
        if (p < 0.0 || C < 1.0) throw std::invalid_argument("mild spec needs p >= 0 and C >= 1");
        return {Kind::Mild, p, C, 0.0};
    }
    static IllPosedSpec severe(double gamma, double p) {
        if (gamma <= 0.0 || p < 1.0)
            throw std::invalid_argument("severe spec needs gamma > 0 and p >= 1");
        return {Kind::Severe, p, 1.0, gamma};
    }

    /// kappa_i as a term shape (used for analytic tails).
    PowerExpShape shape() const {
        if (kind == Kind::Mild) return {C, p, 0.0, 1.0};
        return {1.0, 0.0, gamma, p};
    }
};

inline double kappa(const IllPosedSpec& spec, std::size_t i) {
    assert(i >= 1);
    const double x = static_cast<double>(i);
    if (spec.kind == IllPosedSpec::Kind::Mild) return spec.C * std::pow(x, -spec.p);
    return std::exp(-spec.gamma * std::pow(x, spec.p));
}

// ---------------------------------------------------------------------------
// Sequences
// ---------------------------------------------------------------------------

/// Explicit head f_1..f_N plus analytic tail for i > N.
class CoefficientSequence {
  public:
    CoefficientSequence() : head_(1, 0.0) {}

    explicit CoefficientSequence(std::vector<double> head, PowerExpShape tail = {})
        : head_(std::move(head)), tail_(tail) {
        if (head_.empty()) throw std::invalid_argument("sequence needs N >= 1");
        if (!tail_.is_zero() && tail_.b == 0.0 && !(tail_.a > 0.5))
            throw DivergentNorm("power-decay tail exponent must exceed 1/2");
    }

    /// amp * i^{-exponent} for every i, with the matching power tail.
    static CoefficientSequence power_law(double amp, double exponent, std::size_t N) {
        std::vector<double> h(N);
        for (std::size_t i = 1; i <= N; ++i) h[i - 1] = amp * std::pow(static_cast<double>(i), -exponent);
        return CoefficientSequence(std::move(h), PowerExpShape{amp, exponent, 0.0, 1.0});
    }

    static CoefficientSequence zeros(std::size_t N) { return CoefficientSequence(std::vector<double>(N, 0.0)); }

    std::size_t size() const { return head_.size(); }
    std::span<const double> head() const { return head_; }
    const PowerExpShape& tail() const { return tail_; }

    /// f_i for any i >= 1.
    double operator[](std::size_t i) const {
        assert(i >= 1);
        if (i <= head_.size()) return head_[i - 1];
        return tail_(static_cast<double>(i));
    }

    /// Sum over i > N of f_i^2 i^{w}.
    TailSum tail_square(double w = 0.0) const {
        if (tail_.is_zero()) return {};
        PowerExpShape sq = tail_ * tail_;
        sq.a -= w;
        if (sq.b == 0.0 && !(sq.a > 1.0))
            throw DivergentNorm("weighted tail does not converge");
        return tail_sum(sq, head_.size());
    }

  private:
    std::vector<double> head_;
    PowerExpShape tail_{};
};

struct NormValue {
    double value = 0.0;
    double remainder_bound = 0.0;
};

/// sqrt(sum f_i^2 i^{2 beta}) with the analytic tail folded in.
inline NormValue sobolev_norm_certified(const CoefficientSequence& f, double beta) {
    long double head = 0.0L;
    const auto h = f.head();
    for (std::size_t i = 0; i < h.size(); ++i)
        head += static_cast<long double>(h[i]) * h[i] * std::pow(static_cast<long double>(i + 1), 2.0L * beta);
    const TailSum t = f.tail_square(2.0 * beta);
    const double sq = static_cast<double>(head) + t.value;
    NormValue r;
    r.value = std::sqrt(sq);
    r.remainder_bound = sq > 0.0 ? t.bound / (2.0 * r.value) : std::sqrt(t.bound);
    return r;
}

inline double sobolev_norm(const CoefficientSequence& f, double beta) {
    return sobolev_norm_certified(f, beta).value;
}

inline double l2_norm(const CoefficientSequence& f) { return sobolev_norm(f, 0.0); }

/// Canonical truth A * i^{-beta-1/2-eta}, scaled to Sobolev radius `radius`.
inline CoefficientSequence make_truth(double beta, double radius, double eta, std::size_t N) {
    if (!(eta > 0.0)) throw std::invalid_argument("make_truth needs eta > 0");
    if (radius == 0.0) return CoefficientSequence::zeros(N);
    const double exponent = beta + 0.5 + eta;
    const auto unit = CoefficientSequence::power_law(1.0, exponent, N);
    const double amp = radius / sobolev_norm(unit, beta);
    return CoefficientSequence::power_law(amp, exponent, N);
}

/// Coordinates of K f: kappa_i f_i, with the tail shape carried through.
inline CoefficientSequence apply_operator(const CoefficientSequence& f, const IllPosedSpec& spec) {
    std::vector<double> h(f.head().begin(), f.head().end());
    for (std::size_t i = 0; i < h.size(); ++i) h[i] *= kappa(spec, i + 1);
    return CoefficientSequence(std::move(h), f.tail() * spec.shape());
}

/// Squared l2 distance including both analytic tails.
inline double distance_sq(const CoefficientSequence& x, const CoefficientSequence& y) {
    const std::size_t N = std::max(x.size(), y.size());
    long double acc = 0.0L;
    for (std::size_t i = 1; i <= N; ++i) {
        const long double d = static_cast<long double>(x[i]) - y[i];
        acc += d * d;
    }
    const PowerExpShape& tx = x.tail();
    const PowerExpShape& ty = y.tail();
    double tail = 0.0;
    if (tx.a == ty.a && tx.b == ty.b && (tx.s == ty.s || tx.b == 0.0)) {
        PowerExpShape d = tx;
        d.amp = tx.amp - ty.amp;
        tail = tail_sum(d * d, N).value;
    } else {
        tail = tail_sum(tx * tx, N).value + tail_sum(ty * ty, N).value - 2.0 * tail_sum(tx * ty, N).value;
    }
    return static_cast<double>(acc) + tail;
}

// ---------------------------------------------------------------------------
// Prior
// ---------------------------------------------------------------------------

/// Product prior  N(0, lambda_i)  over coordinates, optionally truncated.
struct GaussianProductPrior {
    enum class Style { Mild, Severe };
    Style style = Style::Mild;
    double alpha = 1.0;
    double xi = 0.0;
    double p_exp = 1.0;
    std::optional<std::size_t> truncation;
    double scale = 1.0;

    /// lambda_i = scale * i^{-1-2 alpha}
    static GaussianProductPrior mild(double alpha, double scale = 1.0,
                                     std::optional<std::size_t> truncation = std::nullopt) {
        return {Style::Mild, alpha, 0.0, 1.0, truncation, scale};
    }
    /// lambda_i = scale * i^{-alpha} exp(-xi i^p)
    static GaussianProductPrior severe(double alpha, double xi, double p,
                                       std::optional<std::size_t> truncation, double scale = 1.0) {
        return {Style::Severe, alpha, xi, p, truncation, scale};
    }

    double variance(std::size_t i) const {
        if (truncation && i > *truncation) return 0.0;
        const double x = static_cast<double>(i);
        if (style == Style::Mild) return scale * std::pow(x, -1.0 - 2.0 * alpha);
        return scale * std::pow(x, -alpha) * std::exp(-xi * std::pow(x, p_exp));
    }

    PowerExpShape shape() const {
        if (style == Style::Mild) return {scale, 1.0 + 2.0 * alpha, 0.0, 1.0};
        return {scale, alpha, xi, p_exp};
    }

    /// Sum over i > N of lambda_i (times kappa_i^2 when `spec` is given).
    TailSum variance_tail(std::size_t N, const IllPosedSpec* spec = nullptr) const {
        if (truncation && *truncation <= N) return {};
        PowerExpShape sh = shape();
        if (spec) sh = sh * (spec->shape() * spec->shape());
        if (!truncation) return tail_sum(sh, N);
        // truncated beyond the head: explicit finite sum
        TailSum r;
        for (std::size_t i = N + 1; i <= *truncation; ++i) r.value += sh(static_cast<double>(i));
        return r;
    }
};

// ---------------------------------------------------------------------------
// Observation and posterior
// ---------------------------------------------------------------------------

struct SequenceObservation {
    std::vector<double> y;
    double n = 1.0;
    std::uint64_t seed = 0;
};

/// y_i = kappa_i f0_i + n^{-1/2} z_i for an explicit noise vector.
inline SequenceObservation observe_with_noise(const CoefficientSequence& f0, const IllPosedSpec& spec,
                                              double n, std::span<const double> z) {
    SequenceObservation obs;
    obs.n = n;
    obs.y.resize(z.size());
    const double sd = 1.0 / std::sqrt(n);
    for (std::size_t i = 1; i <= z.size(); ++i) obs.y[i - 1] = kappa(spec, i) * f0[i] + sd * z[i - 1];
    return obs;
}

inline SequenceObservation observe(const CoefficientSequence& f0, const IllPosedSpec& spec, double n,
                                   std::size_t N, std::uint64_t seed) {
    std::vector<double> z(N);
    Rng rng = make_rng(seed);
    fill_normal(rng, z);
    auto obs = observe_with_noise(f0, spec, n, z);
    obs.seed = seed;
    return obs;
}

enum class Space { FSpace, KFSpace };

/// Independent Gaussian marginals; beyond the head the posterior equals the prior.
struct DiagonalGaussianPosterior {
    std::vector<double> mean;
    std::vector<double> var;
    Space space = Space::KFSpace;
    TailSum tail_var;  // sum of variances beyond the head
};

inline DiagonalGaussianPosterior posterior(const GaussianProductPrior& prior, const SequenceObservation& obs,
                                           const IllPosedSpec& spec, Space space) {
    const std::size_t N = obs.y.size();
    if (prior.truncation && *prior.truncation > N)
        throw std::invalid_argument("observation shorter than prior truncation");
    DiagonalGaussianPosterior post;
    post.space = space;
    post.mean.resize(N);
    post.var.resize(N);
    const double n = obs.n;
    for (std::size_t i = 1; i <= N; ++i) {
        const double lam = prior.variance(i);
        const double k = kappa(spec, i);
        const double lk2 = lam * k * k;
        // (Kf)_i | Y ~ N(n lk2/(1+n lk2) y_i, lk2/(1+n lk2))
        const double shrink = n * lk2 / (1.0 + n * lk2);
        double m = shrink * obs.y[i - 1];
        double v = lk2 / (1.0 + n * lk2);
        if (space == Space::FSpace) {
            if (lam == 0.0) {
                m = 0.0;
                v = 0.0;
            } else if (k > 0.0) {
                m /= k;
                v /= k * k;
            } else {
                m = 0.0;
                v = lam;
            }
        }
        post.mean[i - 1] = m;
        post.var[i - 1] = v;
    }
    post.tail_var = prior.variance_tail(N, space == Space::KFSpace ? &spec : nullptr);
    return post;
}

/// E_post ||Kf - Kf0||^2 = ||mean - Kf0||^2 + sum var, tails included.
inline double posterior_risk_direct(const DiagonalGaussianPosterior& post, const CoefficientSequence& f0,
                                    const IllPosedSpec& spec) {
    if (post.space != Space::KFSpace) throw std::invalid_argument("posterior_risk_direct needs KFSpace");
    const std::size_t N = post.mean.size();
    long double bias = 0.0L, spread = 0.0L;
    for (std::size_t i = 1; i <= N; ++i) {
        const long double d = post.mean[i - 1] - kappa(spec, i) * f0[i];
        bias += d * d;
        spread += post.var[i - 1];
    }
    PowerExpShape kf0 = f0.tail() * spec.shape();
    double tail_bias = 0.0;
    // f0 may have an explicit head longer than the posterior
    for (std::size_t i = N + 1; i <= f0.size(); ++i) {
        const double v = kappa(spec, i) * f0[i];
        tail_bias += v * v;
    }
    tail_bias += tail_sum(kf0 * kf0, std::max(N, f0.size())).value;
    return static_cast<double>(bias + spread) + tail_bias + post.tail_var.value;
}

struct RiskComponents {
    double bias_sum = 0.0;
    double s_sum = 0.0;
    double t_sum = 0.0;
};

/// Bias, sum s_{i,n} and sum t_{i,n} of the expected posterior risk for a
/// truncated prior:  s = lk2/(1+n lk2),  t = n lk2^2/(1+n lk2)^2.
inline RiskComponents expected_risk_components(const GaussianProductPrior& prior, const CoefficientSequence& f0,
                                               const IllPosedSpec& spec, double n) {
    if (!prior.truncation) throw std::invalid_argument("risk components need a truncated prior");
    const std::size_t k = *prior.truncation;
    RiskComponents r;
    long double bias = 0.0L, ss = 0.0L, ts = 0.0L;
    const std::size_t N = std::max(k, f0.size());
    for (std::size_t i = 1; i <= N; ++i) {
        const double kf = kappa(spec, i) * f0[i];
        if (i <= k) {
            const double lk2 = prior.variance(i) * kappa(spec, i) * kappa(spec, i);
            const double d = 1.0 + n * lk2;
            bias += kf * kf / (d * d);
            ss += lk2 / d;
            ts += n * lk2 * lk2 / (d * d);
        } else {
            bias += static_cast<long double>(kf) * kf;
        }
    }
    PowerExpShape kf0 = f0.tail() * spec.shape();
    r.bias_sum = static_cast<double>(bias) + tail_sum(kf0 * kf0, N).value;
    r.s_sum = static_cast<double>(ss);
    r.t_sum = static_cast<double>(ts);
    return r;
}

/// Norms ||f - truth|| of `draws` posterior samples; the tail beyond the head
/// contributes its expectation.
inline std::vector<double> posterior_distance_draws(const DiagonalGaussianPosterior& post,
                                                    const CoefficientSequence& truth, std::size_t draws,
                                                    std::uint64_t seed) {
    const std::size_t N = post.mean.size();
    std::vector<double> diff(N), sd(N);
    for (std::size_t i = 1; i <= N; ++i) {
        diff[i - 1] = post.mean[i - 1] - truth[i];
        sd[i - 1] = std::sqrt(post.var[i - 1]);
    }
    double tail = post.tail_var.value;
    for (std::size_t i = N + 1; i <= truth.size(); ++i) tail += truth[i] * truth[i];
    tail += tail_sum(truth.tail() * truth.tail(), std::max(N, truth.size())).value;

    Rng rng = make_rng(seed);
    Normal z(0.0, 1.0);
    std::vector<double> out(draws);
    for (std::size_t d = 0; d < draws; ++d) {
        double acc = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double e = diff[i] + sd[i] * z(rng);
            acc += e * e;
        }
        out[d] = std::sqrt(acc + tail);
    }
    return out;
}

/// Empirical `level`-quantile of ||f - truth|| under the posterior.
inline double credible_radius(const DiagonalGaussianPosterior& post, const CoefficientSequence& truth,
                              double level, std::size_t draws, std::uint64_t seed) {
    if (draws < 100) throw std::invalid_argument("credible_radius needs at least 100 draws");
    return empirical_quantile(posterior_distance_draws(post, truth, draws, seed), level);
}

/// Kullback-Leibler divergence between white-noise laws: (n/2)||kf1 - kf2||^2.
inline double kl_divergence(const CoefficientSequence& kf1, const CoefficientSequence& kf2, double n) {
    return 0.5 * n * distance_sq(kf1, kf2);
}

}  // namespace contraq

#endif  // CONTRAQ_SEQ_MODEL_HPP
