#ifndef CONTRAQ_SPLINE_VOLTERRA_HPP
#define CONTRAQ_SPLINE_VOLTERRA_HPP

/** @file
 * Numerical differentiation: the Volterra operator Kf(x) = int_0^x f with a
 * B-spline prior whose Volterra image is an ordinary order-q spline.
 *
 * Conventions. Order-q B-splines (degree q-1) on the clamped uniform knot
 * vector of [0, 1] with m subintervals; J = m + q - 1. The lower-order
 * functions entering f are the order-(q-1) B-splines on the same breakpoints
 * rescaled by (q-1) / (J * support width), which turns
 *     B_j' = J (Bt_{j-1} - Bt_j),   Bt_0 = Bt_J = 0
 * into an exact identity. The first coefficient a_1 is pinned to 0 so that
 * Kf(0) = 0.
 */

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <queue>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "contraq/core.hpp"

namespace contraq {

// ---------------------------------------------------------------------------
// Basis
// ---------------------------------------------------------------------------

class BSplineBasis {
  public:
    static constexpr int kMaxOrder = 12;

    BSplineBasis(int q, int m) : q_(q), m_(m), J_(m + q - 1) {
        if (q < 1 || q > kMaxOrder) throw std::invalid_argument("B-spline order out of range");
        if (m < 1) throw std::invalid_argument("B-spline basis needs m >= 1");
        knots_.resize(static_cast<std::size_t>(J_ + q_));
        for (int i = 0; i < J_ + q_; ++i) {
            if (i < q_)
                knots_[i] = 0.0;
            else if (i >= J_)
                knots_[i] = 1.0;
            else
                knots_[i] = static_cast<double>(i - q_ + 1) / m_;
        }
    }

    static BSplineBasis with_dimension(int q, int J) { return BSplineBasis(q, J - q + 1); }

    int order() const { return q_; }
    int intervals() const { return m_; }
    int dimension() const { return J_; }
    const std::vector<double>& knots() const { return knots_; }

    /// Order-(q-1) clamped basis on the same breakpoints (J - 1 functions).
    BSplineBasis lower() const { return BSplineBasis(q_ - 1, m_); }

    /// Support width of function j (0-based).
    double support_width(int j) const { return knots_[j + q_] - knots_[j]; }

    /// Values of the q functions that can be nonzero at x; returns the
    /// 0-based index of the first one. x is clamped to [0, 1].
    int nonzero(double x, double* out) const {
        x = std::clamp(x, 0.0, 1.0);
        const int k = std::min(static_cast<int>(std::floor(x * m_)), m_ - 1);
        const int mu = q_ - 1 + k;
        std::array<double, kMaxOrder> left{}, right{};
        out[0] = 1.0;
        for (int j = 1; j < q_; ++j) {
            left[j] = x - knots_[mu + 1 - j];
            right[j] = knots_[mu + j] - x;
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                const double temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        return mu - q_ + 1;
    }

    /// Greville abscissae: x = sum_j xi_j B_j(x).
    std::vector<double> greville() const {
        std::vector<double> xi(J_);
        for (int j = 0; j < J_; ++j) {
            double s = 0.0;
            for (int r = 1; r < q_; ++r) s += knots_[j + r];
            xi[j] = q_ > 1 ? s / (q_ - 1) : 0.5 * (knots_[j] + knots_[j + 1]);
        }
        return xi;
    }

  private:
    int q_;
    int m_;
    int J_;
    std::vector<double> knots_;
};

/// B_{j,q}(x), j is 1-based.
inline double bspline_eval(const BSplineBasis& basis, int j, double x) {
    std::array<double, BSplineBasis::kMaxOrder> v{};
    const int first = basis.nonzero(x, v.data());
    const int r = j - 1 - first;
    return (r >= 0 && r < basis.order()) ? v[r] : 0.0;
}

/// Rescaled lower-order functions Bt_i (1-based, i = 1..J-1) at x; returns the
/// 0-based index of the first of q-1 values.
inline int scaled_lower_nonzero(const BSplineBasis& basis, const BSplineBasis& low, double x, double* out) {
    const int first = low.nonzero(x, out);
    const int J = basis.dimension();
    const int ql = low.order();
    for (int r = 0; r < ql; ++r) out[r] *= static_cast<double>(ql) / (J * low.support_width(first + r));
    return first;
}

inline double scaled_lower_eval(const BSplineBasis& basis, int i, double x) {
    if (i < 1 || i > basis.dimension() - 1) return 0.0;
    const BSplineBasis low = basis.lower();
    std::array<double, BSplineBasis::kMaxOrder> v{};
    const int first = scaled_lower_nonzero(basis, low, x, v.data());
    const int r = i - 1 - first;
    return (r >= 0 && r < low.order()) ? v[r] : 0.0;
}

/// B_{j,q}'(x) = J (Bt_{j-1}(x) - Bt_j(x)).
inline double bspline_derivative(const BSplineBasis& basis, int j, double x) {
    return basis.dimension() * (scaled_lower_eval(basis, j - 1, x) - scaled_lower_eval(basis, j, x));
}

// ---------------------------------------------------------------------------
// Spline functions and the Volterra operator
// ---------------------------------------------------------------------------

/// f = J sum_i (a_{i+1} - a_i) Bt_i and its Volterra image sum_j (a_j - a_1) B_j.
class SplineFunction {
  public:
    SplineFunction(BSplineBasis basis, std::vector<double> a)
        : basis_(std::move(basis)), low_(basis_.lower()), a_(std::move(a)) {
        if (static_cast<int>(a_.size()) != basis_.dimension())
            throw std::invalid_argument("coefficient vector length must equal J");
    }

    const BSplineBasis& basis() const { return basis_; }
    std::span<const double> coefficients() const { return a_; }

    double f(double x) const {
        std::array<double, BSplineBasis::kMaxOrder> v{};
        const int first = scaled_lower_nonzero(basis_, low_, x, v.data());
        double s = 0.0;
        for (int r = 0; r < low_.order(); ++r) s += (a_[first + r + 1] - a_[first + r]) * v[r];
        return basis_.dimension() * s;
    }

    double Kf(double x) const {
        std::array<double, BSplineBasis::kMaxOrder> v{};
        const int first = basis_.nonzero(x, v.data());
        double s = 0.0;
        for (int r = 0; r < basis_.order(); ++r) s += (a_[first + r] - a_[0]) * v[r];
        return s;
    }

  private:
    BSplineBasis basis_;
    BSplineBasis low_;
    std::vector<double> a_;
};

/// Kf for the prior-form f with coefficients a, evaluated without quadrature.
inline std::function<double(double)> volterra_apply_spline(std::vector<double> a, const BSplineBasis& basis) {
    auto sf = std::make_shared<SplineFunction>(basis, std::move(a));
    return [sf](double x) { return sf->Kf(x); };
}

/// Absolute-tolerance adaptive integration: 31-point Gauss-Kronrod panels,
/// always splitting the panel with the largest error estimate.
inline double adaptive_integrate(const std::function<double(double)>& f, std::span<const double> cuts, double tol,
                                 std::size_t max_panels, double* error_out) {
    using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
    struct Panel {
        double a, b, value, error;
        bool operator<(const Panel& o) const { return error < o.error; }
    };
    auto make = [&](double a, double b) {
        Panel p{a, b, 0.0, 0.0};
        p.value = GK::integrate(f, a, b, 0, 0.0, &p.error);
        return p;
    };
    std::priority_queue<Panel> queue;
    double value = 0.0, error = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        if (!(cuts[i + 1] > cuts[i])) continue;
        Panel p = make(cuts[i], cuts[i + 1]);
        value += p.value;
        error += p.error;
        queue.push(p);
    }
    while (error > tol && queue.size() < max_panels) {
        const Panel worst = queue.top();
        queue.pop();
        const double mid = 0.5 * (worst.a + worst.b);
        if (!(mid > worst.a && mid < worst.b)) {
            queue.push(worst);
            break;
        }
        const Panel l = make(worst.a, mid), r = make(mid, worst.b);
        value += l.value + r.value - worst.value;
        error += l.error + r.error - worst.error;
        queue.push(l);
        queue.push(r);
    }
    // re-sum to shed the running-update rounding
    value = 0.0;
    error = 0.0;
    for (; !queue.empty(); queue.pop()) {
        value += queue.top().value;
        error += queue.top().error;
    }
    if (error_out) *error_out = error;
    return value;
}

/// int_0^x f to 1e-10 absolute, split at optional breakpoints.
inline double volterra_apply_numeric(const std::function<double(double)>& f, double x,
                                     std::span<const double> breakpoints = {}) {
    if (x == 0.0) return 0.0;
    const double lo = std::min(0.0, x), hi = std::max(0.0, x);
    std::vector<double> pts{lo};
    for (double b : breakpoints)
        if (b > lo && b < hi) pts.push_back(b);
    std::sort(pts.begin(), pts.end());
    pts.push_back(hi);
    double err = 0.0;
    const double total = adaptive_integrate(f, pts, 1e-13, 4000, &err);
    if (!(err <= 1e-10)) {
        std::ostringstream msg;
        msg << "Volterra quadrature error estimate " << err << " exceeds 1e-10";
        throw QuadratureNonconvergence(msg.str());
    }
    return x >= 0.0 ? total : -total;
}

// ---------------------------------------------------------------------------
// Design and Gram matrices
// ---------------------------------------------------------------------------

struct RegressionDesign {
    std::vector<double> x;
    double sigma = 1.0;

    std::size_t size() const { return x.size(); }
};

/// x_i = i / n, i = 1..n.
inline RegressionDesign uniform_design(std::size_t n, double sigma) {
    RegressionDesign d;
    d.sigma = sigma;
    d.x.resize(n);
    for (std::size_t i = 1; i <= n; ++i) d.x[i - 1] = static_cast<double>(i) / static_cast<double>(n);
    return d;
}

struct GramMatrix {
    int order = 0;
    Eigen::MatrixXd entries;
    double lambda_min = 0.0;
    double lambda_max = 0.0;
};

/// (1/n) sum_l B_i(x_l) B_j(x_l), accumulated from the q nonzero values per point.
inline GramMatrix gram_matrix(const RegressionDesign& design, const BSplineBasis& basis) {
    const int J = basis.dimension();
    const int q = basis.order();
    GramMatrix g;
    g.order = q;
    g.entries = Eigen::MatrixXd::Zero(J, J);
    std::array<double, BSplineBasis::kMaxOrder> v{};
    for (double x : design.x) {
        const int first = basis.nonzero(x, v.data());
        for (int r = 0; r < q; ++r)
            for (int s = 0; s < q; ++s) g.entries(first + r, first + s) += v[r] * v[s];
    }
    if (!design.x.empty()) g.entries /= static_cast<double>(design.size());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.entries, Eigen::EigenvaluesOnly);
    g.lambda_min = es.eigenvalues().minCoeff();
    g.lambda_max = es.eigenvalues().maxCoeff();
    return g;
}

/// Default admissible range [1/k, k] for the scaled Gram spectra.
inline constexpr double kDesignConditionRange = 100.0;

struct DesignConditions {
    double d1_min = 0.0, d1_max = 0.0;  // spectrum of J * Sigma^q
    double d2_min = 0.0, d2_max = 0.0;  // spectrum of (J-1) * Sigma^{q-1}
    double threshold = kDesignConditionRange;
    bool pass = false;
    bool j_not_small = false;  // J > n / 4
};

inline DesignConditions check_design_conditions(const RegressionDesign& design, const BSplineBasis& basis,
                                                double threshold = kDesignConditionRange) {
    DesignConditions dc;
    dc.threshold = threshold;
    const int J = basis.dimension();
    const auto g1 = gram_matrix(design, basis);
    const auto g2 = gram_matrix(design, basis.lower());
    dc.d1_min = J * g1.lambda_min;
    dc.d1_max = J * g1.lambda_max;
    dc.d2_min = (J - 1) * g2.lambda_min;
    dc.d2_max = (J - 1) * g2.lambda_max;
    auto in_range = [&](double v) { return v >= 1.0 / threshold && v <= threshold; };
    dc.pass = in_range(dc.d1_min) && in_range(dc.d1_max) && in_range(dc.d2_min) && in_range(dc.d2_max);
    dc.j_not_small = 4 * static_cast<std::size_t>(J) > design.size();
    return dc;
}

/// Root mean square of f - g over the design points.
inline double empirical_norm(const std::function<double(double)>& f, const std::function<double(double)>& g,
                             const RegressionDesign& design) {
    if (design.x.empty()) return 0.0;
    double s = 0.0;
    for (double x : design.x) {
        const double d = f(x) - g(x);
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(design.size()));
}

inline double empirical_norm(std::span<const double> fx, std::span<const double> gx) {
    if (fx.size() != gx.size()) throw std::invalid_argument("empirical_norm: length mismatch");
    if (fx.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < fx.size(); ++i) s += (fx[i] - gx[i]) * (fx[i] - gx[i]);
    return std::sqrt(s / static_cast<double>(fx.size()));
}

// ---------------------------------------------------------------------------
// Prior
// ---------------------------------------------------------------------------

/// J = q + K with K geometric or Poisson; coefficients a_2..a_J iid N(0, tau^2).
struct SplinePrior {
    enum class Family { Geometric, Poisson };
    Family family = Family::Poisson;
    double param = 8.0;  // success probability or mean
    double tau = 1.0;

    /// Exponent t in the Pi_J tail condition.
    double tail_exponent() const { return family == Family::Poisson ? 1.0 : 0.0; }

    double log_pmf(int J, int q) const {
        const int k = J - q;
        if (k < 0) return -std::numeric_limits<double>::infinity();
        if (family == Family::Geometric) return std::log(param) + k * std::log1p(-param);
        return k * std::log(param) - param - std::lgamma(k + 1.0);
    }

    int sample(Rng& rng, int q) const {
        if (family == Family::Geometric) return q + std::geometric_distribution<int>(param)(rng);
        return q + std::poisson_distribution<int>(param)(rng);
    }
};

struct JConditionReport {
    double t = 0.0;
    double c_d = 0.0;  // smallest constant with exp(-c_d j log(j)^t) <= Pi(j <= J <= 2j)
    double c_u = 0.0;  // tail rate: Pi(J > j) <= exp(-c_u j log(j)^t) over the upper range
    int j_first = 2;
    int j_max = 1000;
    bool pass = false;
};

inline JConditionReport check_j_condition(const SplinePrior& prior, int q, int j_max = 1000) {
    JConditionReport rep;
    rep.t = prior.tail_exponent();
    rep.j_max = j_max;
    rep.j_first = std::max(2, (q + 1) / 2);
    auto weight = [&](int j) { return j * std::pow(std::log(static_cast<double>(j)), rep.t); };
    auto log_range = [&](int lo, int hi) {
        std::vector<double> terms;
        for (int J = std::max(lo, q); J <= hi; ++J) terms.push_back(prior.log_pmf(J, q));
        return terms.empty() ? -std::numeric_limits<double>::infinity() : log_sum_exp(terms);
    };
    auto log_tail = [&](int j) {
        if (j < q) return 0.0;
        if (prior.family == SplinePrior::Family::Geometric) return (j - q + 1) * std::log1p(-prior.param);
        const int width = std::max(400, static_cast<int>(10.0 * prior.param));
        return std::min(0.0, log_range(j + 1, j + width));
    };
    rep.c_d = 0.0;
    for (int j = rep.j_first; j <= j_max; ++j) rep.c_d = std::max(rep.c_d, -log_range(j, 2 * j) / weight(j));
    rep.c_u = std::numeric_limits<double>::infinity();
    for (int j = std::max(rep.j_first, j_max / 10); j <= j_max; ++j)
        rep.c_u = std::min(rep.c_u, -log_tail(j) / weight(j));
    rep.pass = std::isfinite(rep.c_d) && rep.c_u > 0.0;
    return rep;
}

struct SplineDraw {
    int J = 0;
    std::vector<double> a;  // a_1 = 0
    SplineFunction function;
};

inline SplineDraw draw_spline_prior(const SplinePrior& prior, int q, std::uint64_t seed,
                                    std::optional<int> fixed_J = std::nullopt) {
    Rng rng = make_rng(seed);
    const int J = fixed_J ? *fixed_J : prior.sample(rng, q);
    std::vector<double> a(J, 0.0);
    Normal z(0.0, prior.tau);
    for (int j = 1; j < J; ++j) a[j] = z(rng);
    BSplineBasis basis = BSplineBasis::with_dimension(q, J);
    return SplineDraw{J, a, SplineFunction(basis, a)};
}

// ---------------------------------------------------------------------------
// Evaluation cache on a design
// ---------------------------------------------------------------------------

/// Nonzero basis values at every design point for one J.
class SplineDesignCache {
  public:
    SplineDesignCache(const RegressionDesign& design, const BSplineBasis& basis)
        : q_(basis.order()), J_(basis.dimension()), n_(design.size()) {
        const BSplineBasis low = basis.lower();
        first_.resize(n_);
        first_low_.resize(n_);
        val_.resize(n_ * q_);
        val_low_.resize(n_ * (q_ - 1));
        for (std::size_t l = 0; l < n_; ++l) {
            first_[l] = basis.nonzero(design.x[l], &val_[l * q_]);
            std::array<double, BSplineBasis::kMaxOrder> v{};
            first_low_[l] = scaled_lower_nonzero(basis, low, design.x[l], v.data());
            for (int r = 0; r < q_ - 1; ++r) val_low_[l * (q_ - 1) + r] = v[r];
        }
    }

    int order() const { return q_; }
    int dimension() const { return J_; }
    std::size_t points() const { return n_; }
    int first(std::size_t l) const { return first_[l]; }
    const double* values(std::size_t l) const { return &val_[l * q_]; }

    /// f and Kf at the design points for full coefficients a (a_1 = a[0]).
    void evaluate(std::span<const double> a, std::span<double> f, std::span<double> kf) const {
        const int ql = q_ - 1;
        for (std::size_t l = 0; l < n_; ++l) {
            const double* v = &val_[l * q_];
            const int b = first_[l];
            double s = 0.0;
            for (int r = 0; r < q_; ++r) s += (a[b + r] - a[0]) * v[r];
            kf[l] = s;
            const double* w = &val_low_[l * ql];
            const int c = first_low_[l];
            double t = 0.0;
            for (int r = 0; r < ql; ++r) t += (a[c + r + 1] - a[c + r]) * w[r];
            f[l] = J_ * t;
        }
    }

  private:
    int q_;
    int J_;
    std::size_t n_;
    std::vector<int> first_, first_low_;
    std::vector<double> val_, val_low_;
};

// ---------------------------------------------------------------------------
// Conjugate posterior with model averaging over J
// ---------------------------------------------------------------------------

struct SplineComponent {
    int J = 0;
    double log_prior = 0.0;
    double log_marginal = 0.0;
    double weight = 0.0;
    Eigen::VectorXd mean;                   // a_2..a_J
    Eigen::LLT<Eigen::MatrixXd> precision;  // posterior precision of a_2..a_J
    bool ridge_applied = false;

    std::vector<double> full_mean() const {
        std::vector<double> a(J, 0.0);
        for (int j = 1; j < J; ++j) a[j] = mean[j - 1];
        return a;
    }
    Eigen::MatrixXd covariance() const {
        return precision.solve(Eigen::MatrixXd::Identity(J - 1, J - 1));
    }
    /// Full coefficient vector from standard normals z (length J - 1).
    void draw(const Eigen::VectorXd& z, std::vector<double>& a) const {
        const Eigen::VectorXd u = precision.matrixU().solve(z);
        a.assign(J, 0.0);
        for (int j = 1; j < J; ++j) a[j] = mean[j - 1] + u[j - 1];
    }
};

struct SplinePosterior {
    int q = 3;
    std::vector<SplineComponent> components;
    bool any_ridge = false;

    /// Index of the component picked by a uniform u in [0, 1).
    std::size_t pick(double u) const {
        double c = 0.0;
        for (std::size_t k = 0; k < components.size(); ++k) {
            c += components[k].weight;
            if (u < c) return k;
        }
        return components.size() - 1;
    }
};

inline SplineComponent spline_component(const RegressionDesign& design, std::span<const double> y,
                                        const SplinePrior& prior, int q, int J) {
    if (y.size() != design.size()) throw std::invalid_argument("spline_posterior: y length must equal n");
    if (J < std::max(q, 2)) throw std::invalid_argument("spline_posterior: J must be at least max(q, 2)");
    const BSplineBasis basis = BSplineBasis::with_dimension(q, J);
    const int d = J - 1;
    const double s2 = design.sigma * design.sigma;
    const double t2 = prior.tau * prior.tau;
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
    double yy = 0.0;
    std::array<double, BSplineBasis::kMaxOrder> v{};
    for (std::size_t l = 0; l < design.size(); ++l) {
        const int first = basis.nonzero(design.x[l], v.data());
        yy += y[l] * y[l];
        for (int r = 0; r < q; ++r) {
            const int c = first + r - 1;
            if (c < 0) continue;
            b[c] += v[r] * y[l];
            for (int s = 0; s < q; ++s) {
                const int c2 = first + s - 1;
                if (c2 >= 0) G(c, c2) += v[r] * v[s];
            }
        }
    }
    SplineComponent comp;
    comp.J = J;
    comp.log_prior = prior.log_pmf(J, q);
    Eigen::MatrixXd A = G / s2;
    A.diagonal().array() += 1.0 / t2;
    comp.precision.compute(A);
    if (comp.precision.info() != Eigen::Success) {
        A.diagonal().array() += 1e-10 * A.trace() / J;
        comp.ridge_applied = true;
        comp.precision.compute(A);
        if (comp.precision.info() != Eigen::Success) throw SingularSystem("spline posterior precision is singular");
    }
    const Eigen::VectorXd bs = b / s2;
    comp.mean = comp.precision.solve(bs);
    double logdet = 0.0;
    for (int i = 0; i < d; ++i) logdet += 2.0 * std::log(comp.precision.matrixLLT()(i, i));
    const double n = static_cast<double>(design.size());
    comp.log_marginal = -0.5 * (n * std::log(2.0 * std::numbers::pi * s2) + d * std::log(t2) + logdet + yy / s2 -
                                bs.dot(comp.mean));
    return comp;
}

inline SplinePosterior spline_posterior(const RegressionDesign& design, std::span<const double> y,
                                        const SplinePrior& prior, int q, std::span<const int> J_grid) {
    SplinePosterior post;
    post.q = q;
    for (int J : J_grid) {
        if (J < std::max(q, 2)) continue;
        post.components.push_back(spline_component(design, y, prior, q, J));
        post.any_ridge = post.any_ridge || post.components.back().ridge_applied;
    }
    if (post.components.empty()) throw std::invalid_argument("spline_posterior: empty J grid");
    std::vector<double> lw;
    for (const auto& c : post.components) lw.push_back(c.log_prior + c.log_marginal);
    const double z = log_sum_exp(lw);
    for (std::size_t k = 0; k < lw.size(); ++k) post.components[k].weight = std::exp(lw[k] - z);
    return post;
}

/// Dyadic J values in [lo, hi] that are admissible for order q.
inline std::vector<int> dyadic_j_grid(int q, int lo = 2, int hi = 256) {
    std::vector<int> g;
    for (int J = lo; J <= hi; J *= 2)
        if (J >= std::max(q, 2)) g.push_back(J);
    return g;
}

// ---------------------------------------------------------------------------
// Modulus constant
// ---------------------------------------------------------------------------

/// sup and Monte Carlo max of ||f||_n / (J ||Kf||_n) over coefficient vectors.
struct SplineModulusConstant {
    int J = 0;
    double exact_sup = 0.0;
    double mc_max = 0.0;
    std::size_t draws = 0;
};

inline SplineModulusConstant calibrate_spline_modulus(const RegressionDesign& design, const BSplineBasis& basis,
                                                      std::size_t draws, std::uint64_t seed) {
    const int J = basis.dimension();
    const int d = J - 1;
    const std::size_t n = design.size();
    const SplineDesignCache cache(design, basis);
    // columns: f and Kf at the design for unit vectors in a_2..a_J
    Eigen::MatrixXd F(n, d), K(n, d);
    std::vector<double> a(J, 0.0), f(n), kf(n);
    for (int c = 0; c < d; ++c) {
        std::fill(a.begin(), a.end(), 0.0);
        a[c + 1] = 1.0;
        cache.evaluate(a, f, kf);
        for (std::size_t l = 0; l < n; ++l) {
            F(l, c) = f[l];
            K(l, c) = kf[l];
        }
    }
    const Eigen::MatrixXd FF = F.transpose() * F;
    const Eigen::MatrixXd KK = K.transpose() * K * (static_cast<double>(J) * J);
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(FF, KK, Eigen::EigenvaluesOnly);
    SplineModulusConstant out;
    out.J = J;
    out.draws = draws;
    out.exact_sup = std::sqrt(ges.eigenvalues().maxCoeff());
    Rng rng = make_rng(seed);
    Normal z(0.0, 1.0);
    Eigen::VectorXd v(d);
    for (std::size_t s = 0; s < draws; ++s) {
        for (int c = 0; c < d; ++c) v[c] = z(rng);
        const double nf = (F * v).norm();
        const double nk = (K * v).norm();
        if (nk > 0.0) out.mc_max = std::max(out.mc_max, nf / (J * nk));
    }
    return out;
}

/// constant * J * delta
inline double spline_modulus_report(double constant, int J, double delta) { return constant * J * delta; }

// ---------------------------------------------------------------------------
// Hoelder truth
// ---------------------------------------------------------------------------

/// Lacunary cosine series sum_{k=1..K} 2^{-k e} cos(2^k pi x) with e = beta - r,
/// integrated r = ceil(beta) - 1 times, scaled to Hoelder constant L.
class HolderTruth {
  public:
    HolderTruth(double beta, double L, int K, double resolution = 1e-4)
        : beta_(beta), L_(L), K_(K), r_(static_cast<int>(std::ceil(beta)) - 1) {
        if (!(beta > 0.0)) throw std::invalid_argument("Hoelder truth needs beta > 0");
        if (K < 1) throw std::invalid_argument("Hoelder truth needs at least one term");
        e_ = beta_ - r_;
        scale_ = 1.0;
        const double h = grid_holder_constant(resolution);
        scale_ = (L_ == 0.0 || h == 0.0) ? 0.0 : L_ / h;
    }

    double beta() const { return beta_; }
    double exponent() const { return e_; }
    int derivative_order() const { return r_; }

    double operator()(double x) const { return series(x, r_); }
    /// r-th derivative (the function whose Hoelder quotient is controlled).
    double top_derivative(double x) const { return series(x, 0); }
    /// Kf(x) = int_0^x f.
    double primitive(double x) const { return series(x, r_ + 1) - series(0.0, r_ + 1); }

    /// max |g(x) - g(y)| / |x - y|^e over all pairs of a uniform grid on [0, 1].
    double grid_holder_constant(double resolution) const {
        const std::size_t G = static_cast<std::size_t>(std::llround(1.0 / resolution)) + 1;
        std::vector<double> g(G), pw(G);
        for (std::size_t i = 0; i < G; ++i) {
            const double x = static_cast<double>(i) / static_cast<double>(G - 1);
            g[i] = top_derivative(x);
            pw[i] = i == 0 ? 0.0 : std::pow(static_cast<double>(i) / static_cast<double>(G - 1), -e_);
        }
        double best = 0.0;
        for (std::size_t i = 0; i < G; ++i)
            for (std::size_t j = i + 1; j < G; ++j) best = std::max(best, std::abs(g[j] - g[i]) * pw[j - i]);
        return best;
    }

  private:
    double series(double x, int integrations) const {
        double s = 0.0;
        for (int k = 1; k <= K_; ++k) {
            const double w = std::ldexp(std::numbers::pi, k);
            s += std::pow(2.0, -k * e_) * std::cos(w * x - integrations * std::numbers::pi / 2.0) /
                 std::pow(w, integrations);
        }
        return scale_ * s;
    }

    double beta_, L_;
    int K_;
    int r_;
    double e_ = 1.0;
    double scale_ = 1.0;
};

inline HolderTruth make_holder_truth(double beta, double L, int K_terms) { return HolderTruth(beta, L, K_terms); }

/// Upper end n^{1/(2 beta + 3)} log n of the J range defining the tail set.
inline double volterra_sn_cutoff(double n, double beta) { return std::pow(n, 1.0 / (2.0 * beta + 3.0)) * std::log(n); }

}  // namespace contraq

#endif  // CONTRAQ_SPLINE_VOLTERRA_HPP
