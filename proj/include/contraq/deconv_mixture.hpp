#ifndef CONTRAQ_DECONV_MIXTURE_HPP
#define CONTRAQ_DECONV_MIXTURE_HPP

/** @file
 * Deconvolution on the real line with a Gaussian location-mixture prior.
 *
 * Fourier convention: fhat(t) = int f(u) e^{itu} du, so that
 * ||f||^2 = (1/2pi) int |fhat|^2. Mixture nodes lie on the lattice j/J.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "contraq/core.hpp"

namespace contraq {

using Complex = std::complex<double>;

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

struct ConvolutionKernel {
    enum class Family { LaplaceP2, GaussianSmoothTest, UserTabulated };
    Family family = Family::LaplaceP2;
    int p = 2;
    double c = 1.0;
    double C = 1.0;
    double tau = 1.0;  // Gaussian test kernel scale

    // UserTabulated: even, real Fourier transform with |lhat| <= user_sup
    std::function<double(double)> user_fourier;
    double user_sup = 1.0;
    double user_t_max = 400.0;
    std::size_t user_panels = 4000;
    double user_tol = 1e-9;

    /// lambda(x) = exp(-|x|) / 2, lhat(t) = 1 / (1 + t^2).
    static ConvolutionKernel laplace() { return {}; }

    static ConvolutionKernel gaussian(double tau) {
        ConvolutionKernel k;
        k.family = Family::GaussianSmoothTest;
        k.tau = tau;
        k.p = 0;
        return k;
    }

    static ConvolutionKernel tabulated(std::function<double(double)> fourier, int p, double sup = 1.0) {
        ConvolutionKernel k;
        k.family = Family::UserTabulated;
        k.user_fourier = std::move(fourier);
        k.p = p;
        k.user_sup = sup;
        return k;
    }

    double fourier(double t) const {
        switch (family) {
        case Family::LaplaceP2: return 1.0 / (1.0 + t * t);
        case Family::GaussianSmoothTest: return std::exp(-0.5 * tau * tau * t * t);
        case Family::UserTabulated: return user_fourier(t);
        }
        return 0.0;
    }

    bool has_density() const { return family != Family::UserTabulated; }

    double density(double x) const {
        switch (family) {
        case Family::LaplaceP2: return 0.5 * std::exp(-std::abs(x));
        case Family::GaussianSmoothTest: return normal_pdf(x / tau) / tau;
        case Family::UserTabulated: break;
        }
        throw std::logic_error("tabulated kernel has no density in closed form");
    }
};

inline double gaussian_density(double x, double sd) { return normal_pdf(x / sd) / sd; }

/// (lambda * phi_v)(u), the image of one centred mixture component.
inline double kernel_component(const ConvolutionKernel& k, double v, double u) {
    switch (k.family) {
    case ConvolutionKernel::Family::LaplaceP2: {
        const double h = 0.5 * v * v;
        const double a = h - u + log_normal_cdf(u / v - v);
        const double b = h + u + log_normal_cdf(-u / v - v);
        return 0.5 * (std::exp(a) + std::exp(b));
    }
    case ConvolutionKernel::Family::GaussianSmoothTest:
        return gaussian_density(u, std::sqrt(v * v + k.tau * k.tau));
    case ConvolutionKernel::Family::UserTabulated: {
        // (1/pi) int_0^T exp(-v^2 t^2 / 2) lhat(t) cos(t u) dt, truncation certified
        const double tail_at = [&] {
            // smallest T with the Gaussian-envelope tail below tol
            const double need = std::sqrt(2.0) / v * std::sqrt(std::max(0.0, -std::log(k.user_tol * v)) + 5.0);
            return std::min(need, k.user_t_max);
        }();
        const double bound = k.user_sup / std::numbers::pi * std::sqrt(std::numbers::pi / 2.0) / v *
                             std::erfc(v * tail_at / std::numbers::sqrt2);
        if (bound > k.user_tol) {
            std::ostringstream msg;
            msg << "Fourier truncation bound " << bound << " at T = " << tail_at << " exceeds tolerance";
            throw GridTooCoarse(msg.str());
        }
        auto g = [&](double t) { return std::exp(-0.5 * v * v * t * t) * k.fourier(t) * std::cos(t * u); };
        const double full = composite_gauss(g, 0.0, tail_at, k.user_panels) / std::numbers::pi;
        const double half = composite_gauss(g, 0.0, tail_at, k.user_panels / 2) / std::numbers::pi;
        if (std::abs(full - half) > k.user_tol) throw GridTooCoarse("Fourier inversion grid too coarse");
        return full;
    }
    }
    return 0.0;
}

struct IllposednessReport {
    double c_hat = 0.0;
    double C_hat = 0.0;
    bool pass = false;
};

/// Envelope constants of |lhat(t)| |t|^p over a log grid on [t0, t1].
inline IllposednessReport illposedness_check(const ConvolutionKernel& k, double t0, double t1,
                                             std::size_t grid = 2001) {
    if (!(t1 > t0 && t0 > 0.0)) throw std::invalid_argument("illposedness_check needs t1 > t0 > 0");
    IllposednessReport r;
    r.c_hat = std::numeric_limits<double>::infinity();
    for (double t : logspace(t0, t1, grid)) {
        const double v = std::abs(k.fourier(t)) * std::pow(t, k.p);
        r.c_hat = std::min(r.c_hat, v);
        r.C_hat = std::max(r.C_hat, v);
    }
    r.pass = r.c_hat > 0.0 && std::isfinite(r.C_hat);
    return r;
}

// ---------------------------------------------------------------------------
// Mixtures
// ---------------------------------------------------------------------------

/// Lattice points j/J with |j/J| <= half_width; returns the first j and the count.
struct Lattice {
    int J = 1;
    int j_first = 0;
    int count = 1;

    double node(int k) const { return static_cast<double>(j_first + k) / J; }
    static Lattice symmetric(int J, double half_width) {
        const int jm = static_cast<int>(std::floor(half_width * J + 1e-9));
        return {J, -jm, 2 * jm + 1};
    }
};

/// f(x) = sum_k w_k phi_v(x - z_k), z_k = (j_first + k) / J.
struct MixtureFunction {
    Lattice lattice;
    double v = 1.0;
    std::vector<double> w;

    double node(int k) const { return lattice.node(k); }
    int size() const { return static_cast<int>(w.size()); }
};

inline MixtureFunction make_mixture(int J, double v, double half_width, std::vector<double> w = {}) {
    MixtureFunction mf;
    mf.lattice = Lattice::symmetric(J, half_width);
    mf.v = v;
    mf.w = w.empty() ? std::vector<double>(mf.lattice.count, 0.0) : std::move(w);
    if (static_cast<int>(mf.w.size()) != mf.lattice.count)
        throw std::invalid_argument("mixture weight vector does not match the node lattice");
    return mf;
}

/// Node range 2 c_x log n used for a sample of size n.
inline double node_half_width(double n, double c_x) { return 2.0 * c_x * std::log(n); }

inline double mixture_eval(const MixtureFunction& mf, double x) {
    double s = 0.0;
    for (int k = 0; k < mf.size(); ++k)
        if (mf.w[k] != 0.0) s += mf.w[k] * gaussian_density(x - mf.node(k), mf.v);
    return s;
}

/// sum_k w_k e^{i t z_k} via the lattice recurrence.
inline Complex mixture_trig_sum(const MixtureFunction& mf, double t) {
    const Complex step = std::polar(1.0, t / mf.lattice.J);
    Complex e = std::polar(1.0, t * mf.node(0));
    Complex s = 0.0;
    for (int k = 0; k < mf.size(); ++k) {
        s += mf.w[k] * e;
        e *= step;
    }
    return s;
}

inline Complex mixture_fourier(const MixtureFunction& mf, double t) {
    return std::exp(-0.5 * mf.v * mf.v * t * t) * mixture_trig_sum(mf, t);
}

inline double mixture_fourier_sq(const MixtureFunction& mf, double t) {
    return std::exp(-mf.v * mf.v * t * t) * std::norm(mixture_trig_sum(mf, t));
}

/// phi_{sqrt2 v}(d / J) for lattice offsets d = 0..count-1.
inline std::vector<double> l2_gram_toeplitz(const Lattice& lat, double v) {
    std::vector<double> g(lat.count);
    const double s = std::numbers::sqrt2 * v;
    for (int d = 0; d < lat.count; ++d) g[d] = gaussian_density(static_cast<double>(d) / lat.J, s);
    return g;
}

/// int_{-h}^{h} phi_v(x - z_j) phi_v(x - z_k) dx on a lattice.
inline Eigen::MatrixXd window_gram(const Lattice& lat, double v, double h) {
    const int m = lat.count;
    const double s = v / std::numbers::sqrt2;
    Eigen::MatrixXd G(m, m);
    for (int j = 0; j < m; ++j)
        for (int k = 0; k <= j; ++k) {
            const double mid = 0.5 * (lat.node(j) + lat.node(k));
            const double mass = normal_cdf((h - mid) / s) - normal_cdf((-h - mid) / s);
            G(j, k) = G(k, j) = gaussian_density(lat.node(j) - lat.node(k), std::numbers::sqrt2 * v) * mass;
        }
    return G;
}

/// ||f||^2 = sum_jk w_j w_k phi_{sqrt2 v}(z_j - z_k).
inline double mixture_l2_sq(const MixtureFunction& mf) {
    const auto g = l2_gram_toeplitz(mf.lattice, mf.v);
    double s = 0.0;
    for (int j = 0; j < mf.size(); ++j) {
        if (mf.w[j] == 0.0) continue;
        double r = 0.0;
        for (int k = 0; k < mf.size(); ++k) r += mf.w[k] * g[std::abs(j - k)];
        s += mf.w[j] * r;
    }
    return s;
}

inline double sum_abs_weights(const MixtureFunction& mf) {
    double s = 0.0;
    for (double x : mf.w) s += std::abs(x);
    return s;
}

/// (K f)(x) = sum_k w_k (lambda * phi_v)(x - z_k).
inline double convolve(const ConvolutionKernel& k, const MixtureFunction& mf, double x) {
    double s = 0.0;
    for (int j = 0; j < mf.size(); ++j)
        if (mf.w[j] != 0.0) s += mf.w[j] * kernel_component(k, mf.v, x - mf.node(j));
    return s;
}

/// int_a^b f(s) lambda(x - s) ds for f supported on [a, b].
inline double convolve_function(const ConvolutionKernel& k, const std::function<double(double)>& f, double a,
                                double b, double x, std::size_t panels = 16) {
    auto g = [&](double s) { return f(s) * k.density(x - s); };
    if (x > a && x < b) return composite_gauss(g, a, x, panels) + composite_gauss(g, x, b, panels);
    return composite_gauss(g, a, b, panels);
}

// ---------------------------------------------------------------------------
// Fourier tail set
// ---------------------------------------------------------------------------

/// I_n = [-a_n, a_n]; membership: int_{I_n} |fhat|^2 >= a int_{I_n^c} |fhat|^2.
struct FourierWindow {
    double a_n = 10.0;
    double a = 1.0;
};

/// n^{1/(1+2 beta+2p)} log n
inline double deconv_a_n(double n, double beta, double p) {
    return std::pow(n, 1.0 / (1.0 + 2.0 * beta + 2.0 * p)) * std::log(n);
}

struct SnMembership {
    double inside_mass = 0.0;
    double outside_mass = 0.0;
    double outside_bound = 0.0;  // certified envelope beyond the quadrature range
    bool member = false;
};

namespace detail {
inline std::size_t fourier_panels(const MixtureFunction& mf, double length) {
    const double span = static_cast<double>(mf.size() - 1) / mf.lattice.J + std::abs(mf.node(0)) + 1.0;
    return static_cast<std::size_t>(std::ceil(length * std::max(span, mf.v))) + 4;
}
}  // namespace detail

inline SnMembership sn_membership(const MixtureFunction& mf, const FourierWindow& win) {
    SnMembership r;
    auto sq = [&](double t) { return mixture_fourier_sq(mf, t); };
    r.inside_mass = 2.0 * composite_gauss(sq, 0.0, win.a_n, detail::fourier_panels(mf, win.a_n));
    const double total = 2.0 * std::numbers::pi * mixture_l2_sq(mf);
    if (mf.v * win.a_n < 5.0) {
        r.outside_mass = std::max(0.0, total - r.inside_mass);
        r.outside_bound = 1e-12 * total;
    } else {
        const double T = std::sqrt(win.a_n * win.a_n + 60.0 / (mf.v * mf.v));
        r.outside_mass = 2.0 * composite_gauss(sq, win.a_n, T, detail::fourier_panels(mf, T - win.a_n));
        const double W = sum_abs_weights(mf);
        r.outside_bound = 2.0 * W * W * std::sqrt(std::numbers::pi) / (2.0 * mf.v) * std::erfc(mf.v * T);
    }
    r.member = r.inside_mass >= win.a * r.outside_mass;
    return r;
}

/// C1 a_n^p delta + C2 a_n^{-beta}
inline double deconv_modulus(const FourierWindow& win, double p, double beta, double delta, double C1 = 1.0,
                             double C2 = 1.0) {
    if (delta < 0.0) throw std::invalid_argument("deconv_modulus needs delta >= 0");
    return C1 * std::pow(win.a_n, p) * delta + C2 * std::pow(win.a_n, -beta);
}

/// min over |t| <= a_n of |lhat(t)|, scanned on a fine grid.
inline double min_fourier_on_window(const ConvolutionKernel& k, double a_n, std::size_t grid = 4001) {
    double m = std::numeric_limits<double>::infinity();
    for (double t : linspace(0.0, a_n, grid)) m = std::min(m, std::abs(k.fourier(t)));
    return m;
}

/// ||K f||^2 in the Fourier domain: (1/2pi) int |fhat|^2 |lhat|^2, times 2pi.
inline double fourier_image_sq(const ConvolutionKernel& k, const MixtureFunction& mf, double* bound = nullptr) {
    const double T = std::sqrt(70.0) / mf.v;
    auto g = [&](double t) {
        const double l = k.fourier(t);
        return mixture_fourier_sq(mf, t) * l * l;
    };
    const double val = 2.0 * composite_gauss(g, 0.0, T, detail::fourier_panels(mf, T));
    if (bound) {
        const double W = sum_abs_weights(mf);
        *bound = 2.0 * W * W * std::sqrt(std::numbers::pi) / (2.0 * mf.v) * std::erfc(mf.v * T);
    }
    return val;
}

struct DeconvChainSlack {
    double lhs = 0.0;  // ||fhat||^2
    double rhs = 0.0;  // (1 + 1/a) ||(Kf)^||^2 / min_{I_n} |lhat|^2
    double relative() const { return (rhs - lhs) / lhs; }
};

inline DeconvChainSlack deconv_chain_slack(const ConvolutionKernel& k, const FourierWindow& win,
                                           const MixtureFunction& mf, double min_lhat) {
    DeconvChainSlack s;
    s.lhs = 2.0 * std::numbers::pi * mixture_l2_sq(mf);
    s.rhs = (1.0 + 1.0 / win.a) * fourier_image_sq(k, mf) / (min_lhat * min_lhat);
    return s;
}

struct DeconvChainReport {
    std::size_t samples = 0;
    std::size_t rejected = 0;  // candidate draws outside S_n
    std::size_t violations = 0;
    double min_slack = std::numeric_limits<double>::infinity();
    double max_slack = -std::numeric_limits<double>::infinity();
};

/// Random members of S_n checked against ||fhat||^2 <= (1+1/a) ||(Kf)^||^2 / min |lhat|^2.
inline DeconvChainReport check_deconv_chain(const ConvolutionKernel& k, const FourierWindow& win,
                                            std::size_t samples, std::uint64_t seed, double half_width = 2.0) {
    const double min_lhat = min_fourier_on_window(k, win.a_n);
    if (!(min_lhat > 0.0)) throw HypothesisUnmet("kernel Fourier transform vanishes on the window");
    DeconvChainReport rep;
    Rng rng = make_rng(seed);
    Normal z(0.0, 1.0);
    std::uniform_int_distribution<int> jexp(0, 4);
    std::uniform_real_distribution<double> logv(std::log(0.02), std::log(2.0));
    while (rep.samples < samples) {
        const int J = 1 << jexp(rng);
        auto mf = make_mixture(J, std::exp(logv(rng)), half_width);
        for (double& w : mf.w) w = z(rng);
        if (!sn_membership(mf, win).member) {
            ++rep.rejected;
            if (rep.rejected > 100 * samples) throw Error("check_deconv_chain: S_n members too rare");
            continue;
        }
        const auto s = deconv_chain_slack(k, win, mf, min_lhat);
        ++rep.samples;
        rep.min_slack = std::min(rep.min_slack, s.relative());
        rep.max_slack = std::max(rep.max_slack, s.relative());
        if (s.relative() < -1e-9) {
            ++rep.violations;
            std::ostringstream msg;
            msg << "deconvolution chain violated with relative slack " << s.relative();
            throw ChainViolation(msg.str(), mf.w);
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Prior
// ---------------------------------------------------------------------------

/// Pi_J(j) ~ j^{-s} on 1..J_max, Pi_v(v) ~ v^{-q} exp(-(c/v) l(v)^u) on (0, v_max],
/// l(v) = log(1/v) for v <= 1/e and 1 above; weights iid N(0, 1).
struct MixturePriorSpec {
    double s = 2.0;
    int J_max = 64;
    double q = 1.0;
    double u = 1.0;
    double c = 0.05;
    double v_max = 10.0;

    double log_pi_J(int j) const {
        if (j < 1 || j > J_max) return -std::numeric_limits<double>::infinity();
        double z = 0.0;
        for (int k = 1; k <= J_max; ++k) z += std::pow(static_cast<double>(k), -s);
        return -s * std::log(static_cast<double>(j)) - std::log(z);
    }

    static double ell(double v) { return v <= std::exp(-1.0) ? std::log(1.0 / v) : 1.0; }

    /// Unnormalized log density of v.
    double log_v_kernel(double v) const {
        if (!(v > 0.0) || v > v_max) return -std::numeric_limits<double>::infinity();
        return -q * std::log(v) - (c / v) * std::pow(ell(v), u);
    }
};

/// Normalized v prior with a tabulated CDF on a log grid (for sampling).
class VPrior {
  public:
    explicit VPrior(const MixturePriorSpec& spec, std::size_t cells = 4000) : spec_(spec) {
        // lower end where the kernel is negligible relative to its peak
        double lo = spec.v_max;
        const double peak = peak_log_kernel();
        while (lo > 1e-300 && spec.log_v_kernel(lo) > peak - 745.0) lo *= 0.5;
        log_lo_ = std::log(lo);
        log_hi_ = std::log(spec.v_max);
        cdf_.assign(cells + 1, 0.0);
        const double h = (log_hi_ - log_lo_) / cells;
        for (std::size_t i = 0; i < cells; ++i) {
            const double a = log_lo_ + h * i;
            cdf_[i + 1] = cdf_[i] + composite_gauss<16>([&](double y) { return std::exp(spec_.log_v_kernel(std::exp(y)) + y - peak); },
                                                        a, a + h, 1);
        }
        log_z_ = std::log(cdf_.back()) + peak;
        for (double& v : cdf_) v /= cdf_.back();
    }

    const MixturePriorSpec& spec() const { return spec_; }
    double log_normalizer() const { return log_z_; }
    double log_density(double v) const { return spec_.log_v_kernel(v) - log_z_; }

    /// Prior mass of (0, x], by quadrature in log v.
    double mass_below(double x) const {
        if (x >= spec_.v_max) return 1.0;
        return mass_below_direct(x);
    }

    double sample(Rng& rng) const {
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        const std::size_t i = std::clamp<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), 1, cdf_.size() - 1);
        const double c0 = cdf_[i - 1], c1 = cdf_[i];
        const double frac = c1 > c0 ? (u - c0) / (c1 - c0) : 0.5;
        const double h = (log_hi_ - log_lo_) / static_cast<double>(cdf_.size() - 1);
        return std::exp(log_lo_ + h * (static_cast<double>(i - 1) + frac));
    }

  private:
    double peak_log_kernel() const {
        double best = -std::numeric_limits<double>::infinity();
        for (double v : logspace(1e-6, spec_.v_max, 2000)) best = std::max(best, spec_.log_v_kernel(v) + std::log(v));
        return best;
    }
    double mass_below_direct(double x) const {
        const double a = std::log(x) - 60.0;
        return composite_gauss<16>([&](double y) { return std::exp(log_density(std::exp(y)) + y); }, a, std::log(x),
                                   400);
    }

    MixturePriorSpec spec_;
    double log_lo_ = 0.0, log_hi_ = 0.0, log_z_ = 0.0;
    std::vector<double> cdf_;
};

struct PriorSnTail {
    double numeric_tail = 0.0;  // Pi(v <= J / a_n)
    double envelope = 0.0;      // x^{1-q} exp(-(c/x) l(x)^u) / Z at x = J / a_n
    double c_prime = 0.0;       // c / J: the envelope reads exp(-c' a_n l(J/a_n)^u)
    bool monotone = true;       // v-kernel nondecreasing on (0, J/a_n]
    bool degenerate = false;    // J / a_n beyond the support
};

inline PriorSnTail prior_sn_tail(const VPrior& prior, const FourierWindow& win, int J) {
    const auto& sp = prior.spec();
    PriorSnTail r;
    const double x = J / win.a_n;
    r.c_prime = sp.c / J;
    if (x >= sp.v_max) {
        r.numeric_tail = 1.0;
        r.envelope = 1.0;
        r.degenerate = true;
        return r;
    }
    r.numeric_tail = prior.mass_below(x);
    double prev = -std::numeric_limits<double>::infinity();
    double sup = -std::numeric_limits<double>::infinity();
    for (double v : logspace(x * 1e-6, x, 2001)) {
        const double l = sp.log_v_kernel(v);
        if (l < prev - 1e-12 * std::abs(prev)) r.monotone = false;
        prev = l;
        sup = std::max(sup, l);
    }
    // increasing kernel: int_0^x <= x * kernel(x); otherwise x * grid sup
    const double lk = r.monotone ? sp.log_v_kernel(x) : sup;
    r.envelope = std::exp(std::log(x) + lk - prior.log_normalizer());
    return r;
}

/// Unnormalized Pi_J for sampling.
inline int sample_J(const MixturePriorSpec& spec, Rng& rng) {
    std::vector<double> w(spec.J_max);
    for (int j = 1; j <= spec.J_max; ++j) w[j - 1] = std::pow(static_cast<double>(j), -spec.s);
    return 1 + std::discrete_distribution<int>(w.begin(), w.end())(rng);
}

struct MixtureDrawOverride {
    std::optional<int> J;
    std::optional<double> v;
    std::optional<std::vector<double>> w;
};

inline MixtureFunction draw_mixture_prior(const MixturePriorSpec& spec, const VPrior& vprior, double half_width,
                                          std::uint64_t seed, const MixtureDrawOverride& force = {}) {
    Rng rng = make_rng(seed);
    const int J = force.J ? *force.J : sample_J(spec, rng);
    const double v = force.v ? *force.v : vprior.sample(rng);
    auto mf = make_mixture(J, v, half_width);
    if (force.w) {
        if (force.w->size() != mf.w.size()) throw std::invalid_argument("forced weights do not match the lattice");
        mf.w = *force.w;
    } else {
        Normal z(0.0, 1.0);
        for (double& w : mf.w) w = z(rng);
    }
    return mf;
}

// ---------------------------------------------------------------------------
// Truth
// ---------------------------------------------------------------------------

/// A (x(1-x))^{beta+1} on [0, 1], zero outside, with int (f^{(beta)})^2 = L^2.
class BumpTruth {
  public:
    BumpTruth(int beta, double L) : beta_(beta) {
        if (beta < 1) throw std::invalid_argument("bump truth needs an integer beta >= 1");
        const int r = beta + 1;
        // coefficients of x^r (1-x)^r
        poly_.assign(2 * r + 1, 0.0);
        double binom = 1.0;
        for (int k = 0; k <= r; ++k) {
            poly_[r + k] = (k % 2 ? -1.0 : 1.0) * binom;
            binom = binom * (r - k) / (k + 1);
        }
        std::vector<double> d = poly_;
        for (int t = 0; t < beta; ++t) d = derivative(d);
        const double semi = integrate_square(d);
        amp_ = L == 0.0 ? 0.0 : L / std::sqrt(semi);
        l2_sq_ = amp_ * amp_ * integrate_square(poly_);
    }

    int beta() const { return beta_; }
    double amplitude() const { return amp_; }

    double operator()(double x) const {
        if (x <= 0.0 || x >= 1.0 || amp_ == 0.0) return 0.0;
        return amp_ * std::pow(x * (1.0 - x), beta_ + 1);
    }

    /// k-th derivative inside (0, 1).
    double derivative_at(int k, double x) const {
        if (x <= 0.0 || x >= 1.0) return 0.0;
        std::vector<double> d = poly_;
        for (int t = 0; t < k; ++t) d = derivative(d);
        double s = 0.0;
        for (std::size_t i = d.size(); i-- > 0;) s = s * x + d[i];
        return amp_ * s;
    }

    double l2_sq() const { return l2_sq_; }

    Complex fourier(double t, std::size_t panels = 64) const {
        const double re = composite_gauss([&](double x) { return (*this)(x) * std::cos(t * x); }, 0.0, 1.0, panels);
        const double im = composite_gauss([&](double x) { return (*this)(x) * std::sin(t * x); }, 0.0, 1.0, panels);
        return {re, im};
    }

    /// (f0 * phi_v)(z)
    double smoothed(double v, double z) const {
        const double lo = std::max(0.0, z - 12.0 * v), hi = std::min(1.0, z + 12.0 * v);
        if (!(hi > lo)) return 0.0;
        return composite_gauss([&](double s) { return (*this)(s) * gaussian_density(z - s, v); }, lo, hi, 16);
    }

    /// (K f0)(x)
    double convolved(const ConvolutionKernel& k, double x) const {
        return convolve_function(k, [this](double s) { return (*this)(s); }, 0.0, 1.0, x, 16);
    }

  private:
    static std::vector<double> derivative(const std::vector<double>& c) {
        std::vector<double> d(c.size() > 1 ? c.size() - 1 : 1, 0.0);
        for (std::size_t i = 1; i < c.size(); ++i) d[i - 1] = static_cast<double>(i) * c[i];
        return d;
    }
    static double integrate_square(const std::vector<double>& c) {
        double s = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i)
            for (std::size_t j = 0; j < c.size(); ++j) s += c[i] * c[j] / static_cast<double>(i + j + 1);
        return s;
    }

    int beta_;
    double amp_ = 0.0;
    double l2_sq_ = 0.0;
    std::vector<double> poly_;
};

inline BumpTruth sobolev_bump_truth(int beta, double L) { return BumpTruth(beta, L); }

// ---------------------------------------------------------------------------
// Conjugate posterior over the (J, v) grid
// ---------------------------------------------------------------------------

struct DeconvDesign {
    std::vector<double> x;
    double sigma = 1.0;
    double half_width = 1.0;  // node range [-half_width, half_width]

    std::size_t size() const { return x.size(); }
};

/// n equispaced points on [-c_x log n, c_x log n], nodes on [-2 c_x log n, 2 c_x log n].
inline DeconvDesign deconv_uniform_design(std::size_t n, double c_x, double sigma) {
    const double h = c_x * std::log(static_cast<double>(n));
    DeconvDesign d;
    d.x = linspace(-h, h, n);
    d.sigma = sigma;
    d.half_width = 2.0 * h;
    return d;
}

struct DeconvCell {
    int J = 1;
    double v = 1.0;
    std::size_t v_index = 0;
    std::vector<int> cols;  // columns of the finest lattice
    double log_prior = 0.0;
    double logdet = 0.0;
    Eigen::LLT<Eigen::MatrixXd> precision;
    bool ridge_applied = false;
};

/// Per observation vector: marginal likelihoods, weights and means for every cell.
struct DeconvFit {
    std::vector<double> log_marginal;
    std::vector<double> weight;
    std::vector<Eigen::VectorXd> mean;

    std::size_t pick(double u) const {
        double c = 0.0;
        for (std::size_t k = 0; k < weight.size(); ++k) {
            c += weight[k];
            if (u < c) return k;
        }
        return weight.size() - 1;
    }
};

/// Truth-dependent quantities for norm evaluation without revisiting the design.
struct DeconvTruthTerms {
    std::vector<Eigen::VectorXd> xt_k0;  // X^T Kf0(x) per v
    std::vector<Eigen::VectorXd> h;      // (f0 * phi_v)(z_k) per v
    double k0_sq = 0.0;                  // sum_i Kf0(x_i)^2
    double f0_sq = 0.0;                  // ||f0||^2
};

struct DeconvPosterior {
    Lattice finest;
    std::size_t n = 0;
    std::vector<double> v_grid;
    std::vector<DeconvCell> cells;
    std::vector<DeconvFit> fits;
    std::vector<Eigen::MatrixXd> xtx;           // per v, finest lattice
    std::vector<std::vector<double>> l2_gram;   // per v, Toeplitz phi_{sqrt2 v}
    double norm_window = 0.0;                   // > 0: inverse norm over [-norm_window, norm_window]
    std::vector<Eigen::MatrixXd> l2_window;     // per v, finest lattice
    std::optional<DeconvTruthTerms> truth;
    bool any_ridge = false;

    /// Weights of a posterior draw from cell `c` given standard normals z.
    Eigen::VectorXd draw(std::size_t fit, std::size_t c, const Eigen::VectorXd& z) const {
        return fits[fit].mean[c] + cells[c].precision.matrixU().solve(z);
    }

    MixtureFunction mixture(std::size_t c, const Eigen::VectorXd& w) const {
        const auto& cell = cells[c];
        MixtureFunction mf = make_mixture(cell.J, cell.v, -finest.node(0));
        if (static_cast<int>(w.size()) != mf.size()) throw std::logic_error("cell lattice mismatch");
        for (int k = 0; k < mf.size(); ++k) mf.w[k] = w[k];
        return mf;
    }

    /// ||f - f0||^2 for weights w in cell c, over the norm window when one is set.
    double inverse_sq(std::size_t c, const Eigen::VectorXd& w) const {
        const auto& cell = cells[c];
        const int m = static_cast<int>(cell.cols.size());
        double q = 0.0;
        if (norm_window > 0.0) {
            const auto& G = l2_window[cell.v_index];
            for (int i = 0; i < m; ++i) {
                double r = 0.0;
                for (int j = 0; j < m; ++j) r += w[j] * G(cell.cols[i], cell.cols[j]);
                q += w[i] * r;
            }
        } else {
            const auto& g = l2_gram[cell.v_index];
            const int L = finest.J / cell.J;
            for (int i = 0; i < m; ++i) {
                double r = 0.0;
                for (int j = 0; j < m; ++j) r += w[j] * g[std::abs(i - j) * L];
                q += w[i] * r;
            }
        }
        double lin = 0.0;
        for (int i = 0; i < m; ++i) lin += w[i] * truth->h[cell.v_index][cell.cols[i]];
        return std::max(0.0, q - 2.0 * lin + truth->f0_sq);
    }

    /// (1/n) sum_i (Kf(x_i) - Kf0(x_i))^2 for weights w in cell c.
    double direct_sq(std::size_t c, const Eigen::VectorXd& w) const {
        const auto& cell = cells[c];
        const auto& X = xtx[cell.v_index];
        const int m = static_cast<int>(cell.cols.size());
        double q = 0.0, lin = 0.0;
        for (int i = 0; i < m; ++i) {
            double r = 0.0;
            for (int j = 0; j < m; ++j) r += X(cell.cols[i], cell.cols[j]) * w[j];
            q += w[i] * r;
            lin += w[i] * truth->xt_k0[cell.v_index][cell.cols[i]];
        }
        return std::max(0.0, (q - 2.0 * lin + truth->k0_sq) / static_cast<double>(n));
    }
};

/// Exact conjugate posterior for every (J, v) cell and every column of Y.
/// Weight prior N(0, I); cell prior Pi_J(J) Pi_v(v) v (log-spaced v grid).
inline DeconvPosterior deconv_posterior(const DeconvDesign& design, const Eigen::MatrixXd& Y,
                                        const ConvolutionKernel& kernel, const MixturePriorSpec& spec,
                                        const VPrior& vprior, std::span<const int> J_grid,
                                        std::span<const double> v_grid, const BumpTruth* truth = nullptr,
                                        double norm_window = 0.0) {
    const std::size_t n = design.size();
    if (norm_window > 0.0 && norm_window < 1.0)
        throw std::invalid_argument("deconv_posterior: norm window must contain the truth support [0, 1]");
    if (static_cast<std::size_t>(Y.rows()) != n) throw std::invalid_argument("deconv_posterior: Y rows must equal n");
    if (J_grid.empty() || v_grid.empty()) throw std::invalid_argument("deconv_posterior: empty grid");
    int Lcm = 1;
    for (int J : J_grid) {
        if (J < 1) throw std::invalid_argument("deconv_posterior: J must be positive");
        Lcm = std::lcm(Lcm, J);
    }
    if (Lcm > 4096) throw std::invalid_argument("deconv_posterior: J grid lattice too fine");

    DeconvPosterior post;
    post.n = n;
    post.finest = Lattice::symmetric(Lcm, design.half_width);
    post.v_grid.assign(v_grid.begin(), v_grid.end());
    post.norm_window = truth ? norm_window : 0.0;
    const int mf = post.finest.count;
    const double s2 = design.sigma * design.sigma;
    const std::size_t R = static_cast<std::size_t>(Y.cols());
    post.fits.resize(R);
    Eigen::VectorXd yy = Y.colwise().squaredNorm().transpose();

    Eigen::VectorXd k0;
    if (truth) {
        post.truth.emplace();
        k0.resize(n);
        for (std::size_t i = 0; i < n; ++i) k0[i] = truth->convolved(kernel, design.x[i]);
        post.truth->k0_sq = k0.squaredNorm();
        post.truth->f0_sq = truth->l2_sq();
    }

    Eigen::MatrixXd X(n, mf);
    for (std::size_t vi = 0; vi < v_grid.size(); ++vi) {
        const double v = v_grid[vi];
        // columns depend on x - z only through the kernel image
        for (int k = 0; k < mf; ++k) {
            const double z = post.finest.node(k);
            for (std::size_t i = 0; i < n; ++i) X(i, k) = kernel_component(kernel, v, design.x[i] - z);
        }
        Eigen::MatrixXd G = Eigen::MatrixXd::Zero(mf, mf);
        G.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
        G = G.selfadjointView<Eigen::Lower>();
        const Eigen::MatrixXd XtY = X.transpose() * Y;
        post.xtx.push_back(G);
        post.l2_gram.push_back(l2_gram_toeplitz(post.finest, v));
        if (truth) {
            post.truth->xt_k0.push_back(X.transpose() * k0);
            Eigen::VectorXd h(mf);
            for (int k = 0; k < mf; ++k) h[k] = truth->smoothed(v, post.finest.node(k));
            post.truth->h.push_back(std::move(h));
            if (post.norm_window > 0.0) post.l2_window.push_back(window_gram(post.finest, v, post.norm_window));
        }

        for (int J : J_grid) {
            DeconvCell cell;
            cell.J = J;
            cell.v = v;
            cell.v_index = vi;
            const Lattice lat = Lattice::symmetric(J, design.half_width);
            const int stride = Lcm / J;
            for (int k = 0; k < lat.count; ++k) cell.cols.push_back((lat.j_first + k) * stride - post.finest.j_first);
            const int m = lat.count;
            Eigen::MatrixXd A(m, m);
            for (int a = 0; a < m; ++a)
                for (int b = 0; b < m; ++b) A(a, b) = G(cell.cols[a], cell.cols[b]) / s2;
            A.diagonal().array() += 1.0;
            cell.precision.compute(A);
            if (cell.precision.info() != Eigen::Success) {
                A.diagonal().array() += 1e-10 * A.trace() / m;
                cell.ridge_applied = true;
                post.any_ridge = true;
                cell.precision.compute(A);
                if (cell.precision.info() != Eigen::Success)
                    throw SingularSystem("deconvolution posterior precision is singular");
            }
            const auto& LL = cell.precision.matrixLLT();
            for (int a = 0; a < m; ++a) cell.logdet += 2.0 * std::log(LL(a, a));
            cell.log_prior = spec.log_pi_J(J) + vprior.log_density(v) + std::log(v);

            Eigen::MatrixXd B(m, R);
            for (int a = 0; a < m; ++a) B.row(a) = XtY.row(cell.cols[a]) / s2;
            const Eigen::MatrixXd M = cell.precision.solve(B);
            for (std::size_t r = 0; r < R; ++r) {
                const double quad = B.col(r).dot(M.col(r));
                const double lml = -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi * s2) +
                                           cell.logdet + yy[r] / s2 - quad);
                post.fits[r].log_marginal.push_back(lml);
                post.fits[r].mean.push_back(M.col(r));
            }
            post.cells.push_back(std::move(cell));
        }
    }
    for (auto& fit : post.fits) {
        std::vector<double> lw(post.cells.size());
        for (std::size_t c = 0; c < lw.size(); ++c) lw[c] = post.cells[c].log_prior + fit.log_marginal[c];
        const double z = log_sum_exp(lw);
        fit.weight.resize(lw.size());
        for (std::size_t c = 0; c < lw.size(); ++c) fit.weight[c] = std::exp(lw[c] - z);
    }
    return post;
}

inline DeconvPosterior deconv_posterior(const DeconvDesign& design, std::span<const double> y,
                                        const ConvolutionKernel& kernel, const MixturePriorSpec& spec,
                                        std::span<const int> J_grid, std::span<const double> v_grid) {
    const VPrior vprior(spec);
    const Eigen::MatrixXd Y = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    return deconv_posterior(design, Y, kernel, spec, vprior, J_grid, v_grid);
}

/// Dyadic J in [1, J_max] and log-uniform v grid.
inline std::vector<int> deconv_default_j_grid(int J_max = 64) {
    std::vector<int> g;
    for (int J = 1; J <= J_max; J *= 2) g.push_back(J);
    return g;
}

inline std::vector<double> deconv_default_v_grid(double lo = 1e-3, double hi = 10.0, std::size_t count = 40) {
    return logspace(lo, hi, count);
}

}  // namespace contraq

#endif  // CONTRAQ_DECONV_MIXTURE_HPP
