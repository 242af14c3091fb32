#ifndef CONTRAQ_EXPERIMENTS_HPP
#define CONTRAQ_EXPERIMENTS_HPP

// Replicated contraction experiments, slope fits, the implied-radius report and
// the lemma suite.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "contraq/core.hpp"
#include "contraq/deconv_mixture.hpp"
#include "contraq/rates_modulus.hpp"
#include "contraq/seq_model.hpp"
#include "contraq/spline_volterra.hpp"

namespace contraq {

struct ExperimentConfig {
    Regime regime = Regime::MildSeq;

    // sequence model
    double alpha = 1.0;
    double beta = 1.0;
    double p = 1.0;
    double C = 1.0;
    double gamma = 1.0;
    double xi = 0.0;
    double prior_scale = 1.0;
    double truth_radius = 1.0;
    double truth_eta = 0.5;
    std::size_t head = 1u << 14;
    double tail_c = 8.0;

    // regression regimes
    double sigma = 1.0;
    int q = 3;
    std::string j_prior = "poisson";
    std::string j_grid = "dyadic";  // dyadic | full
    double j_param = 8.0;
    double tau = 1.0;
    double holder_L = 1.0;
    int holder_terms = 12;
    int j_max = 256;

    double c_x = 0.3;
    double sobolev_L = 1.0;
    int deconv_j_max = 64;
    double v_min = 1e-3;
    double v_max = 10.0;
    int v_count = 40;
    double mix_s = 2.0;
    double mix_q = 1.0;
    double mix_u = 1.0;
    double mix_c = 0.05;
    double mix_v_support = 10.0;
    double window_a = 1.0;

    // orchestration
    std::vector<std::size_t> n_grid;
    int replications = 50;
    double credible_level = 0.9;
    int draws = 200;
    std::uint64_t seed = 20240601;
    double M = 1.0;
    double slope_tol = 0.07;
    bool log_nuisance = false;
    int threads = 0;  // 0: hardware concurrency

    /// Regime-specific defaults.
    static ExperimentConfig defaults(Regime r) {
        ExperimentConfig c;
        c.regime = r;
        auto dyadic = [](int lo, int hi) {
            std::vector<std::size_t> g;
            for (int e = lo; e <= hi; ++e) g.push_back(std::size_t{1} << e);
            return g;
        };
        switch (r) {
        case Regime::MildSeq: c.n_grid = dyadic(8, 16); break;
        case Regime::SevereSeq:
            c.n_grid = dyadic(8, 16);
            c.p = 1.0;
            c.gamma = 0.5;
            c.xi = 0.0;
            break;
        case Regime::Volterra:
            c.n_grid = dyadic(8, 14);
            c.sigma = 0.01;
            c.j_grid = "full";
            c.j_max = 128;
            c.replications = 20;
            c.slope_tol = 0.10;
            break;
        case Regime::Deconv:
            c.n_grid = dyadic(6, 12);
            c.p = 2.0;
            c.sigma = 0.01;
            c.replications = 20;
            c.draws = 100;
            c.slope_tol = 0.10;
            break;
        }
        return c;
    }

    RateParams rate_params() const {
        RateParams r;
        r.alpha = alpha;
        r.beta = beta;
        r.p = regime == Regime::Volterra ? 1.0 : p;
        r.gamma = gamma;
        r.xi = xi;
        r.t = regime == Regime::Volterra ? spline_prior().tail_exponent() : 0.0;
        return r;
    }

    SplinePrior spline_prior() const {
        SplinePrior sp;
        sp.family = j_prior == "geometric" ? SplinePrior::Family::Geometric : SplinePrior::Family::Poisson;
        sp.param = j_param;
        sp.tau = tau;
        return sp;
    }

    /// Dyadic J in [2, j_max], or every J in [q, j_max].
    std::vector<int> spline_j_grid() const {
        if (j_grid == "dyadic") return dyadic_j_grid(q, 2, j_max);
        if (j_grid != "full") throw std::invalid_argument("j_grid: dyadic or full");
        std::vector<int> g;
        for (int J = std::max(q, 2); J <= j_max; ++J) g.push_back(J);
        return g;
    }

    MixturePriorSpec mixture_prior() const {
        MixturePriorSpec m;
        m.s = mix_s;
        m.J_max = deconv_j_max;
        m.q = mix_q;
        m.u = mix_u;
        m.c = mix_c;
        m.v_max = mix_v_support;
        return m;
    }
};

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct ReplicationRecord {
    Regime regime = Regime::MildSeq;
    std::size_t n = 0;
    int replication = 0;
    double radius_direct = 0.0;
    double radius_inverse = 0.0;
    double sn_mass = 0.0;
    double implied_radius = 0.0;
    std::uint64_t seed = 0;
};

struct CellSummary {
    std::size_t n = 0;
    MeanSe inverse;
    MeanSe direct;
    MeanSe sn_mass;
    int completed = 0;
    int failures = 0;
    bool aborted = false;
    std::string last_error;
};

struct SlopeFit {
    double slope = 0.0;
    double se = 0.0;
    double intercept = 0.0;
    double log_power = 0.0;  // coefficient of log log n when fitted
};

struct RateFitResult {
    ExperimentConfig config;
    std::vector<ReplicationRecord> records;
    std::vector<CellSummary> cells;
    SlopeFit inverse_fit;
    SlopeFit direct_fit;
    RateExponents theory;
    double tolerance = 0.0;
    bool inverse_asserted = true;
    bool direct_asserted = true;
    bool inverse_pass = false;
    bool direct_pass = false;

    bool pass() const {
        bool ok = (!inverse_asserted || inverse_pass) && (!direct_asserted || direct_pass);
        for (const auto& c : cells) ok = ok && !c.aborted;
        return ok;
    }
};

// ---------------------------------------------------------------------------
// Fitting and aggregation
// ---------------------------------------------------------------------------

/// OLS of log r on log n (plus log log n when requested).
inline SlopeFit fit_slope(std::span<const double> n, std::span<const double> r, bool log_nuisance = false) {
    const std::size_t m = n.size();
    const int k = log_nuisance ? 3 : 2;
    if (m != r.size() || m < static_cast<std::size_t>(k) + 1) throw std::invalid_argument("fit_slope needs more points");
    Eigen::MatrixXd X(m, k);
    Eigen::VectorXd y(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (!(n[i] > 1.0) || !(r[i] > 0.0)) throw std::invalid_argument("fit_slope needs n > 1 and r > 0");
        X(i, 0) = 1.0;
        X(i, 1) = std::log(n[i]);
        if (log_nuisance) X(i, 2) = std::log(std::log(n[i]));
        y[i] = std::log(r[i]);
    }
    const Eigen::MatrixXd XtX = X.transpose() * X;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(XtX);
    const Eigen::VectorXd b = ldlt.solve(X.transpose() * y);
    const double rss = (y - X * b).squaredNorm();
    const double s2 = rss / static_cast<double>(m - k);
    const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(k, k)) * s2;
    SlopeFit f;
    f.intercept = b[0];
    f.slope = b[1];
    f.se = std::sqrt(std::max(0.0, cov(1, 1)));
    if (log_nuisance) f.log_power = b[2];
    return f;
}

/// Runs `body(i)` for i in [0, count) on up to `threads` workers.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
    unsigned t = threads > 0 ? static_cast<unsigned>(threads) : std::max(1u, std::thread::hardware_concurrency());
    t = static_cast<unsigned>(std::min<std::size_t>(t, count));
    if (t <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex mu;
    for (unsigned w = 0; w < t; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

inline void validate(const ExperimentConfig& c) {
    if (c.n_grid.empty()) throw std::invalid_argument("n_grid: must be nonempty");
    for (std::size_t i = 1; i < c.n_grid.size(); ++i)
        if (c.n_grid[i] <= c.n_grid[i - 1]) throw std::invalid_argument("n_grid: strictly increasing");
    if (c.replications < 1) throw std::invalid_argument("replications: must be positive");
    if (!(c.credible_level > 0.0 && c.credible_level < 1.0)) throw std::invalid_argument("credible_level: in (0,1)");
}

namespace detail {

/// Per-replication measurement; `cell` is the n index.
using ReplicationFn = std::function<ReplicationRecord(std::size_t cell, int rep)>;

inline void run_cells(const ExperimentConfig& cfg, RateFitResult& out,
                      const std::function<ReplicationFn(std::size_t cell)>& prepare) {
    for (std::size_t ci = 0; ci < cfg.n_grid.size(); ++ci) {
        CellSummary cs;
        cs.n = cfg.n_grid[ci];
        ReplicationFn fn;
        try {
            fn = prepare(ci);
        } catch (const Error& e) {
            // every replication would fail the same way
            cs.failures = std::min(3, cfg.replications);
            cs.aborted = true;
            cs.last_error = e.what();
            out.cells.push_back(cs);
            continue;
        }
        std::vector<std::optional<ReplicationRecord>> recs(cfg.replications);
        std::atomic<int> failures{0};
        std::mutex mu;
        parallel_for(static_cast<std::size_t>(cfg.replications), cfg.threads, [&](std::size_t r) {
            if (failures.load() >= 3) return;
            try {
                recs[r] = fn(ci, static_cast<int>(r));
            } catch (const Error& e) {
                ++failures;
                std::lock_guard lock(mu);
                cs.last_error = e.what();
            }
        });
        cs.failures = failures.load();
        cs.aborted = cs.failures >= 3;
        std::vector<double> inv, dir, sn;
        if (!cs.aborted)
            for (auto& r : recs)
                if (r) {
                    out.records.push_back(*r);
                    inv.push_back(r->radius_inverse);
                    dir.push_back(r->radius_direct);
                    sn.push_back(r->sn_mass);
                }
        cs.completed = static_cast<int>(inv.size());
        cs.inverse = mean_and_se(inv);
        cs.direct = mean_and_se(dir);
        cs.sn_mass = mean_and_se(sn);
        out.cells.push_back(cs);
    }
}

inline void finish_fit(RateFitResult& out) {
    std::vector<double> n, ri, rd;
    for (const auto& c : out.cells)
        if (!c.aborted && c.completed > 0 && c.inverse.mean > 0.0 && c.direct.mean > 0.0) {
            n.push_back(static_cast<double>(c.n));
            ri.push_back(c.inverse.mean);
            rd.push_back(c.direct.mean);
        }
    const std::size_t need = out.config.log_nuisance ? 4 : 3;
    if (n.size() < need) {
        out.inverse_pass = out.direct_pass = false;
        return;
    }
    out.inverse_fit = fit_slope(n, ri, out.config.log_nuisance);
    out.direct_fit = fit_slope(n, rd, out.config.log_nuisance);
    out.inverse_pass = std::abs(out.inverse_fit.slope + out.theory.inverse_exponent) <= out.tolerance;
    out.direct_pass = std::abs(out.direct_fit.slope + out.theory.direct_exponent) <= out.tolerance;
}

// ---- sequence regimes -------------------------------------------------------

struct SequenceSetup {
    IllPosedSpec spec;
    GaussianProductPrior prior;
    CoefficientSequence f0;
    double f0_sobolev = 0.0;
    TailSet tail_set;
    std::size_t N = 0;
};

inline SequenceSetup sequence_setup(const ExperimentConfig& cfg, double n) {
    SequenceSetup s;
    s.N = cfg.head;
    s.f0 = make_truth(cfg.beta, cfg.truth_radius, cfg.truth_eta, cfg.head);
    s.f0_sobolev = sobolev_norm(s.f0, cfg.beta);
    if (cfg.regime == Regime::MildSeq) {
        s.spec = IllPosedSpec::mild(cfg.p, cfg.C);
        s.prior = GaussianProductPrior::mild(cfg.alpha, cfg.prior_scale);
        const double den = 1.0 + 2.0 * cfg.alpha + 2.0 * cfg.p;
        s.tail_set.k_n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::pow(n, 1.0 / den))));
        s.tail_set.rho_n = std::pow(n, -std::min(cfg.alpha, cfg.beta) / den);
    } else {
        s.spec = IllPosedSpec::severe(cfg.gamma, cfg.p);
        const std::size_t k = severe_k_n(cfg.alpha, cfg.xi, cfg.gamma, cfg.p, n);
        if (k > cfg.head) throw TruncationTooCoarse("severe truncation level exceeds the head length");
        s.prior = GaussianProductPrior::severe(cfg.alpha, cfg.xi, cfg.p, k, cfg.prior_scale);
        s.tail_set.k_n = k;
        s.tail_set.rho_n = std::pow(std::log(n), -cfg.beta / cfg.p);
    }
    s.tail_set.c = cfg.tail_c;
    return s;
}

struct SequenceMeasure {
    double inverse = 0.0;
    double direct = 0.0;
    double sn_mass = 0.0;
};

/// Posterior draws of f giving inverse and direct distances and the S_n^c fraction
/// in a single pass; coordinates beyond the head contribute their expectation.
inline SequenceMeasure sequence_measure(const SequenceSetup& s, const DiagonalGaussianPosterior& post, double level,
                                        int draws, std::uint64_t seed) {
    const std::size_t N = post.mean.size();
    std::vector<double> diff(N), sd(N), k2(N);
    std::size_t last = 0;  // coordinates past `last` are deterministic zeros
    for (std::size_t i = 1; i <= N; ++i) {
        diff[i - 1] = post.mean[i - 1] - s.f0[i];
        sd[i - 1] = std::sqrt(post.var[i - 1]);
        k2[i - 1] = std::pow(kappa(s.spec, i), 2);
        if (post.var[i - 1] > 0.0 || post.mean[i - 1] != 0.0) last = i;
    }
    double inv_fixed = 0.0, dir_fixed = 0.0;
    for (std::size_t i = last; i < N; ++i) {
        inv_fixed += diff[i] * diff[i];
        dir_fixed += k2[i] * diff[i] * diff[i];
    }
    inv_fixed += s.prior.variance_tail(N).value + s.f0.tail_square().value;
    const PowerExpShape kf0 = s.f0.tail() * s.spec.shape();
    dir_fixed += s.prior.variance_tail(N, &s.spec).value + tail_sum(kf0 * kf0, N).value;
    const double tail_fixed = s.prior.variance_tail(N).value;
    const std::size_t k = s.tail_set.k_n;

    Rng rng = make_rng(seed);
    Normal z(0.0, 1.0);
    std::vector<double> inv(draws), dir(draws);
    int outside = 0;
    for (int d = 0; d < draws; ++d) {
        double a = 0.0, b = 0.0, t = 0.0;
        for (std::size_t i = 0; i < last; ++i) {
            const double e = diff[i] + sd[i] * z(rng);
            a += e * e;
            b += k2[i] * e * e;
            if (i >= k) {
                const double f = e + s.f0[i + 1];
                t += f * f;
            }
        }
        inv[d] = std::sqrt(a + inv_fixed);
        dir[d] = std::sqrt(b + dir_fixed);
        if (t + tail_fixed > s.tail_set.radius_sq()) ++outside;
    }
    SequenceMeasure m;
    m.inverse = empirical_quantile(inv, level);
    m.direct = empirical_quantile(dir, level);
    m.sn_mass = static_cast<double>(outside) / draws;
    return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Regime drivers
// ---------------------------------------------------------------------------

inline RateFitResult run_sequence_experiment(const ExperimentConfig& cfg) {
    RateFitResult out;
    out.config = cfg;
    out.theory = rate_exponent(cfg.regime, cfg.rate_params());
    out.tolerance = cfg.slope_tol;
    out.inverse_asserted = cfg.regime == Regime::MildSeq;
    out.direct_asserted = cfg.regime == Regime::MildSeq;
    detail::run_cells(cfg, out, [&](std::size_t ci) -> detail::ReplicationFn {
        const double n = static_cast<double>(cfg.n_grid[ci]);
        auto setup = std::make_shared<detail::SequenceSetup>(detail::sequence_setup(cfg, n));
        return [setup, &cfg, n](std::size_t cell, int r) {
            const auto& s = *setup;
            ReplicationRecord rec;
            rec.regime = cfg.regime;
            rec.n = cfg.n_grid[cell];
            rec.replication = r;
            rec.seed = stream_seed(cfg.seed, r, Stream::Observation, cell);
            const auto obs = observe(s.f0, s.spec, n, s.N, rec.seed);
            const auto post = posterior(s.prior, obs, s.spec, Space::FSpace);
            const auto m = detail::sequence_measure(s, post, cfg.credible_level, cfg.draws,
                                                    stream_seed(cfg.seed, r, Stream::PosteriorDraw, cell));
            rec.radius_inverse = m.inverse;
            rec.radius_direct = m.direct;
            rec.sn_mass = m.sn_mass;
            rec.implied_radius =
                modulus_upper_bound(s.tail_set, s.spec, s.f0_sobolev, cfg.beta, cfg.M * m.direct).total();
            return rec;
        };
    });
    detail::finish_fit(out);
    if (cfg.regime == Regime::SevereSeq) {
        // logarithmic inverse rate: the fitted power-law slopes are reported only
        out.inverse_pass = out.direct_pass = true;
    }
    return out;
}

inline RateFitResult run_volterra_experiment(const ExperimentConfig& cfg) {
    RateFitResult out;
    out.config = cfg;
    out.theory = rate_exponent(Regime::Volterra, cfg.rate_params());
    out.tolerance = cfg.slope_tol;
    out.direct_asserted = false;
    const auto truth = std::make_shared<HolderTruth>(cfg.beta, cfg.holder_L, cfg.holder_terms);
    const SplinePrior prior = cfg.spline_prior();
    const auto grid = cfg.spline_j_grid();
    detail::run_cells(cfg, out, [&](std::size_t ci) -> detail::ReplicationFn {
        const std::size_t n = cfg.n_grid[ci];
        auto design = std::make_shared<RegressionDesign>(uniform_design(n, cfg.sigma));
        auto f0 = std::make_shared<std::vector<double>>(n);
        auto k0 = std::make_shared<std::vector<double>>(n);
        for (std::size_t i = 0; i < n; ++i) {
            (*f0)[i] = (*truth)(design->x[i]);
            (*k0)[i] = truth->primitive(design->x[i]);
        }
        auto caches = std::make_shared<std::map<int, SplineDesignCache>>();
        for (int J : grid) caches->emplace(J, SplineDesignCache(*design, BSplineBasis::with_dimension(cfg.q, J)));
        // exact modulus constants, computed on first use per J
        struct ModulusCache {
            std::mutex mu;
            std::map<int, double> value;
        };
        auto modulus = std::make_shared<ModulusCache>();
        auto modulus_at = [modulus, design, q = cfg.q](int J) {
            std::lock_guard lock(modulus->mu);
            auto it = modulus->value.find(J);
            if (it == modulus->value.end())
                it = modulus->value
                         .emplace(J, calibrate_spline_modulus(*design, BSplineBasis::with_dimension(q, J), 0, 0)
                                         .exact_sup)
                         .first;
            return it->second;
        };
        const double cutoff = volterra_sn_cutoff(static_cast<double>(n), cfg.beta);
        return [=, &cfg](std::size_t cell, int r) {
            ReplicationRecord rec;
            rec.regime = Regime::Volterra;
            rec.n = n;
            rec.replication = r;
            rec.seed = stream_seed(cfg.seed, r, Stream::Observation, cell);
            Rng orng = make_rng(rec.seed);
            Normal z(0.0, 1.0);
            std::vector<double> y(n);
            for (std::size_t i = 0; i < n; ++i) y[i] = (*k0)[i] + cfg.sigma * z(orng);
            const auto post = spline_posterior(*design, y, prior, cfg.q, grid);

            Rng rng = make_rng(stream_seed(cfg.seed, r, Stream::PosteriorDraw, cell));
            std::uniform_real_distribution<double> U(0.0, 1.0);
            std::vector<double> inv(cfg.draws), dir(cfg.draws), a, f(n), kf(n);
            for (int d = 0; d < cfg.draws; ++d) {
                const auto& comp = post.components[post.pick(U(rng))];
                Eigen::VectorXd zz(comp.J - 1);
                for (auto& v : zz) v = z(rng);
                comp.draw(zz, a);
                caches->at(comp.J).evaluate(a, f, kf);
                inv[d] = empirical_norm(f, *f0);
                dir[d] = empirical_norm(kf, *k0);
            }
            rec.radius_inverse = empirical_quantile(inv, cfg.credible_level);
            rec.radius_direct = empirical_quantile(dir, cfg.credible_level);
            double above = 0.0, cum = 0.0;
            int j_level = post.components.back().J;
            bool found = false;
            for (const auto& c : post.components) {
                if (c.J > cutoff) above += c.weight;
                cum += c.weight;
                if (!found && cum >= cfg.credible_level) {
                    j_level = c.J;
                    found = true;
                }
            }
            rec.sn_mass = above;
            rec.implied_radius = spline_modulus_report(modulus_at(j_level), j_level, cfg.M * rec.radius_direct);
            return rec;
        };
    });
    detail::finish_fit(out);
    return out;
}

inline RateFitResult run_deconv_experiment(const ExperimentConfig& cfg) {
    if (std::abs(cfg.beta - std::round(cfg.beta)) > 0.0 || cfg.beta < 1.0)
        throw std::invalid_argument("beta: Deconv needs an integer beta >= 1");
    RateFitResult out;
    out.config = cfg;
    out.theory = rate_exponent(Regime::Deconv, cfg.rate_params());
    out.tolerance = cfg.slope_tol;
    out.direct_asserted = false;
    const auto kernel = ConvolutionKernel::laplace();
    const auto truth = sobolev_bump_truth(static_cast<int>(cfg.beta), cfg.sobolev_L);
    const MixturePriorSpec spec = cfg.mixture_prior();
    const VPrior vprior(spec);
    const auto Jg = deconv_default_j_grid(cfg.deconv_j_max);
    const auto vg = deconv_default_v_grid(cfg.v_min, cfg.v_max, static_cast<std::size_t>(cfg.v_count));

    for (std::size_t ci = 0; ci < cfg.n_grid.size(); ++ci) {
        const std::size_t n = cfg.n_grid[ci];
        const auto design = deconv_uniform_design(n, cfg.c_x, cfg.sigma);
        const double window = 0.5 * design.half_width;
        std::vector<double> k0(n);
        for (std::size_t i = 0; i < n; ++i) k0[i] = truth.convolved(kernel, design.x[i]);
        Eigen::MatrixXd Y(n, cfg.replications);
        std::vector<std::uint64_t> seeds(cfg.replications);
        for (int r = 0; r < cfg.replications; ++r) {
            seeds[r] = stream_seed(cfg.seed, r, Stream::Observation, ci);
            Rng rng = make_rng(seeds[r]);
            Normal z(0.0, 1.0);
            for (std::size_t i = 0; i < n; ++i) Y(i, r) = k0[i] + cfg.sigma * z(rng);
        }
        CellSummary cs;
        cs.n = n;
        std::optional<DeconvPosterior> post;
        try {
            post.emplace(deconv_posterior(design, Y, kernel, spec, vprior, Jg, vg, &truth, window));
        } catch (const Error& e) {
            cs.failures = cfg.replications;
            cs.aborted = true;
            cs.last_error = e.what();
            out.cells.push_back(cs);
            continue;
        }
        const FourierWindow win{deconv_a_n(static_cast<double>(n), cfg.beta, cfg.p), cfg.window_a};
        const double min_lhat = min_fourier_on_window(kernel, win.a_n);
        const double C1 = std::sqrt(1.0 + 1.0 / win.a) / (min_lhat * std::pow(win.a_n, cfg.p));
        const double C2 = 2.0 * cfg.sobolev_L;
        std::vector<ReplicationRecord> recs(cfg.replications);
        parallel_for(static_cast<std::size_t>(cfg.replications), cfg.threads, [&](std::size_t r) {
            ReplicationRecord& rec = recs[r];
            rec.regime = Regime::Deconv;
            rec.n = n;
            rec.replication = static_cast<int>(r);
            rec.seed = seeds[r];
            Rng rng = make_rng(stream_seed(cfg.seed, r, Stream::PosteriorDraw, ci));
            Normal z(0.0, 1.0);
            std::uniform_real_distribution<double> U(0.0, 1.0);
            std::vector<double> inv(cfg.draws), dir(cfg.draws);
            int outside = 0;
            for (int d = 0; d < cfg.draws; ++d) {
                const std::size_t c = post->fits[r].pick(U(rng));
                Eigen::VectorXd zz(post->cells[c].cols.size());
                for (auto& v : zz) v = z(rng);
                const Eigen::VectorXd w = post->draw(r, c, zz);
                inv[d] = std::sqrt(post->inverse_sq(c, w));
                dir[d] = std::sqrt(post->direct_sq(c, w));
                if (!sn_membership(post->mixture(c, w), win).member) ++outside;
            }
            rec.radius_inverse = empirical_quantile(inv, cfg.credible_level);
            rec.radius_direct = empirical_quantile(dir, cfg.credible_level);
            rec.sn_mass = static_cast<double>(outside) / cfg.draws;
            // empirical norm over the design window -> L2 norm over the window
            const double delta = cfg.M * rec.radius_direct * std::sqrt(2.0 * window);
            rec.implied_radius = deconv_modulus(win, cfg.p, cfg.beta, delta, C1, C2);
        });
        std::vector<double> inv, dir, sn;
        for (const auto& r : recs) {
            out.records.push_back(r);
            inv.push_back(r.radius_inverse);
            dir.push_back(r.radius_direct);
            sn.push_back(r.sn_mass);
        }
        cs.completed = cfg.replications;
        cs.inverse = mean_and_se(inv);
        cs.direct = mean_and_se(dir);
        cs.sn_mass = mean_and_se(sn);
        out.cells.push_back(cs);
    }
    detail::finish_fit(out);
    return out;
}

inline RateFitResult run_contraction_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    switch (cfg.regime) {
    case Regime::MildSeq:
    case Regime::SevereSeq: return run_sequence_experiment(cfg);
    case Regime::Volterra: return run_volterra_experiment(cfg);
    case Regime::Deconv: return run_deconv_experiment(cfg);
    }
    throw std::logic_error("unhandled regime");
}

// ---------------------------------------------------------------------------
// Implied-radius report
// ---------------------------------------------------------------------------

struct ImpliedRadiusCell {
    std::size_t n = 0;
    std::size_t k_n = 0;
    double rho_n = 0.0;
    double prior_sn_bound = std::numeric_limits<double>::quiet_NaN();  // NaN: hypothesis unmet
    double mean_direct = 0.0;
    double mean_inverse = 0.0;
    double mean_implied = 0.0;
    double mean_sn_mass = 0.0;
    double fraction_within = 0.0;  // measured inverse <= implied
    int replications = 0;
    bool pass = false;
};

struct ImpliedRadiusReport {
    RateFitResult run;
    std::vector<ImpliedRadiusCell> cells;
    double required_fraction = 0.95;

    bool pass() const {
        bool ok = !cells.empty();
        for (const auto& c : cells) ok = ok && c.pass;
        return ok;
    }
};

inline ImpliedRadiusReport run_implied_radius_report(const ExperimentConfig& cfg) {
    if (cfg.regime != Regime::MildSeq && cfg.regime != Regime::SevereSeq)
        throw std::invalid_argument("regime: implied-radius report needs MildSeq or SevereSeq");
    validate(cfg);
    ImpliedRadiusReport rep;
    rep.run = run_sequence_experiment(cfg);
    for (const auto& cs : rep.run.cells) {
        ImpliedRadiusCell c;
        c.n = cs.n;
        const auto setup = detail::sequence_setup(cfg, static_cast<double>(cs.n));
        c.k_n = setup.tail_set.k_n;
        c.rho_n = setup.tail_set.rho_n;
        if (cfg.regime == Regime::SevereSeq) {
            c.prior_sn_bound = 0.0;  // the truncated prior lives on S_n
        } else {
            try {
                c.prior_sn_bound = prior_mass_tail_bound(cfg.alpha, c.k_n, c.rho_n, cfg.tail_c);
            } catch (const HypothesisUnmet&) {
            }
        }
        int within = 0;
        for (const auto& r : rep.run.records) {
            if (r.n != cs.n) continue;
            ++c.replications;
            c.mean_direct += r.radius_direct;
            c.mean_inverse += r.radius_inverse;
            c.mean_implied += r.implied_radius;
            c.mean_sn_mass += r.sn_mass;
            if (r.radius_inverse <= r.implied_radius) ++within;
        }
        if (c.replications > 0) {
            const double R = c.replications;
            c.mean_direct /= R;
            c.mean_inverse /= R;
            c.mean_implied /= R;
            c.mean_sn_mass /= R;
            c.fraction_within = within / R;
        }
        c.pass = !cs.aborted && c.replications > 0 && c.fraction_within >= rep.required_fraction;
        rep.cells.push_back(c);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Lemma suite
// ---------------------------------------------------------------------------

struct LemmaCheck {
    std::string name;
    double value = 0.0;  // measured quantity
    double bound = 0.0;  // what it is compared against
    double reported_constant = std::numeric_limits<double>::quiet_NaN();
    bool pass = false;
    std::string detail;
};

struct LemmaReport {
    std::vector<LemmaCheck> checks;
    bool pass() const {
        bool ok = !checks.empty();
        for (const auto& c : checks) ok = ok && c.pass;
        return ok;
    }
};

struct TailCell {
    double alpha;
    std::size_t k_n;
    double rho_sq;
    double c;
};

/// The 3x3 (alpha, k_n) grid of the tail-mass lemma, all cells meeting the hypothesis.
inline std::vector<TailCell> default_tail_grid() {
    std::vector<TailCell> g;
    for (double a : {1.0, 1.5, 2.0})
        for (std::size_t k : {10u, 15u, 20u}) g.push_back({a, k, 0.01, 8.0});
    return g;
}

inline LemmaCheck tail_lemma_check(const TailCell& t, std::size_t draws, std::uint64_t seed) {
    LemmaCheck c;
    std::ostringstream name;
    name << "tail_mass alpha=" << t.alpha << " k=" << t.k_n;
    c.name = name.str();
    const TailSet ts{t.k_n, std::sqrt(t.rho_sq), t.c};
    c.bound = prior_mass_tail_bound(t.alpha, t.k_n, ts.rho_n, t.c);
    const auto prior = GaussianProductPrior::mild(t.alpha);
    const auto mc = prior_mass_tail_mc(prior, ts, draws, 4000, seed);
    c.value = mc.estimate;
    c.pass = mc.estimate <= c.bound + 4.0 * mc.stderr_;
    std::ostringstream d;
    d << "MC " << mc.estimate << " +- " << mc.stderr_ << " vs bound " << c.bound;
    c.detail = d.str();
    return c;
}

/// Sum s and sum t of the truncated severe posterior against [k/(n const), k/n].
inline LemmaCheck severe_sums_check(const ExperimentConfig& cfg, double n) {
    LemmaCheck c;
    c.name = "severe_sums n=" + std::to_string(static_cast<long long>(n));
    const std::size_t k = severe_k_n(cfg.alpha, cfg.xi, cfg.gamma, cfg.p, n);
    const auto prior = GaussianProductPrior::severe(cfg.alpha, cfg.xi, cfg.p, k, cfg.prior_scale);
    const auto f0 = make_truth(cfg.beta, cfg.truth_radius, cfg.truth_eta, std::max<std::size_t>(k, 64));
    const auto rc = expected_risk_components(prior, f0, IllPosedSpec::severe(cfg.gamma, cfg.p), n);
    c.bound = static_cast<double>(k) / n;
    c.value = std::max(rc.s_sum, rc.t_sum);
    c.reported_constant = c.bound / std::min(rc.s_sum, rc.t_sum);
    c.pass = c.value <= c.bound && std::isfinite(c.reported_constant);
    std::ostringstream d;
    d << "k_n=" << k << " sum_s=" << rc.s_sum << " sum_t=" << rc.t_sum << " const=" << c.reported_constant;
    c.detail = d.str();
    return c;
}

/// Residual of log n - alpha log k - (xi + 2 gamma) k^p at the continuous root.
inline LemmaCheck severe_kn_check(const ExperimentConfig& cfg, double n) {
    LemmaCheck c;
    c.name = "severe_k_n_equation n=" + std::to_string(static_cast<long long>(n));
    const double k = severe_k_n_continuous(cfg.alpha, cfg.xi, cfg.gamma, cfg.p, n);
    c.value = std::abs(std::log(n) - cfg.alpha * std::log(k) - (cfg.xi + 2.0 * cfg.gamma) * std::pow(k, cfg.p));
    c.bound = 1e-8;
    c.pass = c.value <= c.bound;
    return c;
}

inline LemmaCheck lambert_check() {
    LemmaCheck c;
    c.name = "lambert_w residual";
    for (double x : logspace(1e-8, 1e12, 400)) {
        const double w = lambert_w(x);
        c.value = std::max(c.value, std::abs(w * std::exp(w) - x) / std::max(1.0, x));
    }
    c.bound = 1e-12;
    c.pass = c.value <= c.bound;
    c.detail = "relative residual max over x in [1e-8, 1e12]";
    return c;
}

/// Prior small-ball mass of the mild sequence model for eps in {0.5, 0.35, 0.25}.
inline std::vector<LemmaCheck> mild_smallball_checks(const ExperimentConfig& cfg, std::size_t draws) {
    std::vector<LemmaCheck> out;
    const auto prior = GaussianProductPrior::mild(cfg.alpha, cfg.prior_scale);
    const auto f0 = make_truth(cfg.beta, cfg.truth_radius, cfg.truth_eta, 400);
    const auto spec = IllPosedSpec::mild(cfg.p, cfg.C);
    int i = 0;
    for (double eps : {0.5, 0.35, 0.25}) {
        const auto sb = kl_smallball_mc(prior, f0, cfg.beta, spec, eps, 400, draws,
                                        stream_seed(cfg.seed, i++, Stream::SmallBallMC));
        LemmaCheck c;
        c.name = "kl_smallball eps=" + std::to_string(eps).substr(0, 4);
        c.value = sb.mc.estimate;
        c.reported_constant = sb.implied_c2;
        c.pass = sb.mc.estimate > 0.0;
        std::ostringstream d;
        d << "estimate " << sb.mc.estimate << " implied C2 " << sb.implied_c2
          << (sb.low_confidence ? " (low confidence)" : "");
        c.detail = d.str();
        out.push_back(c);
    }
    return out;
}

inline std::vector<LemmaCheck> deconv_prior_tail_checks(const ExperimentConfig& cfg) {
    std::vector<LemmaCheck> out;
    const VPrior prior(cfg.mixture_prior());
    for (double an : {10.0, 20.0, 40.0}) {
        const auto r = prior_sn_tail(prior, {an, cfg.window_a}, 1);
        LemmaCheck c;
        c.name = "deconv_prior_tail a_n=" + std::to_string(static_cast<int>(an));
        c.value = r.numeric_tail;
        c.bound = r.envelope;
        c.reported_constant = r.c_prime;
        c.pass = !r.degenerate && r.numeric_tail <= r.envelope;
        out.push_back(c);
    }
    return out;
}

struct DeconvSmallBall {
    std::size_t n = 0;
    double constant = std::numeric_limits<double>::quiet_NaN();  // eps_n = constant * n^{-(beta+p)/(1+2beta+2p)}
    double epsilon = 0.0;
    double mass = 0.0;
    double lower = 0.0;  // exp(-n eps^2)
    std::size_t hits = 0;
    bool found = false;
    std::vector<double> distances;  // sorted ||Kf - Kf0||_n over the prior draws
};

/// Smallest constant on a log grid with Pr(||Kf - Kf0||_n <= eps_n) >= exp(-n eps_n^2),
/// requiring at least `min_hits` prior draws inside the ball.
inline DeconvSmallBall deconv_smallball(const ExperimentConfig& cfg, std::size_t n, std::size_t draws,
                                        std::uint64_t seed, std::size_t min_hits = 10) {
    const auto kernel = ConvolutionKernel::laplace();
    const auto truth = sobolev_bump_truth(static_cast<int>(cfg.beta), cfg.sobolev_L);
    const MixturePriorSpec spec = cfg.mixture_prior();
    const VPrior vprior(spec);
    const auto design = deconv_uniform_design(n, cfg.c_x, cfg.sigma);
    std::vector<double> k0(n);
    for (std::size_t i = 0; i < n; ++i) k0[i] = truth.convolved(kernel, design.x[i]);
    std::vector<double> dist(draws);
    for (std::size_t d = 0; d < draws; ++d) {
        const auto mf = draw_mixture_prior(spec, vprior, design.half_width, stream_seed(seed, d, Stream::PriorDraw));
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double e = convolve(kernel, mf, design.x[i]) - k0[i];
            s += e * e;
        }
        dist[d] = std::sqrt(s / static_cast<double>(n));
    }
    std::sort(dist.begin(), dist.end());
    DeconvSmallBall out;
    out.n = n;
    out.distances = dist;
    const double rate = std::pow(static_cast<double>(n), -(cfg.beta + cfg.p) / (1.0 + 2.0 * cfg.beta + 2.0 * cfg.p));
    for (double kc : logspace(1e-2, 1e3, 501)) {
        const double eps = kc * rate;
        const auto hits = static_cast<std::size_t>(std::upper_bound(dist.begin(), dist.end(), eps) - dist.begin());
        const double mass = static_cast<double>(hits) / draws;
        const double lower = std::exp(-static_cast<double>(n) * eps * eps);
        if (hits >= min_hits && mass >= lower) {
            out.constant = kc;
            out.epsilon = eps;
            out.mass = mass;
            out.lower = lower;
            out.hits = hits;
            out.found = true;
            break;
        }
    }
    return out;
}

inline LemmaCheck deconv_smallball_check(const ExperimentConfig& cfg, std::size_t n, std::size_t draws) {
    const auto sb = deconv_smallball(cfg, n, draws, stream_seed(cfg.seed, n, Stream::SmallBallMC));
    LemmaCheck c;
    c.name = "deconv_smallball n=" + std::to_string(n);
    c.value = sb.mass;
    c.bound = sb.lower;
    c.reported_constant = sb.constant;
    c.pass = sb.found;
    std::ostringstream d;
    d << "eps_n=" << sb.epsilon << " hits=" << sb.hits;
    c.detail = d.str();
    return c;
}

struct LemmaSuiteOptions {
    std::size_t tail_draws = 100000;
    std::size_t smallball_draws = 20000;
    std::size_t deconv_draws = 20000;
    std::vector<std::size_t> deconv_n{64, 256};
};

inline LemmaReport run_lemma_suite(const ExperimentConfig& cfg, const LemmaSuiteOptions& opt = {}) {
    LemmaReport rep;
    int i = 0;
    for (const auto& t : default_tail_grid())
        rep.checks.push_back(tail_lemma_check(t, opt.tail_draws, stream_seed(cfg.seed, i++, Stream::TailMC)));
    rep.checks.push_back(lambert_check());
    ExperimentConfig sev = ExperimentConfig::defaults(Regime::SevereSeq);
    for (double n : {1e3, 1e4, 1e5, 1e6}) {
        rep.checks.push_back(severe_kn_check(sev, n));
        rep.checks.push_back(severe_sums_check(sev, n));
    }
    for (auto& c : mild_smallball_checks(ExperimentConfig::defaults(Regime::MildSeq), opt.smallball_draws))
        rep.checks.push_back(std::move(c));
    const ExperimentConfig dc = ExperimentConfig::defaults(Regime::Deconv);
    for (auto& c : deconv_prior_tail_checks(dc)) rep.checks.push_back(std::move(c));
    for (std::size_t n : opt.deconv_n) rep.checks.push_back(deconv_smallball_check(dc, n, opt.deconv_draws));
    return rep;
}

}  // namespace contraq

#endif  // CONTRAQ_EXPERIMENTS_HPP
