// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 on any failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "contraq/contraq.hpp"
#include "oracles.hpp"

using namespace contraq;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double x, int digits = 4) { return format_g(x, digits); }

// 1 -------------------------------------------------------------------------
Verdict mild_rate() {
    const auto cfg = ExperimentConfig::defaults(Regime::MildSeq);
    const auto r = run_contraction_experiment(cfg);
    return {r.pass() && r.inverse_pass && r.direct_pass,
            "inverse slope " + fmt(r.inverse_fit.slope) + " (target -0.2 +- 0.07), direct slope " +
                fmt(r.direct_fit.slope) + " (target -0.4 +- 0.07)"};
}

// 2 -------------------------------------------------------------------------
Verdict conjugacy() {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> z(0.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const double lam = std::exp(std::log(1e-4) + u(rng) * std::log(1e6));
        const double kap = std::exp(std::log(1e-3) + u(rng) * std::log(1e3));
        const double n = std::exp(u(rng) * std::log(1e5));
        const double y = kap * std::sqrt(lam) * z(rng) + z(rng) / std::sqrt(n);
        const auto ref = oracle::quadrature_bayes(lam, kap, n, y);
        const auto prior = GaussianProductPrior::mild(0.0, lam, 1);
        const IllPosedSpec ks{IllPosedSpec::Kind::Mild, 0.0, kap, 0.0};
        const auto post = posterior(prior, SequenceObservation{{y}, n, 0}, ks, Space::FSpace);
        worst = std::max({worst, std::abs(post.mean[0] - ref.mean), std::abs(post.var[0] - ref.var)});
    }
    return {worst <= 1e-8, "max abs error " + fmt(worst, 3) + " over 1000 coordinates (limit 1e-8)"};
}

// 3 -------------------------------------------------------------------------
Verdict risk_identity() {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_z = 0.0;
    for (int c = 0; c < 20; ++c) {
        const double alpha = 0.5 + 1.5 * u(rng), xi = u(rng), gamma = 0.3 + 0.7 * u(rng);
        const double p = 1.0 + u(rng), n = std::exp(std::log(1e2) + u(rng) * std::log(1e3));
        const auto spec = IllPosedSpec::severe(gamma, p);
        const std::size_t k = severe_k_n(alpha, xi, gamma, p, n);
        const std::size_t N = std::max<std::size_t>(k, 48);
        const auto prior = GaussianProductPrior::severe(alpha, xi, p, k);
        const auto f0 = make_truth(1.0, 1.0, 0.05, N);
        const auto obs = observe(f0, spec, n, N, 1000 + c);
        const auto post = posterior(prior, obs, spec, Space::KFSpace);
        const double closed = posterior_risk_direct(post, f0, spec);
        const PowerExpShape kf0 = f0.tail() * spec.shape();
        const double tail = oracle::partial_sum([&](double i) { return kf0(i) * kf0(i); }, N + 1, N + 20000);
        Rng draw = make_rng(5000 + c);
        std::normal_distribution<double> z(0.0, 1.0);
        std::vector<double> v(100000);
        for (double& s : v) {
            s = tail;
            for (std::size_t i = 1; i <= N; ++i) {
                const double e = post.mean[i - 1] + std::sqrt(post.var[i - 1]) * z(draw) - kappa(spec, i) * f0[i];
                s += e * e;
            }
        }
        const auto m = mean_and_se(v);
        worst_z = std::max(worst_z, std::abs(m.mean - closed) / m.se);
    }
    return {worst_z <= 4.0, "max |closed - MC| / s.e. = " + fmt(worst_z, 3) + " over 20 configurations"};
}

// 4 -------------------------------------------------------------------------
Verdict tail_lemma() {
    bool ok = true;
    double cell_bound = 0.0;
    int i = 0;
    for (const auto& t : default_tail_grid()) {
        const auto c = tail_lemma_check(t, 100000, stream_seed(20240601, i++, Stream::TailMC));
        ok = ok && c.pass;
        if (t.alpha == 1.0 && t.k_n == 10) cell_bound = c.bound;
    }
    const bool value_ok = std::abs(cell_bound - 4.5400e-5) <= 5e-9;
    return {ok && value_ok, "9 cells MC <= bound + 4 s.e.: " + std::string(ok ? "yes" : "no") +
                                "; (1, 10, 0.01, 8) bound " + fmt(cell_bound, 5)};
}

// 5 -------------------------------------------------------------------------
Verdict lambert_kn() {
    const auto lw = lambert_check();
    const auto sev = ExperimentConfig::defaults(Regime::SevereSeq);
    bool ok = lw.pass;
    double worst_kn = 0.0, worst_const = 0.0;
    for (double n : {1e3, 1e4, 1e5, 1e6}) {
        const auto k = severe_kn_check(sev, n);
        const auto s = severe_sums_check(sev, n);
        ok = ok && k.pass && s.pass;
        worst_kn = std::max(worst_kn, k.value);
        worst_const = std::max(worst_const, s.reported_constant);
    }
    return {ok, "Lambert residual " + fmt(lw.value, 3) + ", k_n residual " + fmt(worst_kn, 3) +
                    ", sums in [k/(n const), k/n] with const " + fmt(worst_const)};
}

// 6 -------------------------------------------------------------------------
Verdict spline_identity() {
    double worst_id = 0.0, worst_fd = 0.0;
    SplinePrior prior;
    std::mt19937_64 rng(606);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int d = 0; d < 100; ++d) {
        const int q = 2 + d % 3;
        const auto draw = draw_spline_prior(prior, q, stream_seed(606, d, Stream::PriorDraw));
        const auto kf = volterra_apply_spline(draw.a, draw.function.basis());
        const auto knots = draw.function.basis().knots();
        for (int i = 0; i < 100; ++i) {
            const double x = u(rng);
            const double num = volterra_apply_numeric([&](double t) { return draw.function.f(t); }, x, knots);
            worst_id = std::max(worst_id, std::abs(kf(x) - num));
            const double h = 1e-5;
            if (x > h && x < 1.0 - h) {
                bool near_knot = false;
                for (double k : knots) near_knot = near_knot || std::abs(k - x) < 2 * h;
                if (!near_knot)
                    worst_fd = std::max(worst_fd, std::abs((kf(x + h) - kf(x - h)) / (2 * h) - draw.function.f(x)));
            }
        }
    }
    bool d_ok = true;
    for (int q : {2, 3, 4})
        for (int J : {8, 16, 32})
            for (std::size_t n : {256u, 512u, 1024u})
                d_ok = d_ok && check_design_conditions(uniform_design(n, 1.0), BSplineBasis::with_dimension(q, J)).pass;
    return {worst_id <= 1e-9 && worst_fd <= 1e-5 && d_ok,
            "identity error " + fmt(worst_id, 3) + ", derivative error " + fmt(worst_fd, 3) + ", D1/D2 " +
                (d_ok ? "pass" : "fail") + " on 27 (q, J, n) cells"};
}

// 7 -------------------------------------------------------------------------
Verdict volterra_rate() {
    const auto r = run_contraction_experiment(ExperimentConfig::defaults(Regime::Volterra));
    return {r.pass(), "inverse slope " + fmt(r.inverse_fit.slope) + " (target -0.2 +- 0.10)"};
}

// 8 -------------------------------------------------------------------------
Verdict deconv_chain() {
    const auto kernel = ConvolutionKernel::laplace();
    const auto chain = check_deconv_chain(kernel, {10.0, 1.0}, 1000, 2024);
    const auto ill = illposedness_check(kernel, 10.0, 100.0);
    double worst = 0.0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        Rng rng = make_rng(seed);
        Normal z(0.0, 1.0);
        auto mf = make_mixture(4, 0.15 + 0.1 * static_cast<double>(seed), 2.0);
        for (double& w : mf.w) w = z(rng);
        const double spatial =
            oracle::simpson([&](double x) { return std::pow(mixture_eval(mf, x), 2); }, -6.0, 6.0, 200000);
        const double T = 14.0 / mf.v;
        const double fourier =
            oracle::simpson([&](double t) { return mixture_fourier_sq(mf, t); }, -T, T, 400000) / (2.0 * std::numbers::pi);
        worst = std::max({worst, std::abs(fourier / spatial - 1.0), std::abs(mixture_l2_sq(mf) / spatial - 1.0)});
    }
    return {chain.samples == 1000 && chain.violations == 0 && ill.c_hat >= 0.9900 && worst <= 1e-6,
            "violations " + std::to_string(chain.violations) + "/1000, c_hat " + fmt(ill.c_hat, 6) +
                ", Parseval relative error " + fmt(worst, 3)};
}

// 9 -------------------------------------------------------------------------
Verdict deconv_rate() {
    const auto cfg = ExperimentConfig::defaults(Regime::Deconv);
    const auto r = run_contraction_experiment(cfg);
    std::string detail = "inverse slope " + fmt(r.inverse_fit.slope) + " (target -0.1429 +- 0.10, " +
                         (r.pass() ? "met" : "missed") + ")";
    bool fallback = true;
    for (std::size_t n : {64u, 256u}) {
        const auto c = deconv_smallball_check(cfg, n, 20000);
        fallback = fallback && c.pass;
        detail += "; small ball n=" + std::to_string(n) + " mass " + fmt(c.value, 3) + " >= " + fmt(c.bound, 3) +
                  " at constant " + fmt(c.reported_constant, 3);
    }
    return {r.pass() || fallback, detail};
}

// 10 ------------------------------------------------------------------------
Verdict implied_radius() {
    auto cfg = ExperimentConfig::defaults(Regime::MildSeq);
    cfg.n_grid = {4096};
    cfg.replications = 100;
    const auto rep = run_implied_radius_report(cfg);
    const auto& c = rep.cells.at(0);
    return {rep.pass() && c.replications == 100,
            "inverse <= implied in " + fmt(100.0 * c.fraction_within, 4) + "% of " + std::to_string(c.replications) +
                " replications (mean inverse " + fmt(c.mean_inverse) + ", mean implied " + fmt(c.mean_implied) + ")"};
}

// 11 ------------------------------------------------------------------------
Verdict determinism() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "contraq_acceptance";
    fs::create_directories(dir);
    bool ok = true;
    int runs = 0;
    for (Regime reg : {Regime::MildSeq, Regime::SevereSeq, Regime::Volterra, Regime::Deconv}) {
        auto cfg = ExperimentConfig::defaults(reg);
        cfg.n_grid.resize(3);
        cfg.replications = 4;
        cfg.draws = 30;
        if (reg == Regime::Volterra) cfg.j_max = 32;
        auto slurp = [](const fs::path& p) {
            std::ifstream f(p, std::ios::binary);
            std::stringstream ss;
            ss << f.rdbuf();
            return ss.str();
        };
        const std::string name(to_string(reg));
        emit_csv(run_contraction_experiment(cfg), dir / (name + "_a.csv"));
        cfg.threads = 1;
        emit_csv(run_contraction_experiment(cfg), dir / (name + "_b.csv"));
        const auto a = slurp(dir / (name + "_a.csv")), b = slurp(dir / (name + "_b.csv"));
        ok = ok && !a.empty() && a == b;
        ++runs;
    }
    return {ok, std::to_string(runs) + " regimes rerun (threaded and serial): CSV " +
                    (ok ? "byte-identical" : "differs")};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
        {"mildly ill-posed rate", mild_rate},
        {"conjugacy oracle", conjugacy},
        {"risk identity", risk_identity},
        {"tail-set prior mass", tail_lemma},
        {"Lambert W and k_n", lambert_kn},
        {"spline operator identity", spline_identity},
        {"Volterra contraction", volterra_rate},
        {"deconvolution chain", deconv_chain},
        {"deconvolution rate", deconv_rate},
        {"modulus-implied radius", implied_radius},
        {"determinism", determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] criterion %2zu %-26s %s (%.1fs)\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                    v.detail.c_str(), secs);
        std::fflush(stdout);
        failures += !v.pass;
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
