// contraq <subcommand> --config PATH [--out DIR] [--set key=value]... [--seed N]

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "contraq/contraq.hpp"

namespace fs = std::filesystem;
using namespace contraq;

namespace {

struct Invocation {
    std::string config_path;
    std::string out_dir = "out";
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

struct Outcome {
    std::vector<std::string> failures;
    std::vector<std::pair<std::string, std::string>> manifest_extra;
};

ExperimentConfig load(const Invocation& inv, std::optional<Regime> forced) {
    std::vector<std::string> ov;
    if (forced) ov.push_back("regime=" + std::string(to_string(*forced)));
    ov.insert(ov.end(), inv.overrides.begin(), inv.overrides.end());
    if (inv.seed) ov.push_back("seed=" + std::to_string(*inv.seed));
    ExperimentConfig cfg = parse_config(inv.config_path, ov);
    if (forced && cfg.regime != *forced)
        throw ValidationError("regime", "must be " + std::string(to_string(*forced)) + " for this subcommand");
    return cfg;
}

void collect_rate_failures(const RateFitResult& r, Outcome& out) {
    for (const auto& c : r.cells)
        if (c.aborted) out.failures.push_back("n=" + std::to_string(c.n) + " aborted: " + c.last_error);
    auto slope = [&](const char* kind, const SlopeFit& f, double e, bool asserted, bool pass) {
        if (asserted && !pass)
            out.failures.push_back(std::string(kind) + " slope " + format_g(f.slope, 6) + " outside " +
                                   format_g(-e, 6) + " +- " + format_g(r.tolerance, 3));
    };
    slope("inverse", r.inverse_fit, r.theory.inverse_exponent, r.inverse_asserted, r.inverse_pass);
    slope("direct", r.direct_fit, r.theory.direct_exponent, r.direct_asserted, r.direct_pass);
}

Outcome run_rates(const ExperimentConfig& cfg, const fs::path& dir) {
    Outcome out;
    const RateFitResult r = run_contraction_experiment(cfg);
    emit_csv(r, dir / "results.csv");
    emit_plot_script(r, dir / "plot.py", "results.csv");
    const std::string report = rate_report_string(r);
    write_text(dir / "report.txt", report);
    std::cout << report;
    collect_rate_failures(r, out);
    out.manifest_extra = {{"inverse_slope", format_g(r.inverse_fit.slope, 12)},
                          {"direct_slope", format_g(r.direct_fit.slope, 12)},
                          {"pass", r.pass() ? "true" : "false"}};
    return out;
}

Outcome run_modulus(const ExperimentConfig& cfg, const fs::path& dir) {
    Outcome out;
    std::ostringstream rep;
    constexpr std::size_t kSamples = 1000;
    for (std::size_t ci = 0; ci < cfg.n_grid.size(); ++ci) {
        const std::size_t n = cfg.n_grid[ci];
        const auto seed = stream_seed(cfg.seed, 0, Stream::ModulusChain, ci);
        try {
            switch (cfg.regime) {
            case Regime::MildSeq:
            case Regime::SevereSeq: {
                const auto s = detail::sequence_setup(cfg, static_cast<double>(n));
                const auto c = check_modulus_chain(s.tail_set, s.spec, kSamples, seed);
                rep << "n=" << n << " k_n=" << s.tail_set.k_n << " samples=" << c.samples
                    << " violations=" << c.violations << " min_slack=" << format_g(c.min_slack, 6) << "\n";
                if (c.violations) out.failures.push_back("n=" + std::to_string(n) + " chain violations");
                break;
            }
            case Regime::Volterra: {
                const auto design = uniform_design(n, cfg.sigma);
                for (int J : dyadic_j_grid(cfg.q, 2, std::min(cfg.j_max, 64))) {
                    const auto m = calibrate_spline_modulus(design, BSplineBasis::with_dimension(cfg.q, J), kSamples,
                                                            stream_seed(seed, J, Stream::Calibration));
                    rep << "n=" << n << " J=" << J << " exact=" << format_g(m.exact_sup, 8)
                        << " mc_max=" << format_g(m.mc_max, 8) << "\n";
                    if (m.mc_max > m.exact_sup * (1.0 + 1e-9))
                        out.failures.push_back("n=" + std::to_string(n) + " J=" + std::to_string(J) +
                                               " sampled ratio exceeds the exact constant");
                }
                break;
            }
            case Regime::Deconv: {
                const FourierWindow win{deconv_a_n(static_cast<double>(n), cfg.beta, cfg.p), cfg.window_a};
                const auto c = check_deconv_chain(ConvolutionKernel::laplace(), win, kSamples, seed);
                rep << "n=" << n << " a_n=" << format_g(win.a_n, 6) << " samples=" << c.samples
                    << " rejected=" << c.rejected << " violations=" << c.violations
                    << " min_slack=" << format_g(c.min_slack, 6) << "\n";
                if (c.violations) out.failures.push_back("n=" + std::to_string(n) + " chain violations");
                break;
            }
            }
        } catch (const Error& e) {
            rep << "n=" << n << " error: " << e.what() << "\n";
            out.failures.push_back("n=" + std::to_string(n) + ": " + e.what());
        }
    }
    write_text(dir / "modulus.txt", rep.str());
    std::cout << rep.str();
    return out;
}

Outcome run_lemmas(const ExperimentConfig& cfg, const fs::path& dir) {
    Outcome out;
    const LemmaReport r = run_lemma_suite(cfg);
    std::ostringstream rep;
    rep << "check,pass,value,bound,constant,detail\n";
    for (const auto& c : r.checks) {
        rep << c.name << ',' << (c.pass ? "PASS" : "FAIL") << ',' << format_g(c.value, 8) << ','
            << format_g(c.bound, 8) << ',' << format_g(c.reported_constant, 6) << ',' << c.detail << "\n";
        if (!c.pass) out.failures.push_back(c.name + ": " + c.detail);
    }
    write_text(dir / "lemmas.csv", rep.str());
    std::cout << rep.str();
    return out;
}

Outcome run_contract(const ExperimentConfig& cfg, const fs::path& dir) {
    Outcome out;
    const ImpliedRadiusReport r = run_implied_radius_report(cfg);
    emit_csv(r.run, dir / "results.csv");
    std::ostringstream rep;
    rep << "n,k_n,rho_n,prior_sn_bound,mean_sn_mass,mean_direct,mean_implied,mean_inverse,fraction_within,pass\n";
    for (const auto& c : r.cells) {
        rep << c.n << ',' << c.k_n << ',' << format_g(c.rho_n, 8) << ',' << format_g(c.prior_sn_bound, 6) << ','
            << format_g(c.mean_sn_mass, 6) << ',' << format_g(c.mean_direct, 8) << ','
            << format_g(c.mean_implied, 8) << ',' << format_g(c.mean_inverse, 8) << ','
            << format_g(c.fraction_within, 4) << ',' << (c.pass ? "PASS" : "FAIL") << "\n";
        if (!c.pass)
            out.failures.push_back("n=" + std::to_string(c.n) + " inverse <= implied in only " +
                                   format_g(100.0 * c.fraction_within, 4) + "% of replications");
    }
    write_text(dir / "implied.csv", rep.str());
    std::cout << rep.str();
    return out;
}

Outcome run_report(const ExperimentConfig& cfg, const fs::path& dir) {
    Outcome out;
    const auto records = read_csv(dir / "results.csv");
    RateFitResult r;
    r.config = cfg;
    r.records = records;
    r.theory = rate_exponent(cfg.regime, cfg.rate_params());
    r.tolerance = cfg.slope_tol;
    r.inverse_asserted = cfg.regime == Regime::MildSeq || cfg.regime == Regime::Volterra || cfg.regime == Regime::Deconv;
    r.direct_asserted = cfg.regime == Regime::MildSeq;
    for (const auto& a : aggregate(records)) {
        CellSummary c;
        c.n = a.n;
        c.inverse = a.inverse;
        c.direct = a.direct;
        c.sn_mass = a.sn_mass;
        c.completed = a.count;
        r.cells.push_back(c);
    }
    detail::finish_fit(r);
    const std::string report = rate_report_string(r);
    write_text(dir / "report.txt", report);
    emit_plot_script(r, dir / "plot.py", "results.csv");
    std::cout << report;
    collect_rate_failures(r, out);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contraq: contraction rates for Bayesian inverse problems"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    Invocation inv;
    struct Sub {
        const char* name;
        const char* help;
    };
    const std::vector<Sub> subs = {
        {"rates", "replicated contraction experiment with log-log slope fits"},
        {"modulus", "modulus-of-continuity chain checks over the n grid"},
        {"lemmas", "tail-mass, small-ball, Lambert and severe-sum checks"},
        {"contract", "measured inverse radius against the modulus-implied radius"},
        {"spline", "Volterra spline contraction experiment"},
        {"deconv", "deconvolution mixture contraction experiment"},
        {"report", "re-aggregate results.csv in the output directory"},
    };
    for (const auto& s : subs) {
        CLI::App* sc = app.add_subcommand(s.name, s.help);
        sc->add_option("--config", inv.config_path, "flat key = value config file")->required()->check(CLI::ExistingFile);
        sc->add_option("--out", inv.out_dir, "output directory")->capture_default_str();
        sc->add_option("--set", inv.overrides, "override key=value (repeatable)");
        sc->add_option("--seed", inv.seed, "master seed override");
    }
    CLI11_PARSE(app, argc, argv);

    const std::string cmd = app.get_subcommands().front()->get_name();
    const fs::path dir(inv.out_dir);
    try {
        std::optional<Regime> forced;
        if (cmd == "spline") forced = Regime::Volterra;
        if (cmd == "deconv") forced = Regime::Deconv;
        const ExperimentConfig cfg = load(inv, forced);
        fs::create_directories(dir);

        Outcome out;
        if (cmd == "rates" || cmd == "spline" || cmd == "deconv") out = run_rates(cfg, dir);
        else if (cmd == "modulus") out = run_modulus(cfg, dir);
        else if (cmd == "lemmas") out = run_lemmas(cfg, dir);
        else if (cmd == "contract") out = run_contract(cfg, dir);
        else out = run_report(cfg, dir);

        out.manifest_extra.emplace_back("failures", std::to_string(out.failures.size()));
        write_manifest(dir / "manifest.txt", cfg, cmd, out.manifest_extra);
        for (const auto& f : out.failures) std::cerr << "FAIL " << f << "\n";
        return out.failures.empty() ? 0 : 1;
    } catch (const ParseError& e) {
        std::cerr << "config error: " << e.what() << "\n";
    } catch (const ValidationError& e) {
        std::cerr << "invalid config: " << e.what() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
    }
    return 2;
}
