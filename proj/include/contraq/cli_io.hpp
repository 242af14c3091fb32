#ifndef CONTRAQ_CLI_IO_HPP
#define CONTRAQ_CLI_IO_HPP

// Flat key = value configuration, CSV and manifest emission, plot scripts.

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "contraq/experiments.hpp"

#ifndef CONTRAQ_VERSION
#define CONTRAQ_VERSION "0.1.0"
#endif

namespace contraq {

inline constexpr const char* kVersion = CONTRAQ_VERSION;

struct ParseError : Error {
    int line;
    std::string key;
    ParseError(int line_, std::string key_, const std::string& why)
        : Error((line_ > 0 ? "line " + std::to_string(line_) : std::string("override")) +
                (key_.empty() ? "" : " key '" + key_ + "'") + ": " + why),
          line(line_),
          key(std::move(key_)) {}
};

struct ValidationError : Error {
    std::string key;
    std::string constraint;
    ValidationError(std::string key_, std::string constraint_)
        : Error(key_ + ": " + constraint_), key(std::move(key_)), constraint(std::move(constraint_)) {}
};

struct IoError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Formatting
// ---------------------------------------------------------------------------

inline std::string format_g(double x, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, x);
    return buf;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

// ---------------------------------------------------------------------------
// Config keys
// ---------------------------------------------------------------------------

namespace detail {

inline double parse_double(const std::string& v) {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
}

inline long long parse_int(const std::string& v) {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
}

inline std::uint64_t parse_u64(const std::string& v) {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return x;
}

inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("expected true or false");
}

struct KeySpec {
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

/// Shortest of %.15g / %.17g that reads back exactly.
inline std::string exact(double x) {
    const std::string s = format_g(x, 15);
    return std::strtod(s.c_str(), nullptr) == x ? s : format_g(x, 17);
}

template <class T>
KeySpec real_key(T ExperimentConfig::*field) {
    return {[field](ExperimentConfig& c, const std::string& v) { c.*field = parse_double(v); },
            [field](const ExperimentConfig& c) { return exact(c.*field); }};
}

template <class T>
KeySpec int_key(T ExperimentConfig::*field) {
    return {[field](ExperimentConfig& c, const std::string& v) {
                const long long x = parse_int(v);
                if (std::is_unsigned_v<T> && x < 0) throw std::invalid_argument("negative");
                c.*field = static_cast<T>(x);
            },
            [field](const ExperimentConfig& c) { return std::to_string(c.*field); }};
}

inline KeySpec string_key(std::string ExperimentConfig::*field) {
    return {[field](ExperimentConfig& c, const std::string& v) { c.*field = v; },
            [field](const ExperimentConfig& c) { return c.*field; }};
}

/// Every accepted key, in manifest order.
inline const std::vector<std::pair<std::string, KeySpec>>& config_keys() {
    static const std::vector<std::pair<std::string, KeySpec>> keys = {
        {"regime",
         {[](ExperimentConfig& c, const std::string& v) { c.regime = parse_regime(v); },
          [](const ExperimentConfig& c) { return std::string(to_string(c.regime)); }}},
        {"n_grid",
         {[](ExperimentConfig& c, const std::string& v) {
              c.n_grid.clear();
              std::stringstream ss(v);
              std::string item;
              while (std::getline(ss, item, ',')) {
                  const long long n = parse_int(trim(item));
                  if (n <= 0) throw std::invalid_argument("entries must be positive");
                  c.n_grid.push_back(static_cast<std::size_t>(n));
              }
          },
          [](const ExperimentConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.n_grid.size(); ++i) s += (i ? "," : "") + std::to_string(c.n_grid[i]);
              return s;
          }}},
        {"replications", int_key(&ExperimentConfig::replications)},
        {"credible_level", real_key(&ExperimentConfig::credible_level)},
        {"draws", int_key(&ExperimentConfig::draws)},
        {"seed",
         {[](ExperimentConfig& c, const std::string& v) { c.seed = parse_u64(v); },
          [](const ExperimentConfig& c) { return std::to_string(c.seed); }}},
        {"M", real_key(&ExperimentConfig::M)},
        {"slope_tol", real_key(&ExperimentConfig::slope_tol)},
        {"log_nuisance",
         {[](ExperimentConfig& c, const std::string& v) { c.log_nuisance = parse_bool(v); },
          [](const ExperimentConfig& c) { return std::string(c.log_nuisance ? "true" : "false"); }}},
        {"threads", int_key(&ExperimentConfig::threads)},
        {"alpha", real_key(&ExperimentConfig::alpha)},
        {"beta", real_key(&ExperimentConfig::beta)},
        {"p", real_key(&ExperimentConfig::p)},
        {"C", real_key(&ExperimentConfig::C)},
        {"gamma", real_key(&ExperimentConfig::gamma)},
        {"xi", real_key(&ExperimentConfig::xi)},
        {"prior_scale", real_key(&ExperimentConfig::prior_scale)},
        {"truth_radius", real_key(&ExperimentConfig::truth_radius)},
        {"truth_eta", real_key(&ExperimentConfig::truth_eta)},
        {"head", int_key(&ExperimentConfig::head)},
        {"tail_c", real_key(&ExperimentConfig::tail_c)},
        {"sigma", real_key(&ExperimentConfig::sigma)},
        {"q", int_key(&ExperimentConfig::q)},
        {"j_prior", string_key(&ExperimentConfig::j_prior)},
        {"j_param", real_key(&ExperimentConfig::j_param)},
        {"j_grid", string_key(&ExperimentConfig::j_grid)},
        {"j_max", int_key(&ExperimentConfig::j_max)},
        {"tau", real_key(&ExperimentConfig::tau)},
        {"holder_L", real_key(&ExperimentConfig::holder_L)},
        {"holder_terms", int_key(&ExperimentConfig::holder_terms)},
        {"c_x", real_key(&ExperimentConfig::c_x)},
        {"sobolev_L", real_key(&ExperimentConfig::sobolev_L)},
        {"deconv_j_max", int_key(&ExperimentConfig::deconv_j_max)},
        {"v_min", real_key(&ExperimentConfig::v_min)},
        {"v_max", real_key(&ExperimentConfig::v_max)},
        {"v_count", int_key(&ExperimentConfig::v_count)},
        {"mix_s", real_key(&ExperimentConfig::mix_s)},
        {"mix_q", real_key(&ExperimentConfig::mix_q)},
        {"mix_u", real_key(&ExperimentConfig::mix_u)},
        {"mix_c", real_key(&ExperimentConfig::mix_c)},
        {"mix_v_support", real_key(&ExperimentConfig::mix_v_support)},
        {"window_a", real_key(&ExperimentConfig::window_a)},
    };
    return keys;
}

inline const KeySpec* find_key(const std::string& k) {
    for (const auto& [name, spec] : config_keys())
        if (name == k) return &spec;
    return nullptr;
}

struct RawEntry {
    std::string key;
    std::string value;
    int line;  // 0 for overrides
};

inline RawEntry split_entry(const std::string& text, int line) {
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ParseError(line, "", "expected key = value");
    RawEntry e{trim(std::string_view(text).substr(0, eq)), trim(std::string_view(text).substr(eq + 1)), line};
    if (e.key.empty()) throw ParseError(line, "", "empty key");
    return e;
}

inline void apply_entry(ExperimentConfig& c, const RawEntry& e) {
    const KeySpec* spec = find_key(e.key);
    if (!spec) throw ParseError(e.line, e.key, "unknown key '" + e.key + "'");
    try {
        spec->set(c, e.value);
    } catch (const std::exception& ex) {
        throw ParseError(e.line, e.key, "bad value '" + e.value + "' (" + ex.what() + ")");
    }
}

}  // namespace detail

/// Validation applied to parsed configurations.
inline void validate_config(const ExperimentConfig& c) {
    if (c.n_grid.empty()) throw ValidationError("n_grid", "nonempty");
    for (std::size_t i = 1; i < c.n_grid.size(); ++i)
        if (c.n_grid[i] <= c.n_grid[i - 1]) throw ValidationError("n_grid", "strictly increasing");
    if (c.replications < 1) throw ValidationError("replications", "positive");
    if (!(c.credible_level > 0.0 && c.credible_level < 1.0)) throw ValidationError("credible_level", "in (0, 1)");
    if (c.draws < 1) throw ValidationError("draws", "positive");
    if (!(c.M > 0.0)) throw ValidationError("M", "positive");
    if (!(c.slope_tol > 0.0)) throw ValidationError("slope_tol", "positive");
    if (c.threads < 0) throw ValidationError("threads", "nonnegative");
    if (c.head < 1) throw ValidationError("head", "positive");
    if (c.j_prior != "poisson" && c.j_prior != "geometric") throw ValidationError("j_prior", "poisson or geometric");
    if (c.j_grid != "dyadic" && c.j_grid != "full") throw ValidationError("j_grid", "dyadic or full");
    if (c.q < 2 || c.q > BSplineBasis::kMaxOrder) throw ValidationError("q", "in [2, 12]");
    if (!(c.sigma > 0.0)) throw ValidationError("sigma", "positive");
    if (!(c.v_min > 0.0 && c.v_min < c.v_max)) throw ValidationError("v_min", "0 < v_min < v_max");
    if (c.v_count < 2) throw ValidationError("v_count", "at least 2");
    if (!(c.window_a > 0.0)) throw ValidationError("window_a", "positive");
    if (c.regime == Regime::Deconv && (c.beta < 1.0 || c.beta != std::floor(c.beta)))
        throw ValidationError("beta", "integer >= 1 for Deconv");
}

/// Parses config text; `regime` is resolved first so its defaults sit under
/// the file values, and overrides win over both.
inline ExperimentConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides = {}) {
    std::vector<detail::RawEntry> file_entries, override_entries;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    std::map<std::string, int> seen;
    while (std::getline(in, raw)) {
        ++line;
        const auto hash = raw.find('#');
        const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (body.empty()) continue;
        auto e = detail::split_entry(body, line);
        if (!detail::find_key(e.key)) throw ParseError(line, e.key, "unknown key '" + e.key + "'");
        if (auto it = seen.find(e.key); it != seen.end())
            throw ParseError(line, e.key, "duplicate key (first on line " + std::to_string(it->second) + ")");
        seen[e.key] = line;
        file_entries.push_back(std::move(e));
    }
    for (const auto& o : overrides) override_entries.push_back(detail::split_entry(o, 0));

    Regime regime = Regime::MildSeq;
    auto pick_regime = [&](const std::vector<detail::RawEntry>& es) {
        for (const auto& e : es)
            if (e.key == "regime") {
                try {
                    regime = parse_regime(e.value);
                } catch (const std::exception& ex) {
                    throw ParseError(e.line, e.key, ex.what());
                }
            }
    };
    pick_regime(file_entries);
    pick_regime(override_entries);

    ExperimentConfig cfg = ExperimentConfig::defaults(regime);
    for (const auto& e : file_entries) detail::apply_entry(cfg, e);
    for (const auto& e : override_entries) detail::apply_entry(cfg, e);
    validate_config(cfg);
    return cfg;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), overrides);
}

/// All keys with their resolved values, in manifest order.
inline std::vector<std::pair<std::string, std::string>> config_echo(const ExperimentConfig& c) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [name, spec] : detail::config_keys()) out.emplace_back(name, spec.get(c));
    return out;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

inline constexpr const char* kCsvHeader =
    "regime,n,replication,radius_direct,radius_inverse,sn_mass,implied_radius,seed";

inline std::string csv_string(std::span<const ReplicationRecord> records) {
    std::string s = kCsvHeader;
    s += '\n';
    for (const auto& r : records) {
        s += to_string(r.regime);
        s += ',' + std::to_string(r.n) + ',' + std::to_string(r.replication);
        for (double v : {r.radius_direct, r.radius_inverse, r.sn_mass, r.implied_radius}) s += ',' + format_g(v, 12);
        s += ',' + std::to_string(r.seed) + '\n';
    }
    return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("write failed for " + path.string());
}

inline void emit_csv(std::span<const ReplicationRecord> records, const std::filesystem::path& path) {
    write_text(path, csv_string(records));
}

inline void emit_csv(const RateFitResult& result, const std::filesystem::path& path) {
    emit_csv(result.records, path);
}

inline std::vector<ReplicationRecord> read_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line) || line != kCsvHeader) throw IoError("unexpected CSV header in " + path.string());
    std::vector<ReplicationRecord> out;
    int ln = 1;
    while (std::getline(f, line)) {
        ++ln;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        if (cells.size() != 8) throw ParseError(ln, "", "expected 8 columns");
        ReplicationRecord r;
        try {
            r.regime = parse_regime(cells[0]);
            r.n = static_cast<std::size_t>(detail::parse_int(cells[1]));
            r.replication = static_cast<int>(detail::parse_int(cells[2]));
            r.radius_direct = detail::parse_double(cells[3]);
            r.radius_inverse = detail::parse_double(cells[4]);
            r.sn_mass = detail::parse_double(cells[5]);
            r.implied_radius = detail::parse_double(cells[6]);
            r.seed = detail::parse_u64(cells[7]);
        } catch (const std::exception& e) {
            throw ParseError(ln, "", e.what());
        }
        out.push_back(r);
    }
    return out;
}

struct Aggregate {
    std::size_t n = 0;
    MeanSe inverse;
    MeanSe direct;
    MeanSe sn_mass;
    MeanSe implied;
    int count = 0;
};

/// Per-n means and standard errors in order of first appearance of n.
inline std::vector<Aggregate> aggregate(std::span<const ReplicationRecord> records) {
    std::vector<std::size_t> order;
    std::map<std::size_t, std::array<std::vector<double>, 4>> cols;
    for (const auto& r : records) {
        auto [it, fresh] = cols.try_emplace(r.n);
        if (fresh) order.push_back(r.n);
        it->second[0].push_back(r.radius_inverse);
        it->second[1].push_back(r.radius_direct);
        it->second[2].push_back(r.sn_mass);
        it->second[3].push_back(r.implied_radius);
    }
    std::vector<Aggregate> out;
    for (std::size_t n : order) {
        const auto& c = cols[n];
        out.push_back({n, mean_and_se(c[0]), mean_and_se(c[1]), mean_and_se(c[2]), mean_and_se(c[3]),
                       static_cast<int>(c[0].size())});
    }
    return out;
}

inline std::string manifest_string(const ExperimentConfig& cfg, const std::string& subcommand,
                                   const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    std::string s = "contraq_version = " + std::string(kVersion) + "\nsubcommand = " + subcommand + "\n";
    for (const auto& [k, v] : config_echo(cfg)) s += k + " = " + v + "\n";
    for (const auto& [k, v] : extra) s += k + " = " + v + "\n";
    return s;
}

inline void write_manifest(const std::filesystem::path& path, const ExperimentConfig& cfg,
                           const std::string& subcommand,
                           const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    write_text(path, manifest_string(cfg, subcommand, extra));
}

/// Python/matplotlib script plotting mean radii against n on log-log axes,
/// with fitted lines and theoretical-slope lines anchored at the first n.
inline std::string plot_script_string(const RateFitResult& result, const std::string& csv_relpath) {
    std::ostringstream s;
    s << "#!/usr/bin/env python3\n"
      << "# Regenerate with: python3 plot.py (run from the output directory)\n"
      << "import csv, math, os\n"
      << "import matplotlib\n"
      << "matplotlib.use('Agg')\n"
      << "import matplotlib.pyplot as plt\n\n"
      << "HERE = os.path.dirname(os.path.abspath(__file__))\n"
      << "CSV = os.path.join(HERE, '" << csv_relpath << "')\n"
      << "REGIME = '" << to_string(result.config.regime) << "'\n"
      << "THEORY_SLOPE = {'inverse': " << format_g(-result.theory.inverse_exponent, 17)
      << ", 'direct': " << format_g(-result.theory.direct_exponent, 17) << "}\n"
      << "FIT_SLOPE = {'inverse': " << format_g(result.inverse_fit.slope, 17)
      << ", 'direct': " << format_g(result.direct_fit.slope, 17) << "}\n"
      << "FIT_INTERCEPT = {'inverse': " << format_g(result.inverse_fit.intercept, 17)
      << ", 'direct': " << format_g(result.direct_fit.intercept, 17) << "}\n\n"
      << "rows = list(csv.DictReader(open(CSV)))\n"
      << "ns = sorted({int(r['n']) for r in rows})\n"
      << "def mean(col, n):\n"
      << "    v = [float(r[col]) for r in rows if int(r['n']) == n]\n"
      << "    return sum(v) / len(v)\n\n"
      << "fig, ax = plt.subplots(figsize=(6, 4.5))\n"
      << "for kind, col, mark in (('inverse', 'radius_inverse', 'o'), ('direct', 'radius_direct', 's')):\n"
      << "    r = [mean(col, n) for n in ns]\n"
      << "    ax.loglog(ns, r, mark, label=kind + ' radius')\n"
      << "    fit = [math.exp(FIT_INTERCEPT[kind]) * n ** FIT_SLOPE[kind] for n in ns]\n"
      << "    ax.loglog(ns, fit, '-', label='%s fit slope %.3f' % (kind, FIT_SLOPE[kind]))\n"
      << "    th = [r[0] * (n / ns[0]) ** THEORY_SLOPE[kind] for n in ns]\n"
      << "    ax.loglog(ns, th, '--', label='%s theory slope %.3f' % (kind, THEORY_SLOPE[kind]))\n"
      << "ax.set_xlabel('n')\n"
      << "ax.set_ylabel('0.9-credible radius')\n"
      << "ax.set_title(REGIME)\n"
      << "ax.legend(fontsize=7)\n"
      << "fig.tight_layout()\n"
      << "fig.savefig(os.path.join(HERE, 'rates.png'), dpi=150)\n";
    return s.str();
}

inline void emit_plot_script(const RateFitResult& result, const std::filesystem::path& path,
                             const std::string& csv_relpath = "results.csv") {
    write_text(path, plot_script_string(result, csv_relpath));
}

/// Plain-text summary of a rate experiment.
inline std::string rate_report_string(const RateFitResult& r) {
    std::ostringstream s;
    s << "regime " << to_string(r.config.regime) << "\n";
    s << "n,replications,failures,radius_inverse_mean,radius_inverse_se,radius_direct_mean,radius_direct_se,sn_mass_mean\n";
    for (const auto& c : r.cells)
        s << c.n << ',' << c.completed << ',' << c.failures << ',' << format_g(c.inverse.mean, 8) << ','
          << format_g(c.inverse.se, 4) << ',' << format_g(c.direct.mean, 8) << ',' << format_g(c.direct.se, 4)
          << ',' << format_g(c.sn_mass.mean, 6) << (c.aborted ? " ABORTED: " + c.last_error : "") << "\n";
    auto line = [&](const char* name, const SlopeFit& f, double exponent, bool asserted, bool pass) {
        s << name << " slope " << format_g(f.slope, 6) << " +- " << format_g(f.se, 3) << " theory "
          << format_g(-exponent, 6) << " tol " << format_g(r.tolerance, 3) << " "
          << (asserted ? (pass ? "PASS" : "FAIL") : "reported") << "\n";
    };
    line("inverse", r.inverse_fit, r.theory.inverse_exponent, r.inverse_asserted, r.inverse_pass);
    line("direct", r.direct_fit, r.theory.direct_exponent, r.direct_asserted, r.direct_pass);
    return s.str();
}

}  // namespace contraq

#endif  // CONTRAQ_CLI_IO_HPP
