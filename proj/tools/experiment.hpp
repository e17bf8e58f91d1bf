#pragma once

// Experiment presets, config files and the pipelines shared by the CLI and the
// acceptance runner.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "pwgf/h1_reference.hpp"
#include "pwgf/pwgf.hpp"
#include "pwgf/reconstruct.hpp"

namespace pwgf::experiment {

struct FdSettings {
    std::size_t n = 200;           // interior nodes per axis
    std::size_t n_fine = 0;        // optional second grid for the warm-start energy check
    double tau = 0.9;
    double tol = 1e-10;            // |E_k - E_{k-1}| stopping rule
    std::size_t max_steps = 2000;
    double gap_tol = 1e-4;         // steps-to-tolerance column: first k with |E_k - E_ref| <= gap_tol
    double reference_energy = std::numeric_limits<double>::quiet_NaN();  // NaN: converge from constant-one
    std::uint64_t random_seed = 42;
};

struct ExperimentConfig {
    std::string id = "gpe1d";
    PwgfConfig pwgf;
    FdSettings fd;
    std::size_t recon_nodes = 1001;
    bool warm_start = false;  // run-pwgf: follow the run with the warm-start table
    std::string out = "runs";
};

inline ExperimentConfig defaults(const std::string& id) {
    ExperimentConfig e;
    e.id = id;
    PwgfConfig& c = e.pwgf;
    if (id == "gpe1d" || id == "custom") {
        c.error_every = 20;
        e.fd.n = 999;
        e.fd.tol = 1e-12;
        e.fd.gap_tol = 1e-6;
        e.recon_nodes = 1001;
    } else if (id == "gpe2d") {
        c.d = 2;
        c.n_cg = 200;
        c.potential = PotentialId::Lattice2D;
        c.reference = ReferenceKind::GaussMix;
        c.L = 16.0;
        e.fd.n = 200;
        e.recon_nodes = 40;
    } else if (id == "gpe3d") {
        c.d = 3;
        c.N = 6000;
        c.n_cg = 300;
        c.E_tol = 5.0;
        c.clip = 50.0;
        c.potential = PotentialId::TrapLattice3D;
        c.beta = 1600.0;
        c.reference = ReferenceKind::Beta55;
        c.L = 8.0;
        e.fd.n = 99;
        e.fd.n_fine = 199;
        e.fd.max_steps = 30;
        e.fd.gap_tol = 1.0;
        e.fd.reference_energy = 33.80228;
        e.recon_nodes = 40;
    } else {
        throw ConfigError("unknown experiment id '" + id + "' (expected gpe1d, gpe2d, gpe3d or custom)");
    }
    return e;
}

inline nlohmann::json to_json(const FdSettings& f) {
    nlohmann::json j{{"n", f.n},
                     {"n_fine", f.n_fine},
                     {"tau", f.tau},
                     {"tol", f.tol},
                     {"max_steps", f.max_steps},
                     {"gap_tol", f.gap_tol},
                     {"random_seed", f.random_seed}};
    j["reference_energy"] = std::isnan(f.reference_energy) ? nlohmann::json(nullptr) : nlohmann::json(f.reference_energy);
    return j;
}

inline nlohmann::json to_json(const ExperimentConfig& e) {
    return {{"id", e.id},
            {"pwgf", pwgf::to_json(e.pwgf)},
            {"fd", to_json(e.fd)},
            {"recon_nodes", e.recon_nodes},
            {"warm_start", e.warm_start},
            {"out", e.out}};
}

inline ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig e = defaults(j.value("id", std::string("gpe1d")));
    if (j.contains("pwgf")) {
        nlohmann::json merged = pwgf::to_json(e.pwgf);
        merged.update(j.at("pwgf"));
        e.pwgf = pwgf_config_from_json(merged);
    }
    if (j.contains("fd")) {
        const auto& f = j.at("fd");
        e.fd.n = f.value("n", e.fd.n);
        e.fd.n_fine = f.value("n_fine", e.fd.n_fine);
        e.fd.tau = f.value("tau", e.fd.tau);
        e.fd.tol = f.value("tol", e.fd.tol);
        e.fd.max_steps = f.value("max_steps", e.fd.max_steps);
        e.fd.gap_tol = f.value("gap_tol", e.fd.gap_tol);
        e.fd.random_seed = f.value("random_seed", e.fd.random_seed);
        if (f.contains("reference_energy"))
            e.fd.reference_energy = f.at("reference_energy").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                                        : f.at("reference_energy").get<double>();
    }
    e.recon_nodes = j.value("recon_nodes", e.recon_nodes);
    e.warm_start = j.value("warm_start", e.warm_start);
    e.out = j.value("out", e.out);
    return e;
}

namespace detail {

template <typename T>
T ini_get(const boost::property_tree::ptree& t, const std::string& key, const std::string& section) {
    try {
        return t.get_value<T>();
    } catch (const boost::property_tree::ptree_bad_data&) {
        throw ConfigError("config key '" + section + "." + key + "' has a malformed value '" + t.data() + "'");
    }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace detail

/// Apply parsed key/value sections. Sections: [experiment] recon_nodes, warm_start, out;
/// [pwgf] keys as in the JSON config echo; [fd] n, n_fine, tau, tol, max_steps,
/// gap_tol, reference_energy, random_seed. Unknown keys are errors.
inline void apply_tree(ExperimentConfig& e, const boost::property_tree::ptree& tree) {
    nlohmann::json pw = pwgf::to_json(e.pwgf);
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError("config key '" + section + "' needs a section (for example pwgf." + section + ")");
        for (const auto& [key, val] : body) {
            const std::string full = section + "." + key;
            if (section == "experiment") {
                if (key == "id") continue;
                if (key == "recon_nodes") e.recon_nodes = detail::ini_get<std::size_t>(val, key, section);
                else if (key == "warm_start") e.warm_start = detail::parse_bool(val.data(), full);
                else if (key == "out") e.out = val.data();
                else throw ConfigError("unknown config key '" + full + "'");
            } else if (section == "pwgf") {
                if (!pw.contains(key)) throw ConfigError("unknown config key '" + full + "'");
                if (pw[key].is_string()) pw[key] = val.data();
                else if (pw[key].is_boolean()) pw[key] = detail::parse_bool(val.data(), full);
                else if (pw[key].is_number_unsigned()) pw[key] = detail::ini_get<std::uint64_t>(val, key, section);
                else pw[key] = detail::ini_get<double>(val, key, section);
            } else if (section == "fd") {
                if (key == "n") e.fd.n = detail::ini_get<std::size_t>(val, key, section);
                else if (key == "n_fine") e.fd.n_fine = detail::ini_get<std::size_t>(val, key, section);
                else if (key == "tau") e.fd.tau = detail::ini_get<double>(val, key, section);
                else if (key == "tol") e.fd.tol = detail::ini_get<double>(val, key, section);
                else if (key == "max_steps") e.fd.max_steps = detail::ini_get<std::size_t>(val, key, section);
                else if (key == "gap_tol") e.fd.gap_tol = detail::ini_get<double>(val, key, section);
                else if (key == "reference_energy") e.fd.reference_energy = detail::ini_get<double>(val, key, section);
                else if (key == "random_seed") e.fd.random_seed = detail::ini_get<std::uint64_t>(val, key, section);
                else throw ConfigError("unknown config key '" + full + "'");
            } else {
                throw ConfigError("unknown config section '[" + section + "]'");
            }
        }
    }
    e.pwgf = pwgf_config_from_json(pw);
}

inline ExperimentConfig load_ini(const std::filesystem::path& path, std::optional<std::string> id_override = {}) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& err) {
        throw ConfigError("cannot parse config file: " + std::string(err.what()));
    }
    ExperimentConfig e = defaults(id_override.value_or(tree.get<std::string>("experiment.id", "custom")));
    apply_tree(e, tree);
    return e;
}

/// Command-line overrides of the form section.key=value.
inline void apply_overrides(ExperimentConfig& e, const std::vector<std::string>& kv) {
    boost::property_tree::ptree tree;
    for (const auto& item : kv) {
        const auto eq = item.find('=');
        const auto dot = item.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq)
            throw ConfigError("override '" + item + "' must look like section.key=value");
        tree.put(boost::property_tree::ptree::path_type(item.substr(0, eq), '.'), item.substr(eq + 1));
    }
    apply_tree(e, tree);
}

/// A .json file is either a run summary (with an "experiment" echo) or an experiment config;
/// anything else is read as INI.
inline ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::string> id_override = {}) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    if (path.extension() == ".json") {
        std::ifstream is(path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(is);
        } catch (const nlohmann::json::exception& err) {
            throw ConfigError("cannot parse " + path.string() + ": " + err.what());
        }
        if (j.contains("experiment")) j = j.at("experiment");
        if (id_override) j["id"] = *id_override;
        return from_json(j);
    }
    return load_ini(path, std::move(id_override));
}

inline void validate(const ExperimentConfig& e) {
    e.pwgf.validate();
    if (e.recon_nodes < 3) throw ConfigError("config field 'recon_nodes' must be at least 3");
    if (e.fd.n < 1) throw ConfigError("config field 'fd.n' must be positive");
    if (!(e.fd.tau > 0.0)) throw ConfigError("config field 'fd.tau' must be positive");
    if (!(e.fd.gap_tol > 0.0)) throw ConfigError("config field 'fd.gap_tol' must be positive");
}

/// runs/<id>/<UTC timestamp>[-k]
inline std::filesystem::path make_run_dir(const std::string& root, const std::string& id) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream ts;
    ts << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
    const std::filesystem::path base = std::filesystem::path(root) / id;
    std::filesystem::path dir = base / ts.str();
    for (int k = 1; std::filesystem::exists(dir); ++k) dir = base / (ts.str() + "-" + std::to_string(k));
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Warm-start comparison

struct WarmRow {
    std::string init;
    double E0 = 0.0;
    double E1 = 0.0;
    double E10 = std::numeric_limits<double>::quiet_NaN();
    double gap1 = 0.0;  // |E^1 - E_ref|
    long steps_to_tol = -1;
    H1Result result;
};

struct WarmTable {
    double E_ref = 0.0;
    bool E_ref_computed = false;
    std::size_t E_ref_steps = 0;
    std::vector<WarmRow> rows;
};

inline FdProblem fd_problem(const ExperimentConfig& e, std::size_t n) {
    return make_fd_problem(Potential::make(e.pwgf.potential, e.pwgf.potential_amplitude), n, e.pwgf.L, e.pwgf.beta);
}

/// Reference energy for the gap columns: configured value, or the constant-one flow run to fd.tol.
inline double reference_energy(const ExperimentConfig& e, const FdProblem& p, bool* computed = nullptr,
                               std::size_t* steps = nullptr) {
    if (!std::isnan(e.fd.reference_energy)) {
        if (computed) *computed = false;
        return e.fd.reference_energy;
    }
    H1Options opt;
    opt.tau = e.fd.tau;
    opt.tol = e.fd.tol;
    opt.max_steps = std::max<std::size_t>(e.fd.max_steps, 1);
    const H1Result r = h1_solve(fd_constant_one(p), p, opt);
    if (!r.converged)
        throw SolverError("constant-one H1 reference run did not converge in " + std::to_string(opt.max_steps) +
                          " steps; raise fd.max_steps or set fd.reference_energy");
    if (computed) *computed = true;
    if (steps) *steps = r.history.size() - 1;
    return r.E;
}

/// H1 from constant-one, |N(0,1)| (fd.random_seed) and the PWGF warm start, each run until the
/// energy is within gap_tol of the reference or max_steps is hit.
inline WarmTable warmstart_table(const ExperimentConfig& e, const GridFunction& u_pwgf,
                                 const std::function<void(const std::string&, const H1Record&)>& on_step = {}) {
    const FdProblem p = fd_problem(e, e.fd.n);
    WarmTable t;
    t.E_ref = reference_energy(e, p, &t.E_ref_computed, &t.E_ref_steps);
    const GridFunction warm = interpolate_to_fd(u_pwgf, e.fd.n);
    const std::vector<std::pair<std::string, std::vector<double>>> inits{
        {"constant_one", fd_constant_one(p)},
        {"random_abs_normal_seed" + std::to_string(e.fd.random_seed), fd_random_abs_normal(p, e.fd.random_seed)},
        {"pwgf_warm_start", interior_values(warm, p)}};
    for (const auto& [name, u0] : inits) {
        WarmRow row;
        row.init = name;
        H1Options opt;
        opt.tau = e.fd.tau;
        opt.tol = e.fd.tol;
        opt.max_steps = std::max<std::size_t>(e.fd.max_steps, 10);
        const double E_ref = t.E_ref, gap_tol = e.fd.gap_tol;
        opt.stop = [&](const H1Record& r) { return r.step >= 10 && std::fabs(r.E - E_ref) <= gap_tol; };
        if (on_step) opt.on_step = [&, n = name](const H1Record& r) { on_step(n, r); };
        row.result = h1_solve(u0, p, opt);
        const auto& h = row.result.history;
        row.E0 = h.front().E;
        row.E1 = h.size() > 1 ? h[1].E : h[0].E;
        row.gap1 = std::fabs(row.E1 - t.E_ref);
        if (h.size() > 10) row.E10 = h[10].E;
        for (const auto& r : h)
            if (std::fabs(r.E - t.E_ref) <= gap_tol) {
                row.steps_to_tol = static_cast<long>(r.step);
                break;
            }
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline void write_warm_csv(const WarmTable& t, std::ostream& os) {
    os << "init,E0,E1,abs_E1_minus_Eref,E10,steps_to_tol\n";
    os.precision(17);
    for (const auto& r : t.rows) {
        os << r.init << ',' << r.E0 << ',' << r.E1 << ',' << r.gap1 << ',';
        if (!std::isnan(r.E10)) os << r.E10;
        os << ',';
        if (r.steps_to_tol >= 0) os << r.steps_to_tol;
        os << '\n';
    }
}

inline void write_h1_csv(const H1Result& r, std::ostream& os) {
    os << "step,E,lambda,residual,tau\n";
    os.precision(17);
    for (const auto& h : r.history) os << h.step << ',' << h.E << ',' << h.lambda << ',' << h.residual << ',' << h.tau << '\n';
}

// ---------------------------------------------------------------------------
// Ablation (1D)

enum class AblationAxis { N, H, N_ODE };

inline AblationAxis ablation_axis_from_string(const std::string& s) {
    if (s == "N") return AblationAxis::N;
    if (s == "H") return AblationAxis::H;
    if (s == "N_ODE") return AblationAxis::N_ODE;
    throw ConfigError("unknown ablation axis '" + s + "' (expected N, H or N_ODE)");
}

inline std::vector<std::size_t> default_ablation_values(AblationAxis a) {
    switch (a) {
        case AblationAxis::N: return {1000, 3000, 10000};
        case AblationAxis::H: return {5, 10, 20};
        case AblationAxis::N_ODE: return {10, 80};
    }
    return {};
}

struct AblationRow {
    std::size_t value = 0;
    double best_E = 0.0;
    double plateau_l2 = 0.0;  // ||u - u*|| at the best iterate
    std::size_t best_step = 0;
    double seconds = 0.0;
};

inline std::vector<AblationRow> ablation(const ExperimentConfig& e, AblationAxis axis,
                                         const std::vector<std::size_t>& values,
                                         const std::function<void(const AblationRow&)>& on_row = {}) {
    if (e.pwgf.d != 1 || e.pwgf.potential != PotentialId::Cos1D)
        throw ConfigError("ablation sweeps are defined for the 1D cos1d experiment");
    std::vector<AblationRow> rows;
    for (std::size_t v : values) {
        PwgfConfig c = e.pwgf;
        c.error_every = 0;
        switch (axis) {
            case AblationAxis::N: c.N = v; break;
            case AblationAxis::H: c.H = v; break;
            case AblationAxis::N_ODE: c.n_ode = v; break;
        }
        const RunResult r = run(c);
        rows.push_back({v, r.record.best_E, r.record.best_l2_error, r.record.best_step, r.record.times.total});
        if (on_row) on_row(rows.back());
    }
    return rows;
}

inline void write_ablation_csv(const std::string& axis, const std::vector<AblationRow>& rows, std::ostream& os) {
    os << axis << ",best_E,plateau_l2_error,best_step\n";
    os.precision(17);
    for (const auto& r : rows) os << r.value << ',' << r.best_E << ',' << r.plateau_l2 << ',' << r.best_step << '\n';
}

}  // namespace pwgf::experiment
