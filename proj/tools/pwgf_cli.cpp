// pwgf: command-line experiment runner.
//
//   pwgf run-pwgf   --experiment gpe2d --seed 0
//   pwgf run-h1     --experiment gpe2d --init const
//   pwgf warmstart  --experiment gpe2d [--grid runs/gpe2d/<ts>/u]
//   pwgf ablation   --axis H --values 5,10,20
//   pwgf reconstruct --from runs/gpe1d/<ts>/summary.json --nodes 2001

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "experiment.hpp"

namespace fs = std::filesystem;
using namespace pwgf;
using namespace pwgf::experiment;

namespace {

struct Common {
    std::string experiment;
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string out;
    std::vector<std::string> overrides;
    int threads = 0;
    bool deterministic = false;
    bool quiet = false;
};

ExperimentConfig resolve(const Common& o) {
    const std::optional<std::string> id = o.experiment.empty() ? std::nullopt : std::optional(o.experiment);
    ExperimentConfig e = o.config.empty() ? defaults(id.value_or("gpe1d")) : load_config(o.config, id);
    apply_overrides(e, o.overrides);
    if (o.seed) e.pwgf.seed = *o.seed;
    if (!o.out.empty()) e.out = o.out;
    validate(e);
    return e;
}

void set_threads(const Common& o) {
#ifdef _OPENMP
    if (o.deterministic)
        omp_set_num_threads(1);
    else if (o.threads > 0)
        omp_set_num_threads(o.threads);
    else
        omp_set_num_threads(omp_get_num_procs());
#else
    (void)o;
#endif
}

int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void log_line(const Common& o, const std::string& s) {
    if (!o.quiet) std::cerr << s << '\n';
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p);
    if (!os) throw Error("cannot open " + p.string() + " for writing");
    return os;
}

nlohmann::json warm_json(const WarmTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : t.rows)
        rows.push_back({{"init", r.init},
                        {"E0", r.E0},
                        {"E1", r.E1},
                        {"abs_E1_minus_Eref", r.gap1},
                        {"E10", std::isnan(r.E10) ? nlohmann::json(nullptr) : nlohmann::json(r.E10)},
                        {"steps_to_tol", r.steps_to_tol},
                        {"final_E", r.result.E},
                        {"steps", r.result.history.size() - 1}});
    return {{"E_ref", t.E_ref},
            {"E_ref_source", t.E_ref_computed ? "constant-one H1 run to fd.tol" : "fd.reference_energy"},
            {"E_ref_steps", t.E_ref_steps},
            {"rows", rows}};
}

void write_warm_outputs(const fs::path& dir, const WarmTable& t) {
    auto os = open_out(dir / "warmstart.csv");
    write_warm_csv(t, os);
    for (const auto& r : t.rows) {
        auto h = open_out(dir / ("h1_" + r.init + ".csv"));
        write_h1_csv(r.result, h);
    }
}

WarmTable run_warm(const Common& o, const ExperimentConfig& e, const GridFunction& u) {
    return warmstart_table(e, u, [&](const std::string& name, const H1Record& r) {
        if (!o.quiet && (r.step % 10 == 0))
            std::cerr << "  h1 " << name << " step " << r.step << " E " << r.E << '\n';
    });
}

/// Reconstruct, export and (d > 1) evaluate the FD warm-start energy.
nlohmann::json export_state(const ExperimentConfig& e, const TransportMap& map, std::span<const ReferenceDensity> refs,
                            const fs::path& dir, GridFunction* u_out = nullptr) {
    nlohmann::json j;
    const GridFunction u = reconstruct_u(map, refs, e.recon_nodes);
    write_grid(u, dir / "u");
    if (u.d == 1) {
        auto os = open_out(dir / "u.csv");
        write_grid_csv_1d(u, os);
    } else {
        const GridFunction ufd = interpolate_to_fd(u, e.fd.n);
        write_grid(ufd, dir / "u_fd");
        j["warm_fd_E0"] = fd_energy(ufd, fd_problem(e, e.fd.n)).E;
        j["fd_n"] = e.fd.n;
        if (e.fd.n_fine > 0) {
            j["warm_fd_E0_fine"] = fd_energy(interpolate_to_fd(u, e.fd.n_fine), fd_problem(e, e.fd.n_fine)).E;
            j["fd_n_fine"] = e.fd.n_fine;
        }
    }
    if (u_out) *u_out = u;
    return j;
}

int cmd_run_pwgf(const Common& o) {
    const ExperimentConfig e = resolve(o);
    set_threads(o);
    const fs::path dir = make_run_dir(e.out, e.id);
    log_line(o, "run-pwgf " + e.id + " seed " + std::to_string(e.pwgf.seed) + " -> " + dir.string());
    write_json(dir / "config.json", to_json(e));

    std::optional<RunResult> res;
    try {
        res = run(e.pwgf, [&](const StepLog& s) {
            if (!o.quiet && (s.k % 20 == 0 || s.k + 1 == e.pwgf.K))
                std::cerr << "  step " << s.k << " E " << s.energy.E << (s.accepted ? "" : " (fallback)") << '\n';
        });
    } catch (const RunError& err) {
        auto os = open_out(dir / "steps.csv");
        write_run_csv(err.record, os);
        throw;
    }
    const RunResult& r = *res;
    {
        auto os = open_out(dir / "steps.csv");
        write_run_csv(r.record, os);
    }
    nlohmann::json summary = run_summary(e.pwgf, r.record);
    summary["experiment"] = to_json(e);
    summary["threads"] = thread_count();
    summary["deterministic"] = o.deterministic;

    GridFunction u;
    summary["reconstruction"] = export_state(e, r.best_map, r.problem.refs, dir, &u);
    if (e.warm_start) {
        const WarmTable t = run_warm(o, e, u);
        write_warm_outputs(dir, t);
        summary["warmstart"] = warm_json(t);
    }
    write_json(dir / "summary.json", summary);

    std::cout << "best_E " << r.record.best_E << " at step " << r.record.best_step;
    if (!std::isnan(r.record.best_l2_error)) std::cout << "  l2_error " << r.record.best_l2_error;
    if (summary["reconstruction"].contains("warm_fd_E0"))
        std::cout << "  warm_fd_E0 " << summary["reconstruction"]["warm_fd_E0"].get<double>();
    std::cout << "\noutput " << dir.string() << '\n';
    return 0;
}

int cmd_run_h1(const Common& o, const std::string& init) {
    ExperimentConfig e = resolve(o);
    set_threads(o);
    const FdProblem p = fd_problem(e, e.fd.n);
    std::vector<double> u0;
    if (init == "const")
        u0 = fd_constant_one(p);
    else if (init == "random")
        u0 = fd_random_abs_normal(p, e.fd.random_seed);
    else
        u0 = interior_values(interpolate_to_fd(read_grid(init), e.fd.n), p);
    const fs::path dir = make_run_dir(e.out, e.id);
    log_line(o, "run-h1 " + e.id + " n " + std::to_string(e.fd.n) + " from " + init + " -> " + dir.string());
    write_json(dir / "config.json", to_json(e));
    H1Options opt;
    opt.tau = e.fd.tau;
    opt.tol = e.fd.tol;
    opt.max_steps = e.fd.max_steps;
    opt.on_step = [&](const H1Record& r) {
        if (!o.quiet && r.step % 10 == 0) std::cerr << "  step " << r.step << " E " << r.E << '\n';
    };
    const auto t0 = std::chrono::steady_clock::now();
    const H1Result r = h1_solve(u0, p, opt);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    {
        auto os = open_out(dir / "h1.csv");
        write_h1_csv(r, os);
    }
    write_grid(to_grid(p, r.u), dir / "u");
    write_json(dir / "summary.json", {{"E", r.E},
                                      {"lambda", r.lambda},
                                      {"E0", r.history.front().E},
                                      {"steps", r.history.size() - 1},
                                      {"converged", r.converged},
                                      {"init", init},
                                      {"wall_time", {{"total", secs}}},
                                      {"experiment", to_json(e)}});
    std::cout << "E " << r.E << " lambda " << r.lambda << " steps " << r.history.size() - 1
              << (r.converged ? " converged" : " not converged") << "\noutput " << dir.string() << '\n';
    return 0;
}

int cmd_warmstart(const Common& o, const std::string& grid) {
    ExperimentConfig e = resolve(o);
    set_threads(o);
    const fs::path dir = make_run_dir(e.out, e.id);
    write_json(dir / "config.json", to_json(e));
    nlohmann::json summary;
    GridFunction u;
    if (grid.empty()) {
        log_line(o, "warmstart: no --grid given, training PWGF first -> " + dir.string());
        const RunResult r = run(e.pwgf, [&](const StepLog& s) {
            if (!o.quiet && s.k % 20 == 0) std::cerr << "  step " << s.k << " E " << s.energy.E << '\n';
        });
        auto os = open_out(dir / "steps.csv");
        write_run_csv(r.record, os);
        summary = run_summary(e.pwgf, r.record);
        summary["reconstruction"] = export_state(e, r.best_map, r.problem.refs, dir, &u);
    } else {
        u = read_grid(grid);
        if (u.d != e.pwgf.d || std::fabs(u.L - e.pwgf.L) > 1e-12 * e.pwgf.L)
            throw ConfigError("grid file " + grid + " does not match experiment " + e.id + " (dimension or box)");
        summary["grid"] = grid;
    }
    const WarmTable t = run_warm(o, e, u);
    write_warm_outputs(dir, t);
    summary["warmstart"] = warm_json(t);
    summary["experiment"] = to_json(e);
    write_json(dir / "summary.json", summary);
    write_warm_csv(t, std::cout);
    std::cout << "E_ref " << t.E_ref << "\noutput " << dir.string() << '\n';
    return 0;
}

int cmd_ablation(const Common& o, const std::string& axis_name, std::vector<std::size_t> values) {
    ExperimentConfig e = resolve(o);
    set_threads(o);
    const AblationAxis axis = ablation_axis_from_string(axis_name);
    if (values.empty()) values = default_ablation_values(axis);
    const fs::path dir = make_run_dir(e.out, e.id + "_ablation_" + axis_name);
    write_json(dir / "config.json", to_json(e));
    log_line(o, "ablation over " + axis_name + " -> " + dir.string());
    const auto rows = ablation(e, axis, values, [&](const AblationRow& r) {
        log_line(o, "  " + axis_name + "=" + std::to_string(r.value) + " best_E " + std::to_string(r.best_E) +
                        " l2 " + std::to_string(r.plateau_l2));
    });
    {
        auto os = open_out(dir / "ablation.csv");
        write_ablation_csv(axis_name, rows, os);
    }
    nlohmann::json jr = nlohmann::json::array();
    for (const auto& r : rows)
        jr.push_back({{"value", r.value}, {"best_E", r.best_E}, {"plateau_l2_error", r.plateau_l2}, {"seconds", r.seconds}});
    write_json(dir / "summary.json", {{"axis", axis_name}, {"rows", jr}, {"experiment", to_json(e)}});
    write_ablation_csv(axis_name, rows, std::cout);
    std::cout << "output " << dir.string() << '\n';
    return 0;
}

int cmd_reconstruct(const Common& o, const std::string& from, std::size_t nodes, std::size_t fd_n) {
    if (from.empty()) throw ConfigError("reconstruct needs --from <summary.json>");
    Common oo = o;
    oo.config = from;
    ExperimentConfig e = resolve(oo);
    if (nodes > 0) e.recon_nodes = nodes;
    if (fd_n > 0) e.fd.n = fd_n;
    std::ifstream is(from);
    const nlohmann::json s = nlohmann::json::parse(is);
    if (!s.contains("best_theta")) throw ConfigError(from + " has no best_theta (not a run-pwgf summary)");
    TransportMap map = TransportMap::zeros(e.pwgf.d, e.pwgf.H, e.pwgf.n_ode, e.pwgf.L);
    const auto theta = s.at("best_theta").get<std::vector<double>>();
    if (theta.size() != map.theta.size())
        throw ConfigError("best_theta has " + std::to_string(theta.size()) + " entries, expected " +
                          std::to_string(map.theta.size()));
    map.theta = theta;
    const std::vector<ReferenceDensity> refs(e.pwgf.d, ReferenceDensity::make(e.pwgf.reference, e.pwgf.L));
    const fs::path dir = make_run_dir(e.out, e.id + "_reconstruct");
    nlohmann::json j = export_state(e, map, refs, dir);
    j["recon_nodes"] = e.recon_nodes;
    j["source"] = from;
    if (e.pwgf.d == 1 && e.pwgf.potential == PotentialId::Cos1D)
        j["l2_error"] = l2_error_1d(map, refs[0], e.recon_nodes, e.pwgf.beta);
    j["experiment"] = to_json(e);
    write_json(dir / "summary.json", j);
    std::cout << j.dump(2) << "\noutput " << dir.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Particle Wasserstein gradient flow for Gross-Pitaevskii ground states"};
    app.require_subcommand(1);
    Common o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--experiment", o.experiment, "gpe1d | gpe2d | gpe3d | custom (default gpe1d)");
        sub->add_option("--seed", o.seed, "run seed (particles and initial map)");
        sub->add_option("--config", o.config, "INI config, experiment JSON, or a run summary.json to re-run");
        sub->add_option("--out", o.out, "output root (default runs)");
        sub->add_option("--set", o.overrides, "override section.key=value, repeatable")->take_all();
        sub->add_option("--threads", o.threads, "worker threads (default all cores)");
        sub->add_flag("--deterministic", o.deterministic, "single thread");
        sub->add_flag("--quiet", o.quiet, "no progress on stderr");
    };

    auto* run_pwgf = app.add_subcommand("run-pwgf", "train the transport map and export the reconstruction");
    add_common(run_pwgf);
    bool warm = false;
    run_pwgf->add_flag("--warm-start", warm, "follow with the H1 warm-start comparison");

    auto* run_h1 = app.add_subcommand("run-h1", "finite-difference H1 Sobolev gradient flow");
    add_common(run_h1);
    std::string init = "const";
    run_h1->add_option("--init", init, "const | random | <grid stem> (reads <stem>.f64 and <stem>.json)");

    auto* warmstart = app.add_subcommand("warmstart", "H1 from constant-one, random and PWGF warm start");
    add_common(warmstart);
    std::string grid;
    warmstart->add_option("--grid", grid, "PWGF reconstruction stem; trains first when omitted");

    auto* abl = app.add_subcommand("ablation", "1D sweep over N, H or N_ODE");
    add_common(abl);
    std::string axis = "N";
    std::vector<std::size_t> values;
    abl->add_option("--axis", axis, "N | H | N_ODE")->check(CLI::IsMember({"N", "H", "N_ODE"}));
    abl->add_option("--values", values, "comma separated values")->delimiter(',');

    auto* rec = app.add_subcommand("reconstruct", "reconstruct u from a run summary");
    add_common(rec);
    std::string from;
    std::size_t nodes = 0, fd_n = 0;
    rec->add_option("--from", from, "summary.json of a run-pwgf run")->required();
    rec->add_option("--nodes", nodes, "nodes per axis (default from the config)");
    rec->add_option("--fd-n", fd_n, "interior FD nodes for the interpolated copy");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_pwgf) {
            if (warm) o.overrides.push_back("experiment.warm_start=true");
            return cmd_run_pwgf(o);
        }
        if (*run_h1) return cmd_run_h1(o, init);
        if (*warmstart) return cmd_warmstart(o, grid);
        if (*abl) return cmd_ablation(o, axis, values);
        if (*rec) return cmd_reconstruct(o, from, nodes, fd_n);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
