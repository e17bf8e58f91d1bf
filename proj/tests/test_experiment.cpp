#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "experiment.hpp"

using namespace pwgf;
using namespace pwgf::experiment;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    const fs::path d = fs::temp_directory_path() / "pwgf_test_experiment";
    fs::create_directories(d);
    return d;
}

fs::path write_file(const std::string& name, const std::string& text) {
    const fs::path p = scratch_dir() / name;
    std::ofstream(p) << text;
    return p;
}

}  // namespace

TEST_CASE("experiment presets carry the published hyperparameters", "[experiment]") {
    for (const char* id : {"gpe1d", "gpe2d", "gpe3d"}) {
        const PwgfConfig c = defaults(id).pwgf;
        INFO(id);
        CHECK(c.K == 400);
        CHECK(c.alpha == 0.005);
        CHECK(c.H == 10);
        CHECK(c.n_ode == 10);
        CHECK(c.eps == 1e-6);
        CHECK(c.init_scale == 0.01);
        CHECK_NOTHROW(c.validate());
    }
    const PwgfConfig c1 = defaults("gpe1d").pwgf;
    CHECK(c1.d == 1);
    CHECK(c1.N == 3000);
    CHECK(c1.n_cg == 100);
    CHECK(c1.E_tol == 0.05);
    CHECK(c1.clip == 10.0);
    CHECK(c1.beta == 10.0);
    CHECK(c1.reference == ReferenceKind::Beta22);
    CHECK(c1.L == 1.0);

    const ExperimentConfig e2 = defaults("gpe2d");
    CHECK(e2.pwgf.N == 3000);
    CHECK(e2.pwgf.n_cg == 200);
    CHECK(e2.pwgf.E_tol == 0.05);
    CHECK(e2.pwgf.clip == 10.0);
    CHECK(e2.pwgf.beta == 10.0);
    CHECK(e2.pwgf.reference == ReferenceKind::GaussMix);
    CHECK(e2.pwgf.L == 16.0);
    CHECK(e2.fd.n == 200);
    CHECK(e2.recon_nodes == 40);

    const ExperimentConfig e3 = defaults("gpe3d");
    CHECK(e3.pwgf.N == 6000);
    CHECK(e3.pwgf.n_cg == 300);
    CHECK(e3.pwgf.E_tol == 5.0);
    CHECK(e3.pwgf.clip == 50.0);
    CHECK(e3.pwgf.beta == 1600.0);
    CHECK(e3.pwgf.reference == ReferenceKind::Beta55);
    CHECK(e3.pwgf.L == 8.0);
    CHECK(e3.fd.n == 99);
    CHECK(e3.fd.n_fine == 199);
    CHECK(e3.recon_nodes == 40);

    CHECK_THROWS_AS(defaults("gpe4d"), ConfigError);
}

TEST_CASE("INI config overrides the preset", "[experiment][config]") {
    const auto p = write_file("a.ini",
                              "[experiment]\nid = gpe2d\nrecon_nodes = 81\n\n[pwgf]\nN = 400\nK = 7\nseed = 9\n"
                              "cg_rel_tol = 1e-3\nritz = true\n\n[fd]\nn = 50\ntau = 0.5\n");
    const ExperimentConfig e = load_config(p);
    CHECK(e.id == "gpe2d");
    CHECK(e.recon_nodes == 81);
    CHECK(e.pwgf.N == 400);
    CHECK(e.pwgf.K == 7);
    CHECK(e.pwgf.seed == 9);
    CHECK(e.pwgf.cg_rel_tol == 1e-3);
    CHECK(e.pwgf.ritz);
    CHECK(e.pwgf.n_cg == 200);
    CHECK(e.pwgf.L == 16.0);
    CHECK(e.fd.n == 50);
    CHECK(e.fd.tau == 0.5);
    CHECK(load_config(p, std::string("gpe2d")).pwgf.N == 400);
}

TEST_CASE("config errors name the offending key", "[experiment][config]") {
    auto message = [](const fs::path& p) {
        try {
            load_config(p);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK_THAT(message(write_file("b.ini", "[pwgf]\nnodes = 3\n")), Catch::Matchers::ContainsSubstring("pwgf.nodes"));
    CHECK_THAT(message(write_file("c.ini", "[fd]\nn = many\n")), Catch::Matchers::ContainsSubstring("fd.n"));
    CHECK_THAT(message(write_file("d.ini", "[solver]\nx = 1\n")), Catch::Matchers::ContainsSubstring("solver"));
    CHECK_THAT(message(scratch_dir() / "absent.ini"), Catch::Matchers::ContainsSubstring("not found"));

    ExperimentConfig e = defaults("gpe1d");
    CHECK_THROWS_AS(apply_overrides(e, {"N=5"}), ConfigError);
    apply_overrides(e, {"pwgf.N=3001"});
    try {
        validate(e);
        FAIL("odd N accepted");
    } catch (const ConfigError& err) {
        CHECK_THAT(err.what(), Catch::Matchers::ContainsSubstring("divisible"));
    }
}

TEST_CASE("command-line overrides", "[experiment][config]") {
    ExperimentConfig e = defaults("gpe3d");
    apply_overrides(e, {"pwgf.K=3", "fd.max_steps=4", "experiment.out=/tmp/x", "pwgf.potential=traplattice3d"});
    CHECK(e.pwgf.K == 3);
    CHECK(e.fd.max_steps == 4);
    CHECK(e.out == "/tmp/x");
    CHECK(e.pwgf.N == 6000);
}

TEST_CASE("a run summary re-creates the experiment config", "[experiment][config]") {
    ExperimentConfig e = defaults("gpe2d");
    e.pwgf.seed = 5;
    e.pwgf.K = 12;
    e.fd.reference_energy = 0.25;
    nlohmann::json summary = {{"best_E", 1.0}, {"experiment", to_json(e)}};
    const auto p = scratch_dir() / "summary.json";
    std::ofstream(p) << summary.dump(2);
    const ExperimentConfig r = load_config(p);
    CHECK(to_json(r) == to_json(e));
    const ExperimentConfig r3 = from_json(to_json(defaults("gpe3d")));
    CHECK(to_json(r3) == to_json(defaults("gpe3d")));
    CHECK(std::isnan(from_json(to_json(defaults("gpe2d"))).fd.reference_energy));
}

TEST_CASE("run directories are runs/<id>/<timestamp> and never collide", "[experiment][io]") {
    const fs::path root = scratch_dir() / "runs";
    fs::remove_all(root);
    const fs::path a = make_run_dir(root.string(), "gpe1d");
    const fs::path b = make_run_dir(root.string(), "gpe1d");
    CHECK(a != b);
    CHECK(a.parent_path() == root / "gpe1d");
    CHECK(fs::is_directory(a));
    CHECK(a.filename().string().size() >= 16);
}

TEST_CASE("1D PWGF run is byte-reproducible from its config echo", "[experiment]") {
    ExperimentConfig e = defaults("gpe1d");
    e.pwgf.N = 200;
    e.pwgf.K = 5;
    e.pwgf.H = 4;
    auto csv = [](const ExperimentConfig& x) {
        std::ostringstream os;
        write_run_csv(run(x.pwgf).record, os);
        return os.str();
    };
    const ExperimentConfig again = from_json(to_json(e));
    CHECK(csv(e) == csv(again));
}

TEST_CASE("warm-start table on a small 2D problem", "[experiment]") {
    ExperimentConfig e = defaults("gpe2d");
    e.pwgf.N = 64;
    e.pwgf.K = 10;
    e.pwgf.H = 4;
    e.fd.n = 30;
    e.fd.max_steps = 400;
    e.fd.gap_tol = 1e-3;
    const RunResult r = run(e.pwgf);
    const GridFunction u = reconstruct_u(r.best_map, r.problem.refs, e.recon_nodes);
    const WarmTable t = warmstart_table(e, u);
    REQUIRE(t.rows.size() == 3);
    CHECK(t.E_ref_computed);
    CHECK(t.rows[0].init == "constant_one");
    CHECK(t.rows[1].init == "random_abs_normal_seed42");
    CHECK(t.rows[2].init == "pwgf_warm_start");
    const FdProblem p = fd_problem(e, e.fd.n);
    CHECK(t.rows[0].E0 == Approx(fd_energy_interior(p, fd_constant_one(p)).E).epsilon(1e-13));
    CHECK(t.rows[1].E0 == Approx(fd_energy_interior(p, fd_random_abs_normal(p, 42)).E).epsilon(1e-13));
    for (const auto& row : t.rows) {
        CHECK(row.E1 <= row.E0);
        CHECK(row.gap1 == std::fabs(row.E1 - t.E_ref));
        CHECK(row.steps_to_tol >= 0);
        CHECK(row.result.E >= t.E_ref - 1e-3);
    }
    std::ostringstream os;
    write_warm_csv(t, os);
    CHECK(os.str().rfind("init,E0,E1,abs_E1_minus_Eref,E10,steps_to_tol\n", 0) == 0);
}

TEST_CASE("warm start rejects a grid from another box", "[experiment]") {
    ExperimentConfig e = defaults("gpe2d");
    e.fd.n = 10;
    e.fd.reference_energy = 0.2;
    GridFunction g = GridFunction::zeros(2, 9, 4.0);
    for (double& v : g.values) v = 1.0;
    g.zero_boundary();
    CHECK_THROWS_AS(warmstart_table(e, g), DomainError);
}

TEST_CASE("ablation sweeps are 1D only and follow the chosen axis", "[experiment]") {
    CHECK_THROWS_AS(ablation(defaults("gpe2d"), AblationAxis::N, {64}), ConfigError);
    CHECK_THROWS_AS(ablation_axis_from_string("alpha"), ConfigError);
    CHECK(default_ablation_values(AblationAxis::N) == std::vector<std::size_t>{1000, 3000, 10000});
    CHECK(default_ablation_values(AblationAxis::H) == std::vector<std::size_t>{5, 10, 20});
    CHECK(default_ablation_values(AblationAxis::N_ODE) == std::vector<std::size_t>{10, 80});
    ExperimentConfig e = defaults("gpe1d");
    e.pwgf.K = 3;
    e.pwgf.N = 100;
    const auto rows = ablation(e, AblationAxis::H, {3, 5});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].value == 3);
    CHECK(std::isfinite(rows[1].plateau_l2));
    std::ostringstream os;
    write_ablation_csv("H", rows, os);
    CHECK(os.str().rfind("H,best_E,plateau_l2_error,best_step\n", 0) == 0);
}
