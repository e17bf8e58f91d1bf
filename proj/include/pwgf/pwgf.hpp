#pragma once

// Natural-gradient descent on the transport-map parameters:
//
//   xi   = CG((G + eps I), grad E)        (up to n_cg iterations)
//   xi  <- min(1, C/|xi|) xi
//   trial theta - alpha xi; if E_trial > E + E_tol fall back to
//   theta - alpha grad/|grad|.
//
// The lowest-energy iterate is kept for reconstruction.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pwgf/common.hpp"
#include "pwgf/energy.hpp"
#include "pwgf/metric_solver.hpp"
#include "pwgf/potentials.hpp"
#include "pwgf/reconstruct.hpp"
#include "pwgf/reference.hpp"
#include "pwgf/transport.hpp"

namespace pwgf {

struct PwgfConfig {
    std::size_t d = 1;
    std::size_t N = 3000;
    std::size_t K = 400;
    double alpha = 0.005;
    std::size_t H = 10;
    std::size_t n_ode = 10;
    std::size_t n_cg = 100;
    double E_tol = 0.05;
    double clip = 10.0;
    double eps = 1e-6;
    std::uint64_t seed = 0;
    PotentialId potential = PotentialId::Cos1D;
    double potential_amplitude = 10.0;  // Cos1D prefactor; ignored by the other potentials
    double beta = 10.0;
    ReferenceKind reference = ReferenceKind::Beta22;
    double L = 1.0;
    double init_scale = 0.01;
    std::size_t error_every = 0;  // 1D only: L2 error against the exact state every this many steps
    std::size_t error_grid = 1001;
    bool ritz = false;  // log extreme Ritz values of G + eps I
    double cg_rel_tol = 0.0;  // optional CG exit on relative residual; 0 runs the full n_cg iterations

    void validate() const {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0)) throw ConfigError(std::string("config field '") + name + "' must be positive");
        };
        if (d < 1 || d > 3) throw ConfigError("config field 'd' must be 1, 2 or 3");
        if (N == 0) throw ConfigError("config field 'N' must be positive");
        if (N % (std::size_t{1} << d) != 0)
            throw ConfigError("config field 'N' = " + std::to_string(N) + " must be divisible by 2^d = " +
                              std::to_string(std::size_t{1} << d) + " (sign-symmetric sampling)");
        if (H == 0) throw ConfigError("config field 'H' must be positive");
        if (n_ode == 0) throw ConfigError("config field 'N_ODE' must be positive");
        if (n_cg == 0) throw ConfigError("config field 'n_CG' must be positive");
        positive(alpha, "alpha");
        positive(E_tol, "E_tol");
        positive(clip, "C");
        positive(eps, "eps");
        positive(L, "L");
        positive(init_scale, "init_scale");
        if (beta < 0.0) throw ConfigError("config field 'beta' must be non-negative");
        const std::size_t vd = potential == PotentialId::Cos1D ? 1 : potential == PotentialId::Lattice2D ? 2 : 3;
        if (potential != PotentialId::Custom && vd != d)
            throw ConfigError("config field 'potential' = " + to_string(potential) + " needs d = " +
                              std::to_string(vd));
    }
};

inline nlohmann::json to_json(const PwgfConfig& c) {
    return {{"d", c.d},
            {"N", c.N},
            {"K", c.K},
            {"alpha", c.alpha},
            {"H", c.H},
            {"N_ODE", c.n_ode},
            {"n_CG", c.n_cg},
            {"E_tol", c.E_tol},
            {"C", c.clip},
            {"eps", c.eps},
            {"seed", c.seed},
            {"potential", to_string(c.potential)},
            {"potential_amplitude", c.potential_amplitude},
            {"beta", c.beta},
            {"reference", to_string(c.reference)},
            {"L", c.L},
            {"init_scale", c.init_scale},
            {"error_every", c.error_every},
            {"error_grid", c.error_grid},
            {"ritz", c.ritz},
            {"cg_rel_tol", c.cg_rel_tol}};
}

inline PwgfConfig pwgf_config_from_json(const nlohmann::json& j) {
    PwgfConfig c;
    c.d = j.value("d", c.d);
    c.N = j.value("N", c.N);
    c.K = j.value("K", c.K);
    c.alpha = j.value("alpha", c.alpha);
    c.H = j.value("H", c.H);
    c.n_ode = j.value("N_ODE", c.n_ode);
    c.n_cg = j.value("n_CG", c.n_cg);
    c.E_tol = j.value("E_tol", c.E_tol);
    c.clip = j.value("C", c.clip);
    c.eps = j.value("eps", c.eps);
    c.seed = j.value("seed", c.seed);
    if (j.contains("potential")) c.potential = potential_id_from_string(j.at("potential").get<std::string>());
    c.potential_amplitude = j.value("potential_amplitude", c.potential_amplitude);
    c.beta = j.value("beta", c.beta);
    if (j.contains("reference")) c.reference = reference_kind_from_string(j.at("reference").get<std::string>());
    c.L = j.value("L", c.L);
    c.init_scale = j.value("init_scale", c.init_scale);
    c.error_every = j.value("error_every", c.error_every);
    c.error_grid = j.value("error_grid", c.error_grid);
    c.ritz = j.value("ritz", c.ritz);
    c.cg_rel_tol = j.value("cg_rel_tol", c.cg_rel_tol);
    return c;
}

/// Everything fixed for the duration of a run: reference densities, particles, potential.
struct Problem {
    std::vector<ReferenceDensity> refs;
    ParticleSet particles;
    Potential potential;
    double beta = 0.0;

    static Problem from_config(const PwgfConfig& c) {
        c.validate();
        std::vector<ReferenceDensity> refs(c.d, ReferenceDensity::make(c.reference, c.L));
        ParticleSet ps = sample_sign_symmetric(refs, c.d, c.N, c.seed);
        return Problem{std::move(refs), std::move(ps), Potential::make(c.potential, c.potential_amplitude), c.beta};
    }
};

/// Initial map: N(0, init_scale^2) weights, zero biases, seeded from the run seed.
inline TransportMap initial_map(const PwgfConfig& c) {
    Rng rng(c.seed ^ 0x9e3779b97f4a7c15ULL);
    return TransportMap::random(c.d, c.H, c.n_ode, c.L, rng, c.init_scale);
}

struct StepLog {
    std::size_t k = 0;
    EnergyBreakdown energy;
    double grad_norm = 0.0;
    double xi_norm = 0.0;
    double xi_norm_clipped = 0.0;
    bool accepted = true;  // false when the CG step was rejected and the fallback step taken
    double cg_residual = 0.0;
    double l2_error = std::numeric_limits<double>::quiet_NaN();
    double ritz_min = std::numeric_limits<double>::quiet_NaN();
    double ritz_max = std::numeric_limits<double>::quiet_NaN();
};

struct PhaseTimes {
    double evaluate = 0.0;  // ODE forward, reverse sweep and Jacobians
    double metric = 0.0;
    double cg = 0.0;
    double reconstruct = 0.0;
    double total = 0.0;
};

struct RunRecord {
    std::vector<StepLog> steps;
    double best_E = std::numeric_limits<double>::infinity();
    EnergyBreakdown best_energy;
    std::size_t best_step = 0;  // iterate index k of theta*
    std::vector<double> best_theta;
    double best_l2_error = std::numeric_limits<double>::quiet_NaN();
    PhaseTimes times;
    std::uint64_t seed = 0;
};

struct StepOutcome {
    std::vector<double> theta;
    Evaluation next;  // energy, gradient and Jacobians at the new theta
    StepLog log;
};

namespace detail {

using Clock = std::chrono::steady_clock;
inline double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline Evaluation evaluate_theta(const TransportMap& shape, std::span<const double> theta, const Problem& prob) {
    TransportMap m = shape;
    m.theta.assign(theta.begin(), theta.end());
    return evaluate(m, prob.particles, prob.potential, prob.beta, {.gradient = true, .jacobian = true});
}

}  // namespace detail

/// One natural-gradient step from theta whose evaluation `current` is already known.
inline StepOutcome pwgf_step(const TransportMap& shape, std::span<const double> theta, const Evaluation& current,
                             const Problem& prob, const PwgfConfig& cfg, PhaseTimes* times = nullptr) {
    using detail::Clock;
    StepOutcome out;
    out.log.energy = current.energy;
    out.log.grad_norm = norm2(current.gradient);

    auto t0 = Clock::now();
    const MetricTensor G = assemble_metric(current.jacobian, prob.particles.group_size());
    if (times) times->metric += detail::seconds_since(t0);

    t0 = Clock::now();
    CgResult cg = natural_direction(G, current.gradient, cfg.n_cg, cfg.eps, cfg.ritz, cfg.cg_rel_tol);
    if (times) times->cg += detail::seconds_since(t0);
    out.log.cg_residual = cg.residual_norm;
    if (cfg.ritz) {
        out.log.ritz_min = cg.ritz_min;
        out.log.ritz_max = cg.ritz_max;
    }

    const double xn = norm2(cg.xi);
    const double scale = xn > cfg.clip ? cfg.clip / xn : 1.0;
    out.log.xi_norm = xn;
    std::vector<double> trial(theta.begin(), theta.end());
    for (std::size_t m = 0; m < trial.size(); ++m) trial[m] -= cfg.alpha * (scale * cg.xi[m]);
    out.log.xi_norm_clipped = scale * xn;

    t0 = Clock::now();
    std::optional<Evaluation> ev;
    try {
        ev = detail::evaluate_theta(shape, trial, prob);
    } catch (const IntegrationError&) {
        ev.reset();
    }
    if (times) times->evaluate += detail::seconds_since(t0);

    if (ev && ev->energy.E <= current.energy.E + cfg.E_tol) {
        out.log.accepted = true;
        out.theta = std::move(trial);
        out.next = std::move(*ev);
        return out;
    }

    // Fallback: normalized gradient step (clipped like every other step).
    out.log.accepted = false;
    const double gn = out.log.grad_norm;
    std::vector<double> fb(theta.begin(), theta.end());
    if (gn > 0.0) {
        const double scale_fb = std::min(1.0, cfg.clip);
        for (std::size_t m = 0; m < fb.size(); ++m) fb[m] -= cfg.alpha * (scale_fb * (current.gradient[m] / gn));
    }
    t0 = Clock::now();
    out.next = detail::evaluate_theta(shape, fb, prob);
    if (times) times->evaluate += detail::seconds_since(t0);
    out.theta = std::move(fb);
    return out;
}

/// One step computed from scratch at theta.
inline StepOutcome pwgf_step(const TransportMap& shape, std::span<const double> theta, const Problem& prob,
                             const PwgfConfig& cfg) {
    const Evaluation cur = detail::evaluate_theta(shape, theta, prob);
    return pwgf_step(shape, theta, cur, prob, cfg);
}

/// L2 distance between the reconstructed 1D state and the exact ground state of the cos1d problem.
inline double l2_error_1d(const TransportMap& map, const ReferenceDensity& ref, std::size_t n_nodes, double beta) {
    const GridFunction u = reconstruct_u(map, std::span<const ReferenceDensity>(&ref, 1), n_nodes);
    GridFunction ex = GridFunction::zeros(1, n_nodes, map.L);
    for (std::size_t j = 1; j + 1 < n_nodes; ++j) ex.values[j] = exact_1d(u.node(j), beta).u;
    return l2_distance(u, ex);
}

struct RunResult {
    RunRecord record;
    TransportMap best_map;
    Problem problem;
};

/// K natural-gradient steps from the configured initial map.
///
/// `on_step` is invoked after each logged step. On failure the partially filled
/// record is attached to the thrown RunError.
struct RunError : Error {
    RunError(const std::string& what, RunRecord partial) : Error(what), record(std::move(partial)) {}
    RunRecord record;
};

inline RunResult run(const PwgfConfig& cfg, const std::function<void(const StepLog&)>& on_step = {}) {
    using detail::Clock;
    const auto t_start = Clock::now();
    Problem prob = Problem::from_config(cfg);
    TransportMap map = initial_map(cfg);
    RunRecord rec;
    rec.seed = cfg.seed;
    const bool track_error = cfg.error_every > 0 && cfg.d == 1 && cfg.potential == PotentialId::Cos1D;

    auto t0 = Clock::now();
    Evaluation cur;
    try {
        cur = detail::evaluate_theta(map, map.theta, prob);
    } catch (const Error& e) {
        throw RunError(std::string("initial evaluation failed: ") + e.what(), rec);
    }
    rec.times.evaluate += detail::seconds_since(t0);

    std::vector<double> theta = map.theta;
    auto consider_best = [&](std::size_t k, const Evaluation& ev, std::span<const double> th) {
        if (ev.energy.E < rec.best_E) {
            rec.best_E = ev.energy.E;
            rec.best_energy = ev.energy;
            rec.best_step = k;
            rec.best_theta.assign(th.begin(), th.end());
        }
    };
    consider_best(0, cur, theta);

    for (std::size_t k = 0; k < cfg.K; ++k) {
        StepOutcome so;
        try {
            so = pwgf_step(map, theta, cur, prob, cfg, &rec.times);
        } catch (const Error& e) {
            throw RunError("step " + std::to_string(k) + ": " + e.what(), rec);
        }
        so.log.k = k;
        if (track_error && k % cfg.error_every == 0) {
            t0 = Clock::now();
            TransportMap m = map;
            m.theta = theta;
            so.log.l2_error = l2_error_1d(m, prob.refs[0], cfg.error_grid, cfg.beta);
            rec.times.reconstruct += detail::seconds_since(t0);
        }
        rec.steps.push_back(so.log);
        if (on_step) on_step(rec.steps.back());
        theta = std::move(so.theta);
        cur = std::move(so.next);
        consider_best(k + 1, cur, theta);
    }

    RunResult res{std::move(rec), map, std::move(prob)};
    res.best_map.theta = res.record.best_theta;
    if (cfg.d == 1 && cfg.potential == PotentialId::Cos1D) {
        t0 = Clock::now();
        res.record.best_l2_error = l2_error_1d(res.best_map, res.problem.refs[0], cfg.error_grid, cfg.beta);
        res.record.times.reconstruct += detail::seconds_since(t0);
    }
    res.record.times.total = detail::seconds_since(t_start);
    return res;
}

inline void write_run_csv(const RunRecord& rec, std::ostream& os) {
    os << "step,E,F_Q,F_V,F_R,lambda,grad_norm,xi_norm,xi_norm_clipped,accepted,cg_residual,l2_error,ritz_min,"
          "ritz_max\n";
    os.precision(17);
    for (const StepLog& s : rec.steps) {
        os << s.k << ',' << s.energy.E << ',' << s.energy.F_Q << ',' << s.energy.F_V << ',' << s.energy.F_R << ','
           << s.energy.lambda << ',' << s.grad_norm << ',' << s.xi_norm << ',' << s.xi_norm_clipped << ','
           << (s.accepted ? 1 : 0) << ',' << s.cg_residual << ',';
        if (!std::isnan(s.l2_error)) os << s.l2_error;
        os << ',';
        if (!std::isnan(s.ritz_min)) os << s.ritz_min;
        os << ',';
        if (!std::isnan(s.ritz_max)) os << s.ritz_max;
        os << '\n';
    }
}

inline nlohmann::json run_summary(const PwgfConfig& cfg, const RunRecord& rec) {
    nlohmann::json j;
    j["best_E"] = rec.best_E;
    j["best_lambda"] = rec.best_energy.lambda;
    j["best_F_Q"] = rec.best_energy.F_Q;
    j["best_F_V"] = rec.best_energy.F_V;
    j["best_F_R"] = rec.best_energy.F_R;
    j["best_step"] = rec.best_step;
    if (!std::isnan(rec.best_l2_error)) j["best_l2_error"] = rec.best_l2_error;
    j["seed"] = rec.seed;
    j["steps"] = rec.steps.size();
    std::size_t rejected = 0;
    for (const auto& s : rec.steps) rejected += s.accepted ? 0 : 1;
    j["rejected_steps"] = rejected;
    j["wall_time"] = {{"total", rec.times.total},
                      {"evaluate", rec.times.evaluate},
                      {"metric", rec.times.metric},
                      {"cg", rec.times.cg},
                      {"reconstruct", rec.times.reconstruct}};
    j["config"] = to_json(cfg);
    j["best_theta"] = rec.best_theta;
    j["notes"] = "particle estimate of F_Q is biased low from tail under-sampling; E can fall below the true energy";
    return j;
}

}  // namespace pwgf
