#pragma once

// Finite-difference H1 Sobolev gradient flow for the Gross-Pitaevskii ground state.
//
// Unknowns live on the n^d interior nodes of [-L, L]^d with h = 2L/(n+1) and
// homogeneous Dirichlet data. Each step solves (-Lap_h + I) twice by CG:
//
//   y = (-Lap_h + I)^{-1} (-Lap_h u + V u + beta u^3),   z = (-Lap_h + I)^{-1} u
//   u <- normalize(u - tau (y - (<u,y>/<u,z>) z))
//
// The correction is the H1-orthogonal projection of y onto the tangent space
// of the L2 sphere at u, so the discrete ground state is a fixed point.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pwgf/common.hpp"
#include "pwgf/potentials.hpp"
#include "pwgf/reconstruct.hpp"

namespace pwgf {

struct FdProblem {
    std::size_t d = 2;
    std::size_t n = 0;  // interior nodes per axis
    double L = 1.0;
    double beta = 0.0;
    std::vector<double> V;  // nodal potential on the interior nodes

    double h() const { return 2.0 * L / static_cast<double>(n + 1); }
    std::size_t size() const {
        std::size_t c = 1;
        for (std::size_t k = 0; k < d; ++k) c *= n;
        return c;
    }
    double cell_volume() const { return std::pow(h(), static_cast<double>(d)); }
};

inline FdProblem make_fd_problem(const Potential& pot, std::size_t n, double L, double beta) {
    FdProblem p;
    p.d = pot.dim();
    p.n = n;
    p.L = L;
    p.beta = beta;
    p.V.resize(p.size());
    std::vector<double> x(p.d);
    const double h = p.h();
    for (std::size_t idx = 0; idx < p.V.size(); ++idx) {
        std::size_t rem = idx;
        for (std::size_t k = p.d; k-- > 0;) {
            x[k] = -L + static_cast<double>(rem % n + 1) * h;
            rem /= n;
        }
        p.V[idx] = pot.value(x);
        if (p.V[idx] < 0.0) throw ConfigError("FD problem needs V >= 0 at every node");
    }
    return p;
}

/// out = -Lap_h u (zero Dirichlet data).
inline void neg_laplacian(const FdProblem& p, std::span<const double> u, std::span<double> out) {
    const std::size_t n = p.n;
    const double ih2 = 1.0 / (p.h() * p.h());
    const double diag = 2.0 * static_cast<double>(p.d) * ih2;
    auto at = [&](std::size_t i) { return u[i]; };
    if (p.d == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = diag * at(i);
            if (i > 0) s -= ih2 * at(i - 1);
            if (i + 1 < n) s -= ih2 * at(i + 1);
            out[i] = s;
        }
    } else if (p.d == 2) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t c = i * n + j;
                double nb = 0.0;
                if (i > 0) nb += at(c - n);
                if (i + 1 < n) nb += at(c + n);
                if (j > 0) nb += at(c - 1);
                if (j + 1 < n) nb += at(c + 1);
                out[c] = diag * at(c) - ih2 * nb;
            }
    } else if (p.d == 3) {
        const std::size_t n2 = n * n;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t k = 0; k < n; ++k) {
                    const std::size_t c = i * n2 + j * n + k;
                    double nb = 0.0;
                    if (i > 0) nb += at(c - n2);
                    if (i + 1 < n) nb += at(c + n2);
                    if (j > 0) nb += at(c - n);
                    if (j + 1 < n) nb += at(c + n);
                    if (k > 0) nb += at(c - 1);
                    if (k + 1 < n) nb += at(c + 1);
                    out[c] = diag * at(c) - ih2 * nb;
                }
    } else {
        throw DomainError("FD Laplacian implemented for d = 1, 2, 3");
    }
}

/// Discrete L2 inner product h^d sum a_i b_i.
inline double fd_inner(const FdProblem& p, std::span<const double> a, std::span<const double> b) {
    return p.cell_volume() * dot(a, b);
}

struct InnerSolve {
    std::size_t iterations = 0;
    double relative_residual = 0.0;
};

/// Solve (-Lap_h + I) x = b by CG, starting from the incoming x.
inline InnerSolve solve_shifted_laplacian(const FdProblem& p, std::span<const double> b, std::span<double> x,
                                          double rel_tol = 1e-10, std::size_t max_iter = 500) {
    const std::size_t m = b.size();
    std::vector<double> r(m), q(m), Aq(m);
    neg_laplacian(p, x, Aq);
    for (std::size_t i = 0; i < m; ++i) r[i] = b[i] - Aq[i] - x[i];
    const double bnorm = std::max(norm2(b), 1e-300);
    double rs = dot(r, r);
    q = r;
    InnerSolve info;
    while (std::sqrt(rs) > rel_tol * bnorm && info.iterations < max_iter) {
        neg_laplacian(p, q, Aq);
        for (std::size_t i = 0; i < m; ++i) Aq[i] += q[i];
        const double alpha = rs / dot(q, Aq);
        for (std::size_t i = 0; i < m; ++i) {
            x[i] += alpha * q[i];
            r[i] -= alpha * Aq[i];
        }
        const double rs_new = dot(r, r);
        const double beta = rs_new / rs;
        for (std::size_t i = 0; i < m; ++i) q[i] = r[i] + beta * q[i];
        rs = rs_new;
        ++info.iterations;
    }
    info.relative_residual = std::sqrt(rs) / bnorm;
    if (!(info.relative_residual <= rel_tol))
        throw SolverError("inner (-Lap + I) solve did not converge: relative residual " +
                          std::to_string(info.relative_residual) + " after " + std::to_string(info.iterations) +
                          " iterations");
    return info;
}

struct FdEnergy {
    double E = 0.0;
    double lambda = 0.0;
};

/// Energy 1/2 int |grad u|^2 + V u^2 + beta/2 u^4 with edge-centred forward
/// differences (boundary edges included) and nodal quadrature for the rest.
inline FdEnergy fd_energy_interior(const FdProblem& p, std::span<const double> u, bool check_norm = true) {
    const double vol = p.cell_volume();
    if (check_norm) {
        const double nrm = std::sqrt(vol * dot(u, u));
        if (std::fabs(nrm - 1.0) > 1e-8)
            throw DomainError("fd_energy expects a normalized function (discrete L2 norm " + std::to_string(nrm) + ")");
    }
    std::vector<double> lap(u.size());
    neg_laplacian(p, u, lap);
    double grad2 = 0.0, pot = 0.0, quart = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double u2 = u[i] * u[i];
        grad2 += u[i] * lap[i];
        pot += p.V[i] * u2;
        quart += u2 * u2;
    }
    grad2 *= vol;
    pot *= vol;
    quart *= vol;
    return {0.5 * (grad2 + pot) + 0.25 * p.beta * quart, grad2 + pot + p.beta * quart};
}

/// Interior values of a full grid function (boundary included) matching the problem.
inline std::vector<double> interior_values(const GridFunction& g, const FdProblem& p) {
    if (g.d != p.d || g.n != p.n + 2 || std::fabs(g.L - p.L) > 1e-12 * p.L)
        throw DomainError("grid function does not match the FD problem (need n + 2 nodes on the same box)");
    std::vector<double> out(p.size());
    std::size_t j[8];
    std::size_t o = 0;
    for (std::size_t idx = 0; idx < g.values.size(); ++idx) {
        if (g.on_boundary(idx)) continue;
        g.unflatten(idx, j);
        out[o++] = g.values[idx];
    }
    return out;
}

inline GridFunction to_grid(const FdProblem& p, std::span<const double> u) {
    GridFunction g = GridFunction::zeros(p.d, p.n + 2, p.L);
    std::size_t o = 0;
    for (std::size_t idx = 0; idx < g.values.size(); ++idx)
        if (!g.on_boundary(idx)) g.values[idx] = u[o++];
    return g;
}

inline FdEnergy fd_energy(const GridFunction& u, const FdProblem& p) {
    const auto v = interior_values(u, p);
    return fd_energy_interior(p, v);
}

inline void fd_normalize(const FdProblem& p, std::span<double> u) {
    const double nrm = std::sqrt(fd_inner(p, u, u));
    if (!(nrm > 0.0) || !std::isfinite(nrm)) throw DomainError("cannot normalize a zero or non-finite FD vector");
    for (double& x : u) x /= nrm;
}

/// Constant one on the interior, normalized.
inline std::vector<double> fd_constant_one(const FdProblem& p) {
    std::vector<double> u(p.size(), 1.0);
    fd_normalize(p, u);
    return u;
}

/// |N(0,1)| on the interior, normalized.
inline std::vector<double> fd_random_abs_normal(const FdProblem& p, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> u(p.size());
    for (double& x : u) x = std::fabs(rng.normal());
    fd_normalize(p, u);
    return u;
}

/// Reusable state of the flow: previous inner solutions seed the next CG solves.
struct H1Workspace {
    std::vector<double> y, z, r;
    std::size_t inner_iterations = 0;
};

struct H1Direction {
    std::vector<double> dir;  // projected H1 gradient y_t
    double residual = 0.0;    // ||-Lap u + V u + beta u^3 - lambda u||
};

inline H1Direction h1_direction(std::span<const double> u, const FdProblem& p, H1Workspace& ws) {
    const std::size_t m = u.size();
    ws.r.resize(m);
    if (ws.y.size() != m) ws.y.assign(m, 0.0);
    if (ws.z.size() != m) ws.z.assign(m, 0.0);
    neg_laplacian(p, u, ws.r);
    for (std::size_t i = 0; i < m; ++i) ws.r[i] += p.V[i] * u[i] + p.beta * u[i] * u[i] * u[i];
    const double lambda = fd_inner(p, u, ws.r);
    H1Direction out;
    double res = 0.0;
    for (std::size_t i = 0; i < m; ++i) res += (ws.r[i] - lambda * u[i]) * (ws.r[i] - lambda * u[i]);
    out.residual = std::sqrt(res * p.cell_volume());
    ws.inner_iterations += solve_shifted_laplacian(p, ws.r, ws.y).iterations;
    ws.inner_iterations += solve_shifted_laplacian(p, u, ws.z).iterations;
    const double c = fd_inner(p, u, ws.y) / fd_inner(p, u, ws.z);
    out.dir.resize(m);
    for (std::size_t i = 0; i < m; ++i) out.dir[i] = ws.y[i] - c * ws.z[i];
    return out;
}

/// One H1 step with fixed tau.
inline std::vector<double> h1_step(std::span<const double> u, const FdProblem& p, double tau, H1Workspace& ws) {
    const H1Direction dir = h1_direction(u, p, ws);
    std::vector<double> next(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) next[i] = u[i] - tau * dir.dir[i];
    fd_normalize(p, next);
    return next;
}

inline std::vector<double> h1_step(std::span<const double> u, const FdProblem& p, double tau) {
    H1Workspace ws;
    return h1_step(u, p, tau, ws);
}

struct H1Record {
    std::size_t step = 0;
    double E = 0.0;
    double lambda = 0.0;
    double residual = 0.0;
    double tau = 0.0;
};

struct H1Result {
    std::vector<double> u;
    double E = 0.0;
    double lambda = 0.0;
    std::vector<H1Record> history;  // entry 0 is the initial state
    bool converged = false;
};

struct H1Options {
    double tau = 0.9;
    std::size_t max_steps = 1000;
    double tol = 1e-10;            // stop when |E_k - E_{k-1}| <= tol
    std::size_t max_halvings = 10;  // consecutive energy increases tolerated before giving up
    std::function<void(const H1Record&)> on_step;
    std::function<bool(const H1Record&)> stop;  // early exit after a logged step
};

/// Iterate H1 steps with halve-on-increase backtracking until the energy change drops below tol.
inline H1Result h1_solve(std::vector<double> u, const FdProblem& p, const H1Options& opt) {
    fd_normalize(p, u);
    H1Workspace ws;
    H1Result res;
    FdEnergy e = fd_energy_interior(p, u);
    res.history.push_back({0, e.E, e.lambda, 0.0, 0.0});
    if (opt.on_step) opt.on_step(res.history.back());
    std::vector<double> trial(u.size());
    for (std::size_t step = 1; step <= opt.max_steps; ++step) {
        const H1Direction dir = h1_direction(u, p, ws);
        double tau = opt.tau;
        FdEnergy et{};
        std::size_t halvings = 0;
        for (;;) {
            for (std::size_t i = 0; i < u.size(); ++i) trial[i] = u[i] - tau * dir.dir[i];
            fd_normalize(p, trial);
            et = fd_energy_interior(p, trial);
            if (et.E <= e.E) break;
            if (++halvings >= opt.max_halvings) {
                // Stalled at roundoff level: the iterate is converged.
                if (et.E - e.E <= 1e-12 * std::fabs(e.E)) {
                    res.converged = true;
                    break;
                }
                throw SolverError("H1 flow diverging: energy increased for " + std::to_string(halvings) +
                                  " consecutive step-size halvings at step " + std::to_string(step));
            }
            tau *= 0.5;
        }
        if (res.converged) break;
        u.swap(trial);
        const double dE = std::fabs(e.E - et.E);
        e = et;
        res.history.push_back({step, e.E, e.lambda, dir.residual, tau});
        if (opt.on_step) opt.on_step(res.history.back());
        if (dE <= opt.tol) {
            res.converged = true;
            break;
        }
        if (opt.stop && opt.stop(res.history.back())) break;
    }
    res.E = e.E;
    res.lambda = e.lambda;
    res.u = std::move(u);
    return res;
}

}  // namespace pwgf
