#pragma once

// Boundary-preserving Neural ODE transport map, one scalar flow per axis.
//
// Each coordinate follows dw/dtau = f(w) = (1 - w^2/L^2) g(w) on tau in [0, 1]
// with forward Euler. Alongside w the integrator carries the log-Jacobian l,
// the Jacobian J = exp(l) and l' = dl/dz:
//
//   l_{n+1}  = l_n + dt f'(w_n)
//   J_{n+1}  = exp(l_{n+1})
//   l'_{n+1} = l'_n + dt f''(w_n) J_{n+1}
//   w_{n+1}  = w_n + dt f(w_n)

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pwgf/common.hpp"
#include "pwgf/net.hpp"
#include "pwgf/reference.hpp"

namespace pwgf {

/// Product map T(z) = (T_1(z_1), ..., T_d(z_d)) with one network per axis.
struct TransportMap {
    std::size_t d = 1;
    std::size_t H = 10;
    std::size_t n_ode = 10;
    double L = 1.0;
    std::vector<double> theta;  // d blocks of net_param_count(H)

    static TransportMap zeros(std::size_t d, std::size_t H, std::size_t n_ode, double L) {
        TransportMap m;
        m.d = d;
        m.H = H;
        m.n_ode = n_ode;
        m.L = L;
        m.theta.assign(d * net_param_count(H), 0.0);
        return m;
    }

    /// One draw of weights N(0, scale^2) with zero biases, copied to every axis network.
    static TransportMap random(std::size_t d, std::size_t H, std::size_t n_ode, double L, Rng& rng,
                               double scale = 0.01) {
        TransportMap m = zeros(d, H, n_ode, L);
        const auto block = NetworkParams::random(H, rng, scale).flatten();
        for (std::size_t k = 0; k < d; ++k)
            std::copy(block.begin(), block.end(), m.theta.begin() + static_cast<std::ptrdiff_t>(k * block.size()));
        return m;
    }

    std::size_t block_size() const { return net_param_count(H); }
    std::size_t param_count() const { return d * block_size(); }
    double dt() const { return 1.0 / static_cast<double>(n_ode); }

    std::span<const double> block(std::size_t k) const {
        return std::span<const double>(theta).subspan(k * block_size(), block_size());
    }
    NetView axis(std::size_t k) const { return NetView::from_flat(block(k), H); }
};

/// f and its first three spatial derivatives at w.
struct Velocity {
    double f = 0.0, df = 0.0, d2f = 0.0, d3f = 0.0;
};

/// Boundary factor phi = 1 - w^2/L^2 and its derivatives combined with the network jets.
inline Velocity velocity_from(const NetEval& e, double L, double w) {
    const double L2 = L * L;
    const double phi = 1.0 - (w * w) / L2;
    const double dphi = -2.0 * w / L2;
    const double d2phi = -2.0 / L2;
    Velocity v;
    v.f = phi * e.g;
    v.df = dphi * e.g + phi * e.dg;
    v.d2f = d2phi * e.g + 2.0 * dphi * e.dg + phi * e.d2g;
    v.d3f = 3.0 * d2phi * e.dg + 3.0 * dphi * e.d2g + phi * e.d3g;
    return v;
}

inline Velocity velocity(const NetView& p, double L, double w, NetEval& scratch) {
    net_eval(p, w, scratch);
    return velocity_from(scratch, L, w);
}

inline Velocity velocity(const NetView& p, double L, double w) {
    NetEval e;
    return velocity(p, L, w, e);
}

/// Accumulate d(c0 f + c1 f' + c2 f'')/dtheta for the network evaluated in `e` at w.
inline void velocity_backprop(const NetView& p, const NetEval& e, double L, double w, double c0, double c1,
                              double c2, std::span<double> grad) {
    const double L2 = L * L;
    const double phi = 1.0 - (w * w) / L2;
    const double dphi = -2.0 * w / L2;
    const double d2phi = -2.0 / L2;
    const double lg = c0 * phi + c1 * dphi + c2 * d2phi;
    const double lg1 = c1 * phi + 2.0 * c2 * dphi;
    const double lg2 = c2 * phi;
    net_backprop_accumulate(p, e.tape, lg, lg1, lg2, grad);
}

struct AugmentedState {
    double w = 0.0;     // position
    double ell = 0.0;   // log-Jacobian
    double J = 1.0;     // exp(ell)
    double dell = 0.0;  // d ell / dz
};

/// Positions w_n (n = 0..n_ode) and Jacobians J_n of one axis trajectory.
struct AxisTrajectory {
    std::vector<double> w;
    std::vector<double> J;
};

/// Integrate one coordinate from z. `traj` is filled when non-null.
inline AugmentedState integrate_axis(const NetView& p, double L, std::size_t n_ode, double z, NetEval& scratch,
                                     AxisTrajectory* traj = nullptr) {
    const double dt = 1.0 / static_cast<double>(n_ode);
    AugmentedState s{z, 0.0, 1.0, 0.0};
    if (traj) {
        traj->w.resize(n_ode + 1);
        traj->J.resize(n_ode + 1);
        traj->w[0] = z;
        traj->J[0] = 1.0;
    }
    for (std::size_t n = 0; n < n_ode; ++n) {
        const Velocity v = velocity(p, L, s.w, scratch);
        s.ell += dt * v.df;
        s.J = std::exp(s.ell);
        s.dell += dt * v.d2f * s.J;
        s.w += dt * v.f;
        if (traj) {
            traj->w[n + 1] = s.w;
            traj->J[n + 1] = s.J;
        }
    }
    return s;
}

/// Position-only map evaluation T_k(z).
inline double map_axis(const NetView& p, double L, std::size_t n_ode, double z) {
    const double dt = 1.0 / static_cast<double>(n_ode);
    double w = z;
    for (std::size_t n = 0; n < n_ode; ++n) w += dt * (1.0 - (w * w) / (L * L)) * net_value(p, w);
    return w;
}

/// Terminal adjoint of (w, ell, dell) for one reverse sweep; J's dependence is folded into ell.
struct AxisAdjoint {
    double w = 0.0;
    double ell = 0.0;
    double dell = 0.0;
};

/// Reverse sweep of the discrete recursion for one axis trajectory.
///
/// Each adjoint seed in `seeds` accumulates its parameter gradient into the
/// matching span of `outputs`. All seeds share the network evaluations.
inline void reverse_axis(const NetView& p, double L, const AxisTrajectory& traj, std::span<const AxisAdjoint> seeds,
                         std::span<const std::span<double>> outputs, NetEval& scratch) {
    const std::size_t n_ode = traj.w.size() - 1;
    const double dt = 1.0 / static_cast<double>(n_ode);
    AxisAdjoint adj[4];
    const std::size_t ns = seeds.size();
    for (std::size_t s = 0; s < ns; ++s) adj[s] = seeds[s];
    for (std::size_t n = n_ode; n-- > 0;) {
        const double w = traj.w[n];
        const double Jn1 = traj.J[n + 1];
        net_eval(p, w, scratch);
        const Velocity v = velocity_from(scratch, L, w);
        for (std::size_t s = 0; s < ns; ++s) {
            AxisAdjoint& a = adj[s];
            const double ell_tot = a.ell + a.dell * dt * v.d2f * Jn1;
            const double c0 = a.w * dt;
            const double c1 = ell_tot * dt;
            const double c2 = a.dell * dt * Jn1;
            velocity_backprop(p, scratch, L, w, c0, c1, c2, outputs[s]);
            a.w = a.w + c0 * v.df + c1 * v.d2f + c2 * v.d3f;
            a.ell = ell_tot;
        }
    }
}

inline void check_state(const AugmentedState& s, double L, std::size_t particle, std::size_t axis) {
    if (!std::isfinite(s.w) || !std::isfinite(s.ell) || !std::isfinite(s.J) || !std::isfinite(s.dell))
        throw IntegrationError("non-finite augmented state for particle " + std::to_string(particle) + ", axis " +
                               std::to_string(axis));
    if (!(std::fabs(s.w) < L))
        throw IntegrationError("particle " + std::to_string(particle) + " left the domain on axis " +
                               std::to_string(axis) + " (w = " + std::to_string(s.w) + ")");
}

/// Augmented states for every particle and axis, N x d row-major.
inline std::vector<AugmentedState> integrate_augmented(const TransportMap& map, const ParticleSet& ps) {
    if (ps.d != map.d) throw DomainError("particle dimension does not match the transport map");
    std::vector<AugmentedState> out(ps.N * ps.d);
    NetEval scratch;
    for (std::size_t k = 0; k < map.d; ++k) {
        const NetView view = map.axis(k);
        for (std::size_t i = 0; i < ps.N; ++i) {
            const double z = ps.coord(i, k);
            if (!(std::fabs(z) < map.L)) throw DomainError("particle " + std::to_string(i) + " is not inside (-L, L)");
            const AugmentedState s = integrate_axis(view, map.L, map.n_ode, z, scratch);
            check_state(s, map.L, i, k);
            out[i * ps.d + k] = s;
        }
    }
    return out;
}

/// rho(x_i) = exp(log mu(z_i) - sum_k ell_{k,i}).
inline std::vector<double> density_at_particles(const TransportMap& map, const ParticleSet& ps,
                                                std::span<const AugmentedState> aug) {
    std::vector<double> rho(ps.N);
    for (std::size_t i = 0; i < ps.N; ++i) {
        double ell = 0.0;
        for (std::size_t k = 0; k < map.d; ++k) ell += aug[i * ps.d + k].ell;
        rho[i] = std::exp(ps.log_mu_total(i) - ell);
    }
    return rho;
}

/// s_{k,i} = (d/dz log mu_k(z_{k,i}) - ell'_{k,i}) / J_{k,i}.
inline std::vector<double> score_at_particles(const TransportMap& map, const ParticleSet& ps,
                                              std::span<const AugmentedState> aug) {
    std::vector<double> s(ps.N * ps.d);
    for (std::size_t i = 0; i < ps.N; ++i)
        for (std::size_t k = 0; k < map.d; ++k) {
            const AugmentedState& a = aug[i * ps.d + k];
            if (!(a.J > 0.0))
                throw IntegrationError("diffeomorphism violation: J <= 0 for particle " + std::to_string(i) +
                                       ", axis " + std::to_string(k));
            s[i * ps.d + k] = (ps.score[i * ps.d + k] - a.dell) / a.J;
        }
    return s;
}

/// Per-particle rows of dT/dtheta. Row (i, k) holds dT_k(z_i)/dtheta_k; the
/// entries for other axes' blocks are structurally zero and not stored.
struct ParameterJacobian {
    std::size_t N = 0;
    std::size_t d = 0;
    std::size_t block = 0;
    std::vector<double> rows;  // N x d x block

    std::span<const double> row(std::size_t i, std::size_t k) const {
        return std::span<const double>(rows).subspan((i * d + k) * block, block);
    }
    std::span<double> row(std::size_t i, std::size_t k) {
        return std::span<double>(rows).subspan((i * d + k) * block, block);
    }

    /// Full d x M Jacobian of particle i, row-major.
    std::vector<double> dense(std::size_t i) const {
        std::vector<double> out(d * d * block, 0.0);
        for (std::size_t k = 0; k < d; ++k) {
            const auto r = row(i, k);
            std::copy(r.begin(), r.end(), out.begin() + static_cast<std::ptrdiff_t>(k * d * block + k * block));
        }
        return out;
    }
};

/// Exact derivative of the Euler-discretized map with respect to theta.
inline ParameterJacobian parameter_jacobian(const TransportMap& map, const ParticleSet& ps) {
    ParameterJacobian jac{ps.N, map.d, map.block_size(), std::vector<double>(ps.N * map.d * map.block_size(), 0.0)};
    NetEval scratch;
    AxisTrajectory traj;
    const AxisAdjoint seed{1.0, 0.0, 0.0};
    for (std::size_t k = 0; k < map.d; ++k) {
        const NetView view = map.axis(k);
        for (std::size_t i = 0; i < ps.N; ++i) {
            integrate_axis(view, map.L, map.n_ode, ps.coord(i, k), scratch, &traj);
            const std::span<double> out[1] = {jac.row(i, k)};
            reverse_axis(view, map.L, traj, std::span<const AxisAdjoint>(&seed, 1), out, scratch);
        }
    }
    return jac;
}

}  // namespace pwgf
