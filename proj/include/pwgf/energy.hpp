#pragma once

// Particle estimators of the density-form Gross-Pitaevskii energy
//
//   E = F_Q + F_V + F_R,  F_Q = 1/8 int |grad log rho|^2 rho,
//   F_V = 1/2 int V rho,  F_R = beta/4 int rho^2,
//
// and the exact gradient of the estimator with respect to the map parameters,
// obtained by a reverse sweep through the Euler recursion.

#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <span>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "pwgf/common.hpp"
#include "pwgf/potentials.hpp"
#include "pwgf/reference.hpp"
#include "pwgf/transport.hpp"

namespace pwgf {

struct EnergyBreakdown {
    double F_Q = 0.0;
    double F_V = 0.0;
    double F_R = 0.0;
    double E = 0.0;
    double lambda = 0.0;
};

/// Eigenvalue recovered from the energy split: lambda = 2E + 2F_R.
inline double eigenvalue(const EnergyBreakdown& e) { return 2.0 * e.E + 2.0 * e.F_R; }

inline EnergyBreakdown make_breakdown(double fq, double fv, double fr) {
    EnergyBreakdown e{fq, fv, fr, fq + fv + fr, 0.0};
    e.lambda = eigenvalue(e);
    return e;
}

struct EvalOptions {
    bool gradient = false;
    bool jacobian = false;
};

struct Evaluation {
    EnergyBreakdown energy;
    std::vector<double> gradient;  // length M when requested
    ParameterJacobian jacobian;    // filled when requested
};

/// Energy, and optionally its parameter gradient and the per-particle map Jacobians,
/// in a single pass over the particles.
///
/// Reductions run over mirror groups (tree sum inside a group, groups in
/// ascending order), independent of the thread count.
inline Evaluation evaluate(const TransportMap& map, const ParticleSet& ps, const Potential& V, double beta,
                           EvalOptions opts = {}) {
    if (ps.d != map.d) throw DomainError("particle dimension does not match the transport map");
    if (V.dim() != map.d) throw ConfigError("potential dimension does not match the transport map");
    const std::size_t d = map.d;
    const std::size_t N = ps.N;
    const std::size_t group = ps.group_size();
    if (N % group != 0) throw ConfigError("particle count is not a multiple of the mirror group size");
    const std::size_t n_groups = N / group;
    const std::size_t B = map.block_size();
    const std::size_t M = map.param_count();

    std::vector<NetView> views;
    for (std::size_t k = 0; k < d; ++k) views.push_back(map.axis(k));

    std::vector<double> q(N), v(N), r(N);
    std::vector<double> group_grad(opts.gradient ? n_groups * M : 0, 0.0);
    Evaluation out;
    if (opts.jacobian) out.jacobian = ParameterJacobian{N, d, B, std::vector<double>(N * d * B, 0.0)};

    std::exception_ptr failure;
#pragma omp parallel
    {
        NetEval scratch;
        std::vector<AxisTrajectory> traj(group * d);
        std::vector<AugmentedState> st(d);
        std::vector<double> x(d), gradV(d), s(d);
        std::vector<double> pg(opts.gradient ? group * M : 0);

#pragma omp for schedule(static)
        for (std::size_t g = 0; g < n_groups; ++g) {
          try {
            std::fill(pg.begin(), pg.end(), 0.0);
            for (std::size_t p = 0; p < group; ++p) {
                const std::size_t i = g * group + p;
                double ell = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    st[k] = integrate_axis(views[k], map.L, map.n_ode, ps.coord(i, k), scratch, &traj[p * d + k]);
                    check_state(st[k], map.L, i, k);
                    if (!(st[k].J > 0.0))
                        throw IntegrationError("diffeomorphism violation: J <= 0 for particle " + std::to_string(i));
                    x[k] = st[k].w;
                    ell += st[k].ell;
                }
                const double Vx = V(x, gradV);
                double fq = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    s[k] = (ps.score[i * d + k] - st[k].dell) / st[k].J;
                    fq += s[k] * s[k];
                }
                const double rho = std::exp(ps.log_mu_total(i) - ell);
                q[i] = fq / 8.0;
                v[i] = Vx / 2.0;
                r[i] = beta / 4.0 * rho;

                if (!opts.gradient && !opts.jacobian) continue;
                for (std::size_t k = 0; k < d; ++k) {
                    AxisAdjoint seeds[2];
                    std::span<double> outs[2];
                    std::size_t ns = 0;
                    if (opts.gradient) {
                        seeds[ns] = {gradV[k] / 2.0, -s[k] * s[k] / 4.0 - r[i], -s[k] / (4.0 * st[k].J)};
                        outs[ns] = std::span<double>(pg).subspan(p * M + k * B, B);
                        ++ns;
                    }
                    if (opts.jacobian) {
                        seeds[ns] = {1.0, 0.0, 0.0};
                        outs[ns] = out.jacobian.row(i, k);
                        ++ns;
                    }
                    reverse_axis(views[k], map.L, traj[p * d + k], std::span<const AxisAdjoint>(seeds, ns),
                                 std::span<const std::span<double>>(outs, ns), scratch);
                }
            }
            if (opts.gradient) {
                for (std::size_t stride = 1; stride < group; stride *= 2)
                    for (std::size_t p = 0; p < group; p += 2 * stride)
                        for (std::size_t m = 0; m < M; ++m) pg[p * M + m] += pg[(p + stride) * M + m];
                std::copy(pg.begin(), pg.begin() + static_cast<std::ptrdiff_t>(M),
                          group_grad.begin() + static_cast<std::ptrdiff_t>(g * M));
            }
          } catch (...) {
#pragma omp critical
            if (!failure) failure = std::current_exception();
          }
        }
    }
    if (failure) std::rethrow_exception(failure);

    const double invN = 1.0 / static_cast<double>(N);
    out.energy = make_breakdown(group_sum(q, group) * invN, group_sum(v, group) * invN, group_sum(r, group) * invN);
    if (opts.gradient) {
        out.gradient.assign(M, 0.0);
        for (std::size_t g = 0; g < n_groups; ++g)
            for (std::size_t m = 0; m < M; ++m) out.gradient[m] += group_grad[g * M + m];
        for (double& x : out.gradient) x *= invN;
    }
    return out;
}

inline EnergyBreakdown energy(const TransportMap& map, const ParticleSet& ps, const Potential& V, double beta) {
    return evaluate(map, ps, V, beta).energy;
}

inline std::vector<double> energy_gradient(const TransportMap& map, const ParticleSet& ps, const Potential& V,
                                           double beta) {
    return evaluate(map, ps, V, beta, {.gradient = true}).gradient;
}

/// The three energy integrals of a 1D density on (a, b) by adaptive Gauss-Kronrod quadrature.
inline EnergyBreakdown density_energy_quadrature_1d(const std::function<double(double)>& rho,
                                                    const std::function<double(double)>& drho,
                                                    const std::function<double(double)>& V, double beta, double a,
                                                    double b) {
    using boost::math::quadrature::gauss_kronrod;
    auto integrate = [&](auto f) { return gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-14); };
    const double fq = integrate([&](double x) {
        const double p = rho(x);
        if (!(p > 0.0)) return 0.0;
        const double dp = drho(x);
        return dp * dp / p;
    });
    const double fv = integrate([&](double x) { return V(x) * rho(x); });
    const double fr = integrate([&](double x) { return rho(x) * rho(x); });
    return make_breakdown(fq / 8.0, fv / 2.0, beta / 4.0 * fr);
}

}  // namespace pwgf
