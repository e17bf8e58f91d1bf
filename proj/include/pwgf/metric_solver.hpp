#pragma once

// Pullback metric G = (1/N) sum_i (dT/dtheta)^T (dT/dtheta) and the
// Tikhonov-regularized conjugate-gradient solve (G + eps I) xi = grad.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pwgf/common.hpp"
#include "pwgf/transport.hpp"

namespace pwgf {

/// Explicit M x M metric. Cross-axis blocks are exactly zero under the product map.
struct MetricTensor {
    Eigen::MatrixXd G;

    std::size_t size() const { return static_cast<std::size_t>(G.rows()); }
    void apply(std::span<const double> v, std::span<double> out) const {
        Eigen::Map<const Eigen::VectorXd> vv(v.data(), static_cast<Eigen::Index>(v.size()));
        Eigen::Map<Eigen::VectorXd> oo(out.data(), static_cast<Eigen::Index>(out.size()));
        oo.noalias() = G * vv;
    }
};

/// Gram average of per-particle Jacobian rows, reduced by mirror groups of `group` particles.
///
/// Within a group the rank-one terms are tree-summed, so entries pairing a
/// parameter whose row is even under a sign flip with one whose row is odd
/// cancel to exactly zero.
inline MetricTensor assemble_metric(const ParameterJacobian& jac, std::size_t group = 1) {
    if (jac.N == 0) throw DomainError("assemble_metric: no Jacobians");
    if (group == 0 || jac.N % group != 0 || (group & (group - 1)) != 0)
        throw DomainError("assemble_metric: group size must be a power of two dividing N");
    if (jac.rows.size() != jac.N * jac.d * jac.block)
        throw DomainError("assemble_metric: Jacobian storage does not match its declared shape");
    const std::size_t B = jac.block;
    const std::size_t M = jac.d * B;
    MetricTensor out{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(M))};
    std::vector<double> acc(B * B);
    std::vector<double> prod(group * B);
    for (std::size_t k = 0; k < jac.d; ++k) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t g = 0; g < jac.N; g += group) {
            for (std::size_t a = 0; a < B; ++a) {
                for (std::size_t p = 0; p < group; ++p) {
                    const double* row = jac.row(g + p, k).data();
                    const double ra = row[a];
                    double* dst = prod.data() + p * B;
                    for (std::size_t b = a; b < B; ++b) dst[b] = ra * row[b];
                }
                for (std::size_t stride = 1; stride < group; stride *= 2)
                    for (std::size_t p = 0; p < group; p += 2 * stride) {
                        double* dst = prod.data() + p * B;
                        const double* src = prod.data() + (p + stride) * B;
                        for (std::size_t b = a; b < B; ++b) dst[b] += src[b];
                    }
                double* arow = acc.data() + a * B;
                for (std::size_t b = a; b < B; ++b) arow[b] += prod[b];
            }
        }
        const double invN = 1.0 / static_cast<double>(jac.N);
        const auto off = static_cast<Eigen::Index>(k * B);
        for (std::size_t a = 0; a < B; ++a)
            for (std::size_t b = a; b < B; ++b) {
                const double v = acc[a * B + b] * invN;
                out.G(off + static_cast<Eigen::Index>(a), off + static_cast<Eigen::Index>(b)) = v;
                out.G(off + static_cast<Eigen::Index>(b), off + static_cast<Eigen::Index>(a)) = v;
            }
    }
    return out;
}

/// Matrix-free metric: v -> (1/N) sum_i J_i^T (J_i v) straight from the Jacobian rows.
struct MetricOperator {
    const ParameterJacobian* jac = nullptr;

    std::size_t size() const { return jac->d * jac->block; }
    void apply(std::span<const double> v, std::span<double> out) const {
        std::fill(out.begin(), out.end(), 0.0);
        const std::size_t B = jac->block;
        for (std::size_t i = 0; i < jac->N; ++i)
            for (std::size_t k = 0; k < jac->d; ++k) {
                const auto r = jac->row(i, k);
                const double t = dot(r, v.subspan(k * B, B));
                for (std::size_t b = 0; b < B; ++b) out[k * B + b] += t * r[b];
            }
        const double invN = 1.0 / static_cast<double>(jac->N);
        for (double& x : out) x *= invN;
    }
};

struct CgResult {
    std::vector<double> xi;
    double residual_norm = 0.0;          // ||grad - (G + eps I) xi|| recomputed at exit
    std::vector<double> residual_history;  // recursive residual norms, entry 0 = ||grad||
    std::size_t iterations = 0;
    double ritz_min = 0.0;  // extreme Ritz values of G + eps I, when requested
    double ritz_max = 0.0;
};

/// Up to `n_cg` conjugate-gradient iterations on (G + eps I) xi = grad from xi = 0.
///
/// By default there is no tolerance exit: the iteration count is the regularizer.
/// The loop ends early once the residual reaches roundoff level (1e-15 |grad|),
/// where further iterations would underflow, or below `rel_tol` |grad| when a
/// positive tolerance is given.
template <typename Operator>
CgResult natural_direction(const Operator& G, std::span<const double> grad, std::size_t n_cg, double eps,
                           bool ritz = false, double rel_tol = 0.0) {
    const std::size_t M = G.size();
    if (grad.size() != M) throw DomainError("natural_direction: gradient length does not match the metric");
    if (!(eps > 0.0)) throw ConfigError("natural_direction: regularization eps must be positive");
    for (double g : grad)
        if (!std::isfinite(g)) throw SolverError("natural_direction: non-finite gradient");

    CgResult res;
    res.xi.assign(M, 0.0);
    std::vector<double> r(grad.begin(), grad.end()), p = r, Ap(M);
    double rs = dot(r, r);
    res.residual_history.push_back(std::sqrt(rs));
    std::vector<double> alphas, betas;
    const double floor2 = std::max(1e-30, rel_tol * rel_tol) * rs;
    for (std::size_t it = 0; it < n_cg && rs > floor2; ++it) {
        G.apply(p, Ap);
        for (std::size_t m = 0; m < M; ++m) Ap[m] += eps * p[m];
        const double pAp = dot(p, Ap);
        if (!std::isfinite(pAp) || !(pAp > 0.0))
            throw SolverError("natural_direction: breakdown at CG iteration " + std::to_string(it) +
                              " (p^T A p = " + std::to_string(pAp) + ")");
        const double alpha = rs / pAp;
        for (std::size_t m = 0; m < M; ++m) {
            res.xi[m] += alpha * p[m];
            r[m] -= alpha * Ap[m];
        }
        const double rs_new = dot(r, r);
        if (!std::isfinite(rs_new)) throw SolverError("natural_direction: non-finite residual");
        const double beta = rs_new / rs;
        for (std::size_t m = 0; m < M; ++m) p[m] = r[m] + beta * p[m];
        rs = rs_new;
        res.residual_history.push_back(std::sqrt(rs));
        alphas.push_back(alpha);
        betas.push_back(beta);
        ++res.iterations;
    }

    G.apply(res.xi, Ap);
    double rr = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        const double e = grad[m] - Ap[m] - eps * res.xi[m];
        rr += e * e;
    }
    res.residual_norm = std::sqrt(rr);

    if (ritz && !alphas.empty()) {
        // Lanczos tridiagonal from the CG coefficients.
        const auto n = static_cast<Eigen::Index>(alphas.size());
        Eigen::MatrixXd T = Eigen::MatrixXd::Zero(n, n);
        for (Eigen::Index j = 0; j < n; ++j) {
            T(j, j) = 1.0 / alphas[j] + (j > 0 ? betas[j - 1] / alphas[j - 1] : 0.0);
            if (j + 1 < n) T(j, j + 1) = T(j + 1, j) = std::sqrt(betas[j]) / alphas[j];
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T, Eigen::EigenvaluesOnly);
        res.ritz_min = es.eigenvalues()(0);
        res.ritz_max = es.eigenvalues()(n - 1);
    }
    return res;
}

}  // namespace pwgf
