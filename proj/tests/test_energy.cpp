#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "pwgf/energy.hpp"
#include "pwgf/pwgf.hpp"

using namespace pwgf;
using Catch::Approx;

namespace {

struct Setup {
    PwgfConfig cfg;
    Problem prob;
    TransportMap map;
};

Setup small_setup(std::size_t d, std::uint64_t seed, double scale) {
    PwgfConfig c;
    c.d = d;
    c.H = 4;
    c.seed = seed;
    c.init_scale = scale;
    if (d == 1) c.N = 64;
    if (d == 2) {
        c.N = 16;
        c.potential = PotentialId::Lattice2D;
        c.reference = ReferenceKind::GaussMix;
        c.L = 16.0;
    }
    if (d == 3) {
        c.N = 8;
        c.potential = PotentialId::TrapLattice3D;
        c.reference = ReferenceKind::Beta55;
        c.beta = 1600.0;
        c.L = 8.0;
    }
    Problem p = Problem::from_config(c);
    TransportMap m = initial_map(c);
    return {c, std::move(p), std::move(m)};
}

double max_fd_error(const Setup& s, std::span<const double> grad) {
    double gmax = 0.0, worst = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::fabs(g));
    for (std::size_t j = 0; j < s.map.theta.size(); ++j) {
        TransportMap a = s.map, b = s.map;
        const double h = 1e-5;
        a.theta[j] += h;
        b.theta[j] -= h;
        const double fd = (energy(a, s.prob.particles, s.prob.potential, s.prob.beta).E -
                           energy(b, s.prob.particles, s.prob.potential, s.prob.beta).E) /
                          (2 * h);
        worst = std::max(worst, std::fabs(grad[j] - fd) / std::max(std::fabs(fd), 1e-3 * gmax));
    }
    return worst;
}

}  // namespace

TEST_CASE("quadrature of the exact 1D ground state", "[energy]") {
    const double beta = 10.0;
    const Potential V = Potential::cos1d(beta);
    const auto e = density_energy_quadrature_1d(
        [](double x) { return std::pow(std::sin(pi * (x + 1) / 2), 2); },
        [](double x) { return pi * std::sin(pi * (x + 1) / 2) * std::cos(pi * (x + 1) / 2); },
        [&](double x) { return V.value(std::span<const double>(&x, 1)); }, beta, -1.0, 1.0);
    CHECK(e.F_Q == Approx(pi * pi / 8).epsilon(1e-10));
    CHECK(e.F_V == Approx(beta / 8).epsilon(1e-10));
    CHECK(e.F_R == Approx(3 * beta / 16).epsilon(1e-10));
    CHECK(std::fabs(e.E - 4.3587) <= 1e-3);
    CHECK(std::fabs(e.lambda - 12.4674) <= 1e-3);
    CHECK(e.E == Approx(exact_1d(0.0, beta).energy).epsilon(1e-12));
    CHECK(e.lambda == Approx(exact_1d(0.0, beta).lambda).epsilon(1e-12));
}

TEST_CASE("eigenvalue estimator", "[energy]") {
    CHECK(eigenvalue(make_breakdown(4.3587 - 1.875, 0.0, 1.875)) == Approx(12.4674).margin(1e-12));
    CHECK(eigenvalue(make_breakdown(0.3, 0.2, 0.0)) == 2 * 0.5);
}

TEST_CASE("identity map on the 1D problem reproduces reference integrals", "[energy]") {
    PwgfConfig c;
    const Problem p = Problem::from_config(c);
    const TransportMap m = TransportMap::zeros(1, c.H, c.n_ode, c.L);
    const EnergyBreakdown e = energy(m, p.particles, p.potential, p.beta);
    using boost::math::quadrature::gauss_kronrod;
    auto mu = [](double z) { return 0.75 * (1 - z * z); };
    const double fv = 0.5 * gauss_kronrod<double, 61>::integrate(
                                [&](double z) { return 10 * std::pow(std::sin(pi * z / 2), 2) * mu(z); }, -1, 1);
    const double fr = 2.5 * gauss_kronrod<double, 61>::integrate([&](double z) { return mu(z) * mu(z); }, -1, 1);
    CHECK(fv == Approx(1.740).margin(5e-4));
    CHECK(fr == Approx(1.500).margin(1e-12));

    // standard errors from the mirror pairs, which are the independent draws
    auto stderr_of = [&](auto term) {
        std::vector<double> pairs;
        for (std::size_t i = 0; i < p.particles.N; i += 2) pairs.push_back(0.5 * (term(i) + term(i + 1)));
        double m0 = 0.0, v = 0.0;
        for (double x : pairs) m0 += x;
        m0 /= pairs.size();
        for (double x : pairs) v += (x - m0) * (x - m0);
        return std::sqrt(v / (pairs.size() - 1) / pairs.size());
    };
    const double se_v = stderr_of([&](std::size_t i) {
        const double z = p.particles.z[i];
        return 0.5 * p.potential.value(std::span<const double>(&z, 1));
    });
    const double se_r = stderr_of([&](std::size_t i) { return 2.5 * mu(p.particles.z[i]); });
    CHECK(std::fabs(e.F_V - fv) < 4 * se_v);
    CHECK(std::fabs(e.F_R - fr) < 4 * se_r);
    CHECK(e.lambda == 2 * e.E + 2 * e.F_R);
}

TEST_CASE("identity map on the 3D reference gives the Beta(5,5) Fisher term", "[energy]") {
    PwgfConfig c;
    c.d = 3;
    c.N = 6000;
    c.potential = PotentialId::TrapLattice3D;
    c.beta = 1600;
    c.reference = ReferenceKind::Beta55;
    c.L = 8;
    const Problem p = Problem::from_config(c);
    const TransportMap m = TransportMap::zeros(3, c.H, c.n_ode, c.L);
    const EnergyBreakdown e = energy(m, p.particles, p.potential, p.beta);
    using boost::math::quadrature::gauss_kronrod;
    const auto ref = ReferenceDensity::beta55();
    const double per_axis = gauss_kronrod<double, 61>::integrate(
        [&](double z) { return std::fabs(z) < 8 ? ref.score(z) * ref.score(z) * ref.density(z) : 0.0; }, -8, 8);
    // E[x^2/(1-x^2)^2] under (1-x^2)^4 on (-1, 1): (16/105)/(256/315)
    CHECK(per_axis == Approx(3.0 / 16.0).epsilon(1e-9));
    const double fq = 3 * per_axis / 8;
    CHECK(fq == Approx(0.0703).margin(1e-4));
    CHECK(std::fabs(e.F_Q - fq) < 0.01);
}

TEST_CASE("energy components are non-negative and consistent", "[energy]") {
    for (std::size_t d = 1; d <= 3; ++d) {
        const Setup s = small_setup(d, 0, 0.5);
        const EnergyBreakdown e = energy(s.map, s.prob.particles, s.prob.potential, s.prob.beta);
        CHECK(e.F_Q >= 0.0);
        CHECK(e.F_V >= 0.0);
        CHECK(e.F_R >= 0.0);
        CHECK(e.E == e.F_Q + e.F_V + e.F_R);
        CHECK(e.lambda == 2 * e.E + 2 * e.F_R);
    }
}

TEST_CASE("energy gradient matches central finite differences", "[energy][gradient]") {
    for (std::size_t d = 1; d <= 3; ++d)
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const Setup s = small_setup(d, seed, 0.4);
            const auto grad = energy_gradient(s.map, s.prob.particles, s.prob.potential, s.prob.beta);
            INFO("d " << d << " seed " << seed);
            CHECK(max_fd_error(s, grad) <= 1e-5);
        }
}

TEST_CASE("minimal mirror set has a finite, correct gradient", "[energy][gradient]") {
    Setup s = small_setup(2, 4, 0.4);
    s.cfg.N = 4;
    s.prob = Problem::from_config(s.cfg);
    const auto grad = energy_gradient(s.map, s.prob.particles, s.prob.potential, s.prob.beta);
    for (double g : grad) CHECK(std::isfinite(g));
    CHECK(max_fd_error(s, grad) <= 1e-5);
}

TEST_CASE("bias gradients vanish exactly under sign-symmetric sampling", "[energy][symmetry]") {
    for (std::size_t d = 1; d <= 3; ++d) {
        const Setup s = small_setup(d, 1, 0.7);
        const auto grad = energy_gradient(s.map, s.prob.particles, s.prob.potential, s.prob.beta);
        const NetLayout lay{s.cfg.H};
        std::size_t nonzero_weights = 0;
        for (std::size_t k = 0; k < d; ++k)
            for (std::size_t j = 0; j < lay.size(); ++j) {
                const double g = grad[k * lay.size() + j];
                if (lay.is_bias(j))
                    CHECK(g == 0.0);
                else
                    nonzero_weights += g != 0.0;
            }
        CHECK(nonzero_weights > 0);
    }
}

TEST_CASE("zero parameters are a saddle of the symmetric 1D estimator", "[energy][gradient]") {
    PwgfConfig c;
    c.N = 256;
    const Problem p = Problem::from_config(c);
    TransportMap m = TransportMap::zeros(1, c.H, c.n_ode, c.L);
    // weights enter only through products and the bias directions cancel between mirrors
    for (double g : energy_gradient(m, p.particles, p.potential, p.beta)) CHECK(g == 0.0);
    Rng rng(0);
    m = TransportMap::random(1, c.H, c.n_ode, c.L, rng, 0.01);
    CHECK(norm2(energy_gradient(m, p.particles, p.potential, p.beta)) > 0.0);
}

TEST_CASE("energy is bit-identical under coordinate sign flips", "[energy][symmetry]") {
    for (std::size_t d = 1; d <= 3; ++d) {
        Setup s = small_setup(d, 2, 0.6);
        const EnergyBreakdown e0 = energy(s.map, s.prob.particles, s.prob.potential, s.prob.beta);
        for (std::size_t k = 0; k < d; ++k) {
            ParticleSet flipped = s.prob.particles;
            for (std::size_t i = 0; i < flipped.N; ++i) flipped.z[i * d + k] = -flipped.z[i * d + k];
            flipped.refresh(s.prob.refs);
            const EnergyBreakdown e1 = energy(s.map, flipped, s.prob.potential, s.prob.beta);
            CHECK(e1.F_Q == e0.F_Q);
            CHECK(e1.F_V == e0.F_V);
            CHECK(e1.F_R == e0.F_R);
        }
    }
}

TEST_CASE("dimension mismatches are rejected", "[energy]") {
    const Setup s = small_setup(2, 0, 0.1);
    const TransportMap m1 = TransportMap::zeros(1, 4, 10, 16.0);
    CHECK_THROWS_AS(energy(m1, s.prob.particles, s.prob.potential, s.prob.beta), DomainError);
    const Potential V1 = Potential::cos1d();
    CHECK_THROWS_AS(energy(s.map, s.prob.particles, V1, s.prob.beta), ConfigError);
}
