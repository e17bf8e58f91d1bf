#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <vector>

#include "pwgf/h1_reference.hpp"
#include "pwgf/pwgf.hpp"
#include "pwgf/reconstruct.hpp"

using namespace pwgf;
using Catch::Approx;

namespace {

std::filesystem::path temp_stem(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "pwgf_test_reconstruct";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("identity map reconstructs the square root of the reference", "[reconstruct]") {
    const auto ref = ReferenceDensity::beta22();
    const TransportMap m = TransportMap::zeros(1, 10, 10, 1.0);
    const GridFunction u = reconstruct_u(m, std::span(&ref, 1), 1001);
    GridFunction oracle = GridFunction::zeros(1, 1001, 1.0);
    for (std::size_t j = 1; j + 1 < 1001; ++j) {
        const double x = oracle.node(j);
        oracle.values[j] = std::sqrt(0.75 * (1 - x * x));
    }
    oracle.normalize();
    CHECK(l2_distance(u, oracle) <= 1e-9);
    CHECK(u.values.front() == 0.0);
    CHECK(u.values.back() == 0.0);
}

TEST_CASE("reconstructed density keeps unit mass and is normalized", "[reconstruct]") {
    PwgfConfig c;
    c.init_scale = 0.5;
    c.H = 6;
    const TransportMap m = initial_map(c);
    const auto ref = ReferenceDensity::beta22();
    const std::size_t n = 2001;
    const auto rho = reconstruct_axis_density(m, 0, ref, n);
    const double h = 2.0 / (n - 1);
    double mass = 0.0;
    for (std::size_t j = 0; j < n; ++j) mass += (j == 0 || j + 1 == n ? 0.5 : 1.0) * rho[j] * h;
    CHECK(mass == Approx(1.0).margin(1e-2));
    for (double r : rho) CHECK(r >= 0.0);
    const GridFunction u = reconstruct_u(m, std::span(&ref, 1), n);
    CHECK(u.l2_norm() == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("change of variables against the forward map", "[reconstruct]") {
    PwgfConfig c;
    c.init_scale = 0.5;
    c.H = 6;
    c.n_ode = 400;
    const TransportMap m = initial_map(c);
    const auto ref = ReferenceDensity::beta22();
    // rho(T(z)) T'(z) = mu(z), with T' from a centred difference of the map itself
    const std::size_t n = 4001;
    const auto rho = reconstruct_axis_density(m, 0, ref, n);
    const double h = 2.0 / (n - 1);
    for (double z : {-0.7, -0.2, 0.35, 0.8}) {
        const double x = map_axis(m.axis(0), 1.0, m.n_ode, z);
        const double dz = 1e-6;
        const double Tp = (map_axis(m.axis(0), 1.0, m.n_ode, z + dz) - map_axis(m.axis(0), 1.0, m.n_ode, z - dz)) / (2 * dz);
        const double pos = (x + 1.0) / h;
        const auto j = static_cast<std::size_t>(pos);
        const double t = pos - j;
        const double r = (1 - t) * rho[j] + t * rho[j + 1];
        INFO("z " << z);
        CHECK(r * Tp == Approx(ref.density(z)).epsilon(2e-3));
    }
}

TEST_CASE("2D reconstruction is a product of axis profiles", "[reconstruct]") {
    PwgfConfig c;
    c.d = 2;
    c.N = 16;
    c.H = 4;
    c.init_scale = 0.4;
    c.L = 16;
    c.potential = PotentialId::Lattice2D;
    c.reference = ReferenceKind::GaussMix;
    const Problem p = Problem::from_config(c);
    const TransportMap m = initial_map(c);
    const GridFunction u = reconstruct_u(m, p.refs, 41);
    const GridFunction u1 = reconstruct_u(TransportMap{1, m.H, m.n_ode, m.L, std::vector<double>(m.block(0).begin(), m.block(0).end())},
                                          std::span(p.refs.data(), 1), 41);
    // with identical axis networks u(x, y) = u1(x) u1(y) exactly up to normalization
    for (std::size_t i = 0; i < 41; ++i)
        for (std::size_t j = 0; j < 41; ++j)
            CHECK(u.values[i * 41 + j] == Approx(u1.values[i] * u1.values[j]).margin(1e-12));
}

TEST_CASE("multilinear transfer reproduces bilinear functions", "[reconstruct]") {
    GridFunction src = GridFunction::zeros(2, 11, 4.0);
    auto f = [](double x, double y) { return (3.0 + 0.2 * x) * (5.0 - 0.3 * y); };
    for (std::size_t i = 0; i < 11; ++i)
        for (std::size_t j = 0; j < 11; ++j) src.values[i * 11 + j] = f(src.node(i), src.node(j));
    const GridFunction dst = interpolate_to_fd(src, 17);
    GridFunction oracle = GridFunction::zeros(2, 19, 4.0);
    for (std::size_t i = 1; i < 18; ++i)
        for (std::size_t j = 1; j < 18; ++j) oracle.values[i * 19 + j] = f(oracle.node(i), oracle.node(j));
    oracle.normalize();
    CHECK(l2_distance(dst, oracle) <= 1e-13);
    CHECK_THROWS_AS(interpolate_to_fd(src, 17, 5.0), DomainError);
}

TEST_CASE("grid files round-trip bitwise", "[reconstruct][io]") {
    GridFunction g = GridFunction::zeros(3, 5, 8.0);
    Rng rng(0);
    for (double& v : g.values) v = rng.normal();
    const auto stem = temp_stem("roundtrip");
    write_grid(g, stem);
    const GridFunction r = read_grid(stem);
    CHECK(r.d == 3);
    CHECK(r.n == 5);
    CHECK(r.L == 8.0);
    CHECK(r.values == g.values);
    CHECK(std::filesystem::file_size(std::filesystem::path(stem) += ".f64") == 125 * sizeof(double));
    CHECK_THROWS_AS(read_grid(temp_stem("missing")), Error);
}

TEST_CASE("grid helpers", "[reconstruct]") {
    const GridFunction g = GridFunction::zeros(2, 5, 1.0);
    CHECK(g.h() == 0.5);
    CHECK(g.node(4) == 1.0);
    CHECK(g.node(0) == -1.0);
    CHECK(g.on_boundary(0));
    CHECK_FALSE(g.on_boundary(6));
    CHECK_THROWS_AS(GridFunction::zeros(1, 2, 1.0), DomainError);
    GridFunction z = GridFunction::zeros(1, 5, 1.0);
    CHECK_THROWS_AS(z.normalize(), DomainError);
}

TEST_CASE("coarse 3D reconstruction gives consistent FD energies on two grids", "[reconstruct][slow]") {
    const auto ref = ReferenceDensity::beta55();
    std::vector<ReferenceDensity> refs(3, ref);
    const TransportMap m = TransportMap::zeros(3, 10, 10, 8.0);
    const GridFunction u = reconstruct_u(m, refs, 40);
    const Potential V = Potential::trap_lattice3d();
    const FdProblem p99 = make_fd_problem(V, 99, 8.0, 1600.0);
    const FdProblem p199 = make_fd_problem(V, 199, 8.0, 1600.0);
    const double e99 = fd_energy(interpolate_to_fd(u, 99), p99).E;
    const double e199 = fd_energy(interpolate_to_fd(u, 199), p199).E;
    CHECK(std::isfinite(e99));
    CHECK(std::fabs(e99 - e199) <= 0.02 * e199);
}
