#pragma once

// Grid functions on [-L, L]^d, reconstruction u = sqrt(rho) from a trained map,
// multilinear transfer between grids, and the .f64 + .json file pair.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pwgf/common.hpp"
#include "pwgf/reference.hpp"
#include "pwgf/transport.hpp"

namespace pwgf {

/// Nodal values on a uniform tensor grid over [-L, L]^d that includes the
/// boundary nodes (which carry exact zeros). Storage is row-major with axis 0
/// slowest. The discrete L2 inner product is h^d times the nodal sum.
struct GridFunction {
    std::size_t d = 1;
    std::size_t n = 0;  // nodes per axis, boundary included
    double L = 1.0;
    std::vector<double> values;

    static GridFunction zeros(std::size_t d, std::size_t n, double L) {
        if (n < 3) throw DomainError("a grid needs at least 3 nodes per axis");
        GridFunction g{d, n, L, {}};
        g.values.assign(g.node_count(), 0.0);
        return g;
    }

    double h() const { return 2.0 * L / static_cast<double>(n - 1); }
    double node(std::size_t j) const { return j + 1 == n ? L : -L + static_cast<double>(j) * h(); }
    std::size_t node_count() const {
        std::size_t c = 1;
        for (std::size_t k = 0; k < d; ++k) c *= n;
        return c;
    }
    double cell_volume() const { return std::pow(h(), static_cast<double>(d)); }

    /// Multi-index of a flat index (axis 0 first).
    void unflatten(std::size_t idx, std::size_t* j) const {
        for (std::size_t k = d; k-- > 0;) {
            j[k] = idx % n;
            idx /= n;
        }
    }
    bool on_boundary(std::size_t idx) const {
        std::size_t j[8];
        unflatten(idx, j);
        for (std::size_t k = 0; k < d; ++k)
            if (j[k] == 0 || j[k] + 1 == n) return true;
        return false;
    }

    double l2_norm() const {
        double s = 0.0;
        for (double v : values) s += v * v;
        return std::sqrt(s * cell_volume());
    }
    void zero_boundary() {
        for (std::size_t i = 0; i < values.size(); ++i)
            if (on_boundary(i)) values[i] = 0.0;
    }
    void normalize() {
        const double nrm = l2_norm();
        if (!(nrm > 0.0) || !std::isfinite(nrm)) throw DomainError("cannot normalize a zero or non-finite grid function");
        for (double& v : values) v /= nrm;
    }
};

/// Density profile rho_k on the nodes of one axis: x_j = T_k(z_j), rho_k = mu_k(z) exp(-ell).
///
/// z(x) is found by bisection on the monotone map, bracketed from a coarse table.
inline std::vector<double> reconstruct_axis_density(const TransportMap& map, std::size_t axis,
                                                    const ReferenceDensity& ref, std::size_t n_nodes,
                                                    double tol = 1e-12) {
    const NetView view = map.axis(axis);
    const double L = map.L;
    constexpr std::size_t coarse = 256;
    std::vector<double> zc(coarse + 1), tc(coarse + 1);
    for (std::size_t j = 0; j <= coarse; ++j) {
        zc[j] = j == coarse ? L : -L + 2.0 * L * static_cast<double>(j) / coarse;
        tc[j] = map_axis(view, L, map.n_ode, zc[j]);
        if (j > 0 && !(tc[j] > tc[j - 1]))
            throw DomainError("non-monotone transport map on axis " + std::to_string(axis) + " near z = " +
                              std::to_string(zc[j]));
    }
    std::vector<double> rho(n_nodes, 0.0);
    const double h = 2.0 * L / static_cast<double>(n_nodes - 1);
    NetEval scratch;
    for (std::size_t j = 1; j + 1 < n_nodes; ++j) {
        const double x = -L + static_cast<double>(j) * h;
        const auto it = std::upper_bound(tc.begin(), tc.end(), x);
        const std::size_t hiIdx = std::clamp<std::size_t>(static_cast<std::size_t>(it - tc.begin()), 1, coarse);
        double lo = zc[hiIdx - 1], hi = zc[hiIdx];
        while (hi - lo > tol) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            if (map_axis(view, L, map.n_ode, mid) < x)
                lo = mid;
            else
                hi = mid;
        }
        const double z = 0.5 * (lo + hi);
        if (!(std::fabs(z) < L)) continue;
        const AugmentedState s = integrate_axis(view, L, map.n_ode, z, scratch);
        rho[j] = ref.density(z) * std::exp(-s.ell);
    }
    return rho;
}

/// u = sqrt(rho_theta) on an n-node grid over [-L, L]^d, L2-normalized.
inline GridFunction reconstruct_u(const TransportMap& map, std::span<const ReferenceDensity> refs,
                                  std::size_t n_nodes) {
    if (refs.size() != map.d) throw DomainError("reconstruct_u: need one reference density per axis");
    GridFunction u = GridFunction::zeros(map.d, n_nodes, map.L);
    std::vector<std::vector<double>> prof;
    for (std::size_t k = 0; k < map.d; ++k) prof.push_back(reconstruct_axis_density(map, k, refs[k], n_nodes));
    std::size_t j[8];
    for (std::size_t idx = 0; idx < u.values.size(); ++idx) {
        u.unflatten(idx, j);
        double rho = 1.0;
        for (std::size_t k = 0; k < map.d; ++k) rho *= prof[k][j[k]];
        u.values[idx] = std::sqrt(rho);
    }
    u.zero_boundary();
    u.normalize();
    return u;
}

/// Multilinear interpolation onto a grid with `n_interior` interior nodes per axis,
/// boundary zeros kept, renormalized in the target discrete L2 norm.
inline GridFunction interpolate_to_fd(const GridFunction& src, std::size_t n_interior, double target_L = -1.0) {
    if (target_L < 0.0) target_L = src.L;
    if (std::fabs(target_L - src.L) > 1e-12 * src.L)
        throw DomainError("interpolate_to_fd: source and target boxes differ");
    GridFunction dst = GridFunction::zeros(src.d, n_interior + 2, src.L);
    const double hs = src.h();
    std::size_t j[8], base[8];
    double frac[8];
    for (std::size_t idx = 0; idx < dst.values.size(); ++idx) {
        if (dst.on_boundary(idx)) continue;
        dst.unflatten(idx, j);
        for (std::size_t k = 0; k < src.d; ++k) {
            const double pos = (dst.node(j[k]) + src.L) / hs;
            const std::size_t b = std::min(static_cast<std::size_t>(std::max(pos, 0.0)), src.n - 2);
            base[k] = b;
            frac[k] = std::clamp(pos - static_cast<double>(b), 0.0, 1.0);
        }
        double acc = 0.0;
        for (std::size_t corner = 0; corner < (std::size_t{1} << src.d); ++corner) {
            double w = 1.0;
            std::size_t flat = 0;
            for (std::size_t k = 0; k < src.d; ++k) {
                const bool up = (corner >> k) & 1U;
                w *= up ? frac[k] : 1.0 - frac[k];
                flat = flat * src.n + base[k] + (up ? 1 : 0);
            }
            if (w != 0.0) acc += w * src.values[flat];
        }
        dst.values[idx] = acc;
    }
    dst.normalize();
    return dst;
}

/// L2 distance between two functions sampled on the same grid.
inline double l2_distance(const GridFunction& a, const GridFunction& b) {
    if (a.d != b.d || a.n != b.n) throw DomainError("l2_distance: grids differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
    return std::sqrt(s * a.cell_volume());
}

inline nlohmann::json grid_metadata(const GridFunction& g) {
    return {{"d", g.d},
            {"n", g.n},
            {"L", g.L},
            {"h", g.h()},
            {"includes_boundary", true},
            {"layout", "row-major, axis 0 slowest, float64 little-endian"},
            {"norm", "discrete L2: h^d * sum of squared nodal values"}};
}

/// Write `<stem>.f64` (raw doubles) and `<stem>.json` (metadata).
inline void write_grid(const GridFunction& g, const std::filesystem::path& stem) {
    std::filesystem::path bin = stem, meta = stem;
    bin += ".f64";
    meta += ".json";
    std::ofstream ob(bin, std::ios::binary);
    if (!ob) throw Error("cannot open " + bin.string() + " for writing");
    ob.write(reinterpret_cast<const char*>(g.values.data()), static_cast<std::streamsize>(g.values.size() * sizeof(double)));
    std::ofstream om(meta);
    om << grid_metadata(g).dump(2) << '\n';
}

inline GridFunction read_grid(const std::filesystem::path& stem) {
    std::filesystem::path bin = stem, meta = stem;
    bin += ".f64";
    meta += ".json";
    std::ifstream im(meta);
    if (!im) throw Error("missing grid metadata file " + meta.string());
    const nlohmann::json j = nlohmann::json::parse(im);
    GridFunction g = GridFunction::zeros(j.at("d").get<std::size_t>(), j.at("n").get<std::size_t>(),
                                         j.at("L").get<double>());
    std::ifstream ib(bin, std::ios::binary);
    if (!ib) throw Error("missing grid data file " + bin.string());
    ib.read(reinterpret_cast<char*>(g.values.data()), static_cast<std::streamsize>(g.values.size() * sizeof(double)));
    if (ib.gcount() != static_cast<std::streamsize>(g.values.size() * sizeof(double)))
        throw Error("grid data file " + bin.string() + " is shorter than its metadata says");
    return g;
}

inline void write_grid_csv_1d(const GridFunction& g, std::ostream& os) {
    if (g.d != 1) throw DomainError("CSV export is only defined for 1D grids");
    os << "x,u\n";
    os.precision(17);
    for (std::size_t j = 0; j < g.n; ++j) os << g.node(j) << ',' << g.values[j] << '\n';
}

}  // namespace pwgf
