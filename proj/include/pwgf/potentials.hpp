#pragma once

// External potentials with analytic gradients, and the exact 1D ground state.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pwgf/common.hpp"

namespace pwgf {

enum class PotentialId { Cos1D, Lattice2D, TrapLattice3D, Custom };

inline std::string to_string(PotentialId id) {
    switch (id) {
        case PotentialId::Cos1D: return "cos1d";
        case PotentialId::Lattice2D: return "lattice2d";
        case PotentialId::TrapLattice3D: return "traplattice3d";
        case PotentialId::Custom: return "custom";
    }
    return "?";
}

inline PotentialId potential_id_from_string(const std::string& s) {
    if (s == "cos1d") return PotentialId::Cos1D;
    if (s == "lattice2d") return PotentialId::Lattice2D;
    if (s == "traplattice3d") return PotentialId::TrapLattice3D;
    throw ConfigError("unknown potential id '" + s + "' (expected cos1d, lattice2d or traplattice3d)");
}

/// V(x) and its gradient. Custom potentials plug in through `custom`.
///
///   Cos1D          V = a cos^2(pi (x+1)/2) = a sin^2(pi x/2)
///   Lattice2D      V = 2 sin^2(pi x1/4) sin^2(pi x2/4)
///   TrapLattice3D  V = |x|^2 + 100 sum_k sin^2(pi x_k/4)
///
/// The sine forms are used for evaluation so V is exactly even and dV exactly
/// odd in every coordinate.
class Potential {
public:
    using Fn = std::function<double(std::span<const double> x, std::span<double> grad)>;

    static Potential cos1d(double amplitude = 10.0) { return Potential(PotentialId::Cos1D, 1, amplitude); }
    static Potential lattice2d() { return Potential(PotentialId::Lattice2D, 2, 2.0); }
    static Potential trap_lattice3d() { return Potential(PotentialId::TrapLattice3D, 3, 100.0); }
    static Potential custom(std::size_t dim, Fn fn) {
        if (!fn) throw ConfigError("custom potential needs a value-and-gradient callable");
        Potential p(PotentialId::Custom, dim, 0.0);
        p.fn_ = std::move(fn);
        return p;
    }
    static Potential make(PotentialId id, double amplitude) {
        switch (id) {
            case PotentialId::Cos1D: return cos1d(amplitude);
            case PotentialId::Lattice2D: return lattice2d();
            case PotentialId::TrapLattice3D: return trap_lattice3d();
            case PotentialId::Custom: break;
        }
        throw ConfigError("custom potentials must be built with Potential::custom");
    }

    PotentialId id() const { return id_; }
    std::size_t dim() const { return dim_; }

    double operator()(std::span<const double> x, std::span<double> grad) const {
        switch (id_) {
            case PotentialId::Cos1D: {
                const double s = odd_sin(pi * x[0] / 2.0);
                grad[0] = amp_ * (pi / 2.0) * odd_sin(pi * x[0]);
                return amp_ * s * s;
            }
            case PotentialId::Lattice2D: {
                const double s1 = odd_sin(pi * x[0] / 4.0), s2 = odd_sin(pi * x[1] / 4.0);
                grad[0] = amp_ * (pi / 4.0) * odd_sin(pi * x[0] / 2.0) * (s2 * s2);
                grad[1] = amp_ * (pi / 4.0) * odd_sin(pi * x[1] / 2.0) * (s1 * s1);
                return amp_ * (s1 * s1) * (s2 * s2);
            }
            case PotentialId::TrapLattice3D: {
                double v = 0.0;
                for (std::size_t k = 0; k < 3; ++k) {
                    const double s = odd_sin(pi * x[k] / 4.0);
                    v += x[k] * x[k] + amp_ * s * s;
                    grad[k] = 2.0 * x[k] + amp_ * (pi / 4.0) * odd_sin(pi * x[k] / 2.0);
                }
                return v;
            }
            case PotentialId::Custom: return fn_(x, grad);
        }
        return 0.0;
    }

    double value(std::span<const double> x) const {
        double g[8];
        std::vector<double> heap;
        std::span<double> gs(g, dim_);
        if (dim_ > 8) {
            heap.resize(dim_);
            gs = heap;
        }
        return (*this)(x, gs);
    }

private:
    Potential(PotentialId id, std::size_t dim, double amp) : id_(id), dim_(dim), amp_(amp) {}

    PotentialId id_;
    std::size_t dim_;
    double amp_;
    Fn fn_;
};

struct Exact1D {
    double u;
    double lambda;
    double energy;
};

/// Exact ground state of the 1D test problem on (-1, 1) with V = beta cos^2(pi(x+1)/2).
inline Exact1D exact_1d(double x, double beta = 10.0) {
    const double lambda = pi * pi / 4.0 + beta;
    return {std::sin(pi * (x + 1.0) / 2.0), lambda, lambda / 2.0 - 3.0 * beta / 16.0};
}

}  // namespace pwgf
