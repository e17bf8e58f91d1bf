#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pwgf {

inline constexpr double pi = std::numbers::pi;

// Error hierarchy. Everything thrown by the library derives from pwgf::Error.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct IntegrationError : Error {
    using Error::Error;
};
struct SolverError : Error {
    using Error::Error;
};

/// Seedable generator with a portable variate stream.
///
/// std::normal_distribution and friends are implementation-defined, so the
/// uniform and normal variates are derived here from raw mt19937_64 output.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on the open interval (0, 1).
    double uniform() {
        for (;;) {
            const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
            if (u > 0.0) return u;
        }
    }

    /// Standard normal via Box-Muller (one variate per call, the pair partner is cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * pi * u2);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Pairwise (tree) sum of a power-of-two sized block. Terms that cancel under a
/// sign flip of one coordinate sit in mirrored halves, so they cancel exactly.
template <typename T>
T tree_sum(std::span<const T> v) {
    if (v.size() == 1) return v[0];
    const std::size_t half = v.size() / 2;
    return tree_sum(v.first(half)) + tree_sum(v.subspan(half));
}

/// Deterministic reduction used for every particle estimator: tree sum inside
/// each mirror group of `group` consecutive entries, then groups in ascending order.
inline double group_sum(std::span<const double> v, std::size_t group) {
    double acc = 0.0;
    for (std::size_t g = 0; g < v.size(); g += group) acc += tree_sum(v.subspan(g, group));
    return acc;
}

inline double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// tanh with exact odd symmetry, tanh(-a) == -tanh(a) bitwise.
inline double odd_tanh(double a) { return a < 0.0 ? -std::tanh(-a) : std::tanh(a); }

/// sin with exact odd symmetry.
inline double odd_sin(double a) { return a < 0.0 ? -std::sin(-a) : std::sin(a); }

}  // namespace pwgf
