#pragma once

// Reference densities on (-L, L) and sign-symmetric particle sampling.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "pwgf/common.hpp"

namespace pwgf {

enum class ReferenceKind { Beta22, Beta55, GaussMix };

inline std::string to_string(ReferenceKind k) {
    switch (k) {
        case ReferenceKind::Beta22: return "beta22";
        case ReferenceKind::Beta55: return "beta55";
        case ReferenceKind::GaussMix: return "gaussmix";
    }
    return "?";
}

inline ReferenceKind reference_kind_from_string(const std::string& s) {
    if (s == "beta22") return ReferenceKind::Beta22;
    if (s == "beta55") return ReferenceKind::Beta55;
    if (s == "gaussmix") return ReferenceKind::GaussMix;
    throw ConfigError("unknown reference kind '" + s + "' (expected beta22, beta55 or gaussmix)");
}

/// One-dimensional reference density mu on (-L, L), symmetric about 0.
///
/// Beta22:   3/(4L) (1 - z^2/L^2)
/// Beta55:   315/(256L) (1 - z^2/L^2)^4
/// GaussMix: C (1 - z^2/L^2) sum_c exp(-(z - c)^2 / (2 sigma^2))
///
/// Evaluation is done on |z| and the sign reapplied, so log-density is exactly
/// even and the score exactly odd in floating point.
class ReferenceDensity {
public:
    static constexpr std::size_t cdf_intervals = 4096;

    static ReferenceDensity beta22(double L = 1.0) { return ReferenceDensity(ReferenceKind::Beta22, L, {}, 0.0); }
    static ReferenceDensity beta55(double L = 8.0) { return ReferenceDensity(ReferenceKind::Beta55, L, {}, 0.0); }
    static ReferenceDensity gauss_mix(double L = 16.0, std::vector<double> centers = {-12, -8, -4, 0, 4, 8, 12},
                                      double sigma = 1.5) {
        return ReferenceDensity(ReferenceKind::GaussMix, L, std::move(centers), sigma);
    }
    static ReferenceDensity make(ReferenceKind kind, double L) {
        switch (kind) {
            case ReferenceKind::Beta22: return beta22(L);
            case ReferenceKind::Beta55: return beta55(L);
            case ReferenceKind::GaussMix: return gauss_mix(L);
        }
        throw ConfigError("unknown reference kind");
    }

    ReferenceKind kind() const { return kind_; }
    double half_width() const { return L_; }
    double sigma() const { return sigma_; }
    const std::vector<double>& centers() const { return centers_; }
    /// Normalization constant (C, C1, or 3/(4L)).
    double normalization() const { return std::exp(log_norm_); }

    double log_density(double z) const {
        check_domain(z);
        return log_density_abs(std::fabs(z));
    }

    /// mu(z), zero on and outside the boundary.
    double density(double z) const {
        if (!(std::fabs(z) < L_)) return 0.0;
        return std::exp(log_density_abs(std::fabs(z)));
    }

    double score(double z) const {
        check_domain(z);
        if (z == 0.0) return 0.0;
        return z < 0.0 ? -score_abs(-z) : score_abs(z);
    }

    /// Inverse CDF of mu restricted to (0, L); u in (0, 1).
    double sample_positive(double u) const {
        const auto& F = cdf_->F;
        const auto it = std::upper_bound(F.begin(), F.end(), u);
        std::size_t j = static_cast<std::size_t>(std::distance(F.begin(), it));
        j = std::clamp<std::size_t>(j, 1, F.size() - 1);
        const double f0 = F[j - 1], f1 = F[j];
        const double h = L_ / static_cast<double>(cdf_intervals);
        const double frac = f1 > f0 ? (u - f0) / (f1 - f0) : 0.5;
        return std::min((static_cast<double>(j - 1) + frac) * h, std::nextafter(L_, 0.0));
    }

    /// CDF of |Z| for Z ~ mu, i.e. of mu folded onto (0, L). Piecewise linear in the table.
    double folded_cdf(double r) const {
        if (r <= 0.0) return 0.0;
        if (r >= L_) return 1.0;
        const double h = L_ / static_cast<double>(cdf_intervals);
        const double pos = r / h;
        const std::size_t j = std::min(static_cast<std::size_t>(pos), cdf_intervals - 1);
        const double frac = pos - static_cast<double>(j);
        return cdf_->F[j] + frac * (cdf_->F[j + 1] - cdf_->F[j]);
    }

private:
    struct CdfTable {
        std::vector<double> F;  // cumulative mass on (0, z_j), z_j = j L / cdf_intervals
    };

    ReferenceDensity(ReferenceKind kind, double L, std::vector<double> centers, double sigma)
        : kind_(kind), L_(L), centers_(std::move(centers)), sigma_(sigma) {
        if (!(L > 0.0)) throw ConfigError("reference half-width L must be positive");
        switch (kind_) {
            case ReferenceKind::Beta22: log_norm_ = std::log(3.0 / (4.0 * L_)); break;
            case ReferenceKind::Beta55: log_norm_ = std::log(315.0 / (256.0 * L_)); break;
            case ReferenceKind::GaussMix:
                if (!(sigma_ > 0.0) || centers_.empty()) throw ConfigError("gaussmix needs sigma > 0 and centers");
                for (std::size_t i = 0; i < centers_.size(); ++i)
                    if (std::find(centers_.begin(), centers_.end(), -centers_[i]) == centers_.end())
                        throw ConfigError("gaussmix centers must be symmetric about 0");
                log_norm_ = 0.0;
                break;
        }
        build_cdf();
    }

    void check_domain(double z) const {
        if (!(std::fabs(z) < L_))
            throw DomainError("reference density evaluated at |z| = " + std::to_string(std::fabs(z)) +
                              " >= L = " + std::to_string(L_));
    }

    double log_mix(double r) const {
        double m = -std::numeric_limits<double>::infinity();
        for (double c : centers_) m = std::max(m, -(r - c) * (r - c) / (2.0 * sigma_ * sigma_));
        double s = 0.0;
        for (double c : centers_) s += std::exp(-(r - c) * (r - c) / (2.0 * sigma_ * sigma_) - m);
        return m + std::log(s);
    }

    double log_density_abs(double r) const {
        const double t = 1.0 - (r / L_) * (r / L_);
        switch (kind_) {
            case ReferenceKind::Beta22: return log_norm_ + std::log(t);
            case ReferenceKind::Beta55: return log_norm_ + 4.0 * std::log(t);
            case ReferenceKind::GaussMix: return log_norm_ + std::log(t) + log_mix(r);
        }
        return 0.0;
    }

    double score_abs(double r) const {
        switch (kind_) {
            case ReferenceKind::Beta22: return -2.0 * r / (L_ * L_ - r * r);
            case ReferenceKind::Beta55: return -8.0 * r / (L_ * L_ - r * r);
            case ReferenceKind::GaussMix: {
                const double s2 = sigma_ * sigma_;
                double m = -std::numeric_limits<double>::infinity();
                for (double c : centers_) m = std::max(m, -(r - c) * (r - c) / (2.0 * s2));
                double wsum = 0.0, acc = 0.0;
                for (double c : centers_) {
                    const double w = std::exp(-(r - c) * (r - c) / (2.0 * s2) - m);
                    wsum += w;
                    acc += w * (-(r - c) / s2);
                }
                return acc / wsum - 2.0 * r / (L_ * L_ - r * r);
            }
        }
        return 0.0;
    }

    void build_cdf() {
        using boost::math::quadrature::gauss;
        auto table = std::make_shared<CdfTable>();
        table->F.assign(cdf_intervals + 1, 0.0);
        const double h = L_ / static_cast<double>(cdf_intervals);
        for (std::size_t j = 0; j < cdf_intervals; ++j) {
            const double a = static_cast<double>(j) * h;
            const double b = (j + 1 == cdf_intervals) ? L_ : a + h;
            const double piece = gauss<double, 15>::integrate(
                [this](double r) { return r < L_ ? std::exp(log_density_abs(r)) : 0.0; }, a, b);
            table->F[j + 1] = table->F[j] + piece;
        }
        const double half_mass = table->F.back();
        if (kind_ == ReferenceKind::GaussMix) log_norm_ -= std::log(2.0 * half_mass);
        for (auto& f : table->F) f /= half_mass;
        table->F.back() = 1.0;
        cdf_ = std::move(table);
    }

    ReferenceKind kind_;
    double L_;
    std::vector<double> centers_;
    double sigma_;
    double log_norm_ = 0.0;
    std::shared_ptr<const CdfTable> cdf_;
};

/// Sign-symmetric particle cloud on (-L, L)^d.
///
/// Particles are stored in mirror groups of 2^d consecutive entries: entry
/// `g * 2^d + p` is base point g with axis k negated when bit k of p is set.
struct ParticleSet {
    std::size_t d = 0;
    std::size_t N = 0;
    std::vector<double> z;       // N x d
    std::vector<double> log_mu;  // N x d, per-coordinate log mu_k(z_k)
    std::vector<double> score;   // N x d, per-coordinate d/dz log mu_k
    std::uint64_t seed = 0;

    std::size_t group_size() const { return std::size_t{1} << d; }
    double coord(std::size_t i, std::size_t k) const { return z[i * d + k]; }

    /// log mu(z_i) as the sum of per-axis terms in axis order.
    double log_mu_total(std::size_t i) const {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += log_mu[i * d + k];
        return s;
    }

    /// Rebuild log_mu and score from coordinates.
    void refresh(std::span<const ReferenceDensity> refs) {
        log_mu.resize(N * d);
        score.resize(N * d);
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t k = 0; k < d; ++k) {
                log_mu[i * d + k] = refs[k].log_density(z[i * d + k]);
                score[i * d + k] = refs[k].score(z[i * d + k]);
            }
    }
};

inline ParticleSet sample_sign_symmetric(std::span<const ReferenceDensity> refs, std::size_t d, std::size_t N,
                                         std::uint64_t seed) {
    if (d == 0 || refs.size() != d) throw ConfigError("sample_sign_symmetric: need one reference density per axis");
    const std::size_t group = std::size_t{1} << d;
    if (N == 0 || N % group != 0)
        throw ConfigError("particle count N = " + std::to_string(N) + " must be a positive multiple of 2^d = " +
                          std::to_string(group) + " for sign-symmetric sampling");
    ParticleSet ps;
    ps.d = d;
    ps.N = N;
    ps.seed = seed;
    ps.z.resize(N * d);
    Rng rng(seed);
    std::vector<double> base(d);
    for (std::size_t g = 0; g < N / group; ++g) {
        for (std::size_t k = 0; k < d; ++k) {
            double v = 0.0;
            while (!(v > 0.0)) v = refs[k].sample_positive(rng.uniform());
            base[k] = v;
        }
        for (std::size_t p = 0; p < group; ++p)
            for (std::size_t k = 0; k < d; ++k) ps.z[(g * group + p) * d + k] = ((p >> k) & 1U) ? -base[k] : base[k];
    }
    ps.refresh(refs);
    return ps;
}

inline void write_particles_csv(std::ostream& os, const ParticleSet& ps) {
    os << "index";
    for (std::size_t k = 0; k < ps.d; ++k) os << ",z_" << (k + 1);
    os << '\n';
    os.precision(17);
    for (std::size_t i = 0; i < ps.N; ++i) {
        os << i;
        for (std::size_t k = 0; k < ps.d; ++k) os << ',' << ps.coord(i, k);
        os << '\n';
    }
}

}  // namespace pwgf
