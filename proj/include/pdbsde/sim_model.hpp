#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "pdbsde/rng.hpp"

namespace pdbsde {

inline constexpr std::size_t kMaxDim = 16;

struct TimeGrid {
    std::size_t n = 0;
    std::vector<double> times;
    std::vector<double> deltas;

    double horizon() const { return times.back(); }
    // time to maturity from step i
    double remaining(std::size_t i) const { return times.back() - times[i]; }
};

inline TimeGrid make_grid(double T, std::size_t n) {
    if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("make_grid: horizon must be positive");
    if (n == 0) throw std::invalid_argument("make_grid: need at least one step");
    TimeGrid g;
    g.n = n;
    g.times.resize(n + 1);
    g.deltas.assign(n, T / static_cast<double>(n));
    for (std::size_t i = 0; i <= n; ++i) g.times[i] = T * static_cast<double>(i) / static_cast<double>(n);
    g.times[n] = T;
    return g;
}

struct GbmModel {
    std::vector<double> x0;
    double mu = 0.0;
    double sigma = 0.0;

    std::size_t dim() const { return x0.size(); }

    void validate() const {
        if (x0.empty() || x0.size() > kMaxDim) throw std::invalid_argument("GbmModel: dimension must be in [1, 16]");
        for (double v : x0)
            if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("GbmModel: x0 must be positive");
        if (!std::isfinite(mu)) throw std::invalid_argument("GbmModel: mu must be finite");
        // sigma == 0 is accepted as the deterministic limit
        if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("GbmModel: sigma must be >= 0");
    }
};

// Per-step clamp levels c_i for the weights beta. +inf means no truncation.
struct Truncation {
    std::vector<double> levels;
    double level(std::size_t i) const { return levels[i]; }
};

// c_i = 1 / (D * max_d alpha_d * Delta_i): the smallest level for which
// sum_d alpha_d |beta_d| <= 1/Delta_i can fail is never reached.
inline Truncation make_truncation(const TimeGrid& grid, std::size_t dim, double alpha_z_max) {
    Truncation t;
    t.levels.resize(grid.n);
    for (std::size_t i = 0; i < grid.n; ++i) {
        t.levels[i] = alpha_z_max > 0.0 ? 1.0 / (static_cast<double>(dim) * alpha_z_max * grid.deltas[i])
                                        : std::numeric_limits<double>::infinity();
    }
    return t;
}

inline Truncation fixed_truncation(const TimeGrid& grid, double level) {
    if (!(level > 0.0)) throw std::invalid_argument("truncation level must be positive");
    return Truncation{std::vector<double>(grid.n, level)};
}

inline double truncate_weight(double dw, double delta, double c) {
    return std::clamp(dw / delta, -c, c);
}

inline std::vector<double> truncated_weights(std::span<const double> dw, double delta, double c) {
    if (!(delta > 0.0) || !(c > 0.0)) throw std::invalid_argument("truncated_weights: delta and level must be positive");
    std::vector<double> beta(dw.size());
    for (std::size_t d = 0; d < dw.size(); ++d) beta[d] = truncate_weight(dw[d], delta, c);
    return beta;
}

struct OuterPath {
    std::size_t n = 0;
    std::size_t dim = 0;
    std::vector<double> x;     // (n+1) x D
    std::vector<double> dw;    // n x D
    std::vector<double> beta;  // n x D, row i holds beta_{i+1}

    std::span<const double> state(std::size_t i) const { return {x.data() + i * dim, dim}; }
    std::span<const double> increment(std::size_t i) const { return {dw.data() + i * dim, dim}; }
    std::span<const double> weight(std::size_t i) const { return {beta.data() + i * dim, dim}; }
};

// Fills a path from standard normals drawn in step-major order. Prices are
// formed from the cumulative Brownian motion so sigma = 0 gives x0*exp(mu*t_i)
// exactly.
template <class Gen>
void fill_path(const GbmModel& m, const TimeGrid& g, const Truncation& tr, Gen& eng, OuterPath& p) {
    const std::size_t D = m.dim();
    p.n = g.n;
    p.dim = D;
    p.x.resize((g.n + 1) * D);
    p.dw.resize(g.n * D);
    p.beta.resize(g.n * D);
    std::normal_distribution<double> normal;
    double w[kMaxDim] = {};
    const double nu = m.mu - 0.5 * m.sigma * m.sigma;
    for (std::size_t d = 0; d < D; ++d) p.x[d] = m.x0[d];
    for (std::size_t i = 0; i < g.n; ++i) {
        const double sq = std::sqrt(g.deltas[i]);
        for (std::size_t d = 0; d < D; ++d) {
            const double inc = sq * normal(eng);
            p.dw[i * D + d] = inc;
            p.beta[i * D + d] = truncate_weight(inc, g.deltas[i], tr.levels[i]);
            w[d] += inc;
            p.x[(i + 1) * D + d] = m.x0[d] * std::exp(nu * g.times[i + 1] + m.sigma * w[d]);
        }
    }
}

inline OuterPath simulate_outer_path(const GbmModel& m, const TimeGrid& g, const Truncation& tr,
                                     std::uint64_t seed, std::size_t index,
                                     StreamRole role = StreamRole::outer) {
    auto eng = make_engine(seed, role, index);
    OuterPath p;
    fill_path(m, g, tr, eng, p);
    return p;
}

inline std::vector<OuterPath> simulate_outer(const GbmModel& m, const TimeGrid& g, const Truncation& tr,
                                             std::size_t count, std::uint64_t seed,
                                             StreamRole role = StreamRole::outer) {
    if (count == 0) throw std::invalid_argument("simulate_outer: count must be >= 1");
    m.validate();
    std::vector<OuterPath> paths(count);
    for (std::size_t k = 0; k < count; ++k) paths[k] = simulate_outer_path(m, g, tr, seed, k, role);
    return paths;
}

struct InnerCloud {
    std::size_t step = 0;
    std::size_t dim = 0;
    std::size_t count = 0;
    std::vector<double> anchor;
    std::vector<double> x_next;  // count x D
    std::vector<double> beta;    // count x D

    std::span<const double> state(std::size_t l) const { return {x_next.data() + l * dim, dim}; }
    std::span<const double> weight(std::size_t l) const { return {beta.data() + l * dim, dim}; }
};

// Conditional one-step resample from X_i = x_i. The stream is keyed by the
// owning outer path and the step, so it is independent of every outer path.
inline void simulate_inner_into(const GbmModel& m, const TimeGrid& g, const Truncation& tr, std::size_t i,
                                std::span<const double> x_i, std::size_t count, std::uint64_t seed,
                                std::size_t path_index, InnerCloud& cloud) {
    if (i >= g.n) throw std::out_of_range("simulate_inner: step out of range");
    const std::size_t D = m.dim();
    cloud.step = i;
    cloud.dim = D;
    cloud.count = count;
    cloud.anchor.assign(x_i.begin(), x_i.end());
    cloud.x_next.resize(count * D);
    cloud.beta.resize(count * D);
    auto eng = make_engine(seed, StreamRole::inner, path_index, i);
    std::normal_distribution<double> normal;
    const double dt = g.deltas[i];
    const double sq = std::sqrt(dt);
    const double drift = (m.mu - 0.5 * m.sigma * m.sigma) * dt;
    const double c = tr.levels[i];
    for (std::size_t l = 0; l < count; ++l) {
        for (std::size_t d = 0; d < D; ++d) {
            const double inc = sq * normal(eng);
            cloud.x_next[l * D + d] = x_i[d] * std::exp(drift + m.sigma * inc);
            cloud.beta[l * D + d] = truncate_weight(inc, dt, c);
        }
    }
}

inline InnerCloud simulate_inner(const GbmModel& m, const TimeGrid& g, const Truncation& tr, std::size_t i,
                                 std::span<const double> x_i, std::size_t count, std::uint64_t seed,
                                 std::size_t path_index = 0) {
    InnerCloud c;
    simulate_inner_into(m, g, tr, i, x_i, count, seed, path_index, c);
    return c;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }
inline double normal_pdf(double x) { return 0.39894228040143267794 * std::exp(-0.5 * x * x); }

struct WeightMoments {
    std::vector<double> mean;
    Eigen::MatrixXd second;
    Eigen::MatrixXd pseudo_inverse;
};

// Second moment of clamp(N(0, 1/delta), -c, c).
inline double clamped_second_moment(double delta, double c) {
    if (!(delta > 0.0)) throw std::invalid_argument("weight_moments: delta must be positive");
    if (std::isinf(c)) return 1.0 / delta;
    if (c <= 0.0) return 0.0;
    const double s2 = 1.0 / delta;
    const double u = c * std::sqrt(delta);
    const double tail = 0.5 * std::erfc(u * 0.70710678118654752440);
    return s2 * ((1.0 - 2.0 * tail) - 2.0 * u * normal_pdf(u)) + 2.0 * c * c * tail;
}

inline WeightMoments weight_moments(double delta, double c, std::size_t dim) {
    WeightMoments w;
    w.mean.assign(dim, 0.0);
    const double b = clamped_second_moment(delta, c);
    w.second = Eigen::MatrixXd::Identity(dim, dim) * b;
    w.pseudo_inverse = Eigen::MatrixXd::Identity(dim, dim) * (b > 0.0 ? 1.0 / b : 0.0);
    return w;
}

inline void write_paths_csv(std::ostream& os, std::span<const OuterPath> paths) {
    os << "path,step,asset,x,dw,beta\n";
    os.precision(17);
    for (std::size_t k = 0; k < paths.size(); ++k) {
        const auto& p = paths[k];
        for (std::size_t i = 0; i <= p.n; ++i)
            for (std::size_t d = 0; d < p.dim; ++d) {
                os << k << ',' << i << ',' << d << ',' << p.x[i * p.dim + d] << ',';
                if (i < p.n)
                    os << p.dw[i * p.dim + d] << ',' << p.beta[i * p.dim + d];
                else
                    os << ',';
                os << '\n';
            }
    }
}

}  // namespace pdbsde
