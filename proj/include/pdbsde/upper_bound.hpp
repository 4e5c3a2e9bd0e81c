#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "pdbsde/generator.hpp"
#include "pdbsde/payoff.hpp"
#include "pdbsde/sim_model.hpp"

namespace pdbsde {

// Everything the pathwise recursions need from one outer path: states,
// barrier, the fitted triple (ytil, qtil, ztil) along the path, weights and
// the surrogate martingale increments
//   dm0_i = ytil_{i+1}(X_{i+1}) - e_y,  dm_i = beta_{i+1} ytil_{i+1}(X_{i+1}) - e_by.
struct PathRecord {
    std::size_t n = 0;
    std::size_t dim = 0;
    std::vector<double> deltas;    // n
    std::vector<double> x;         // (n+1) x D
    std::vector<Barrier> barrier;  // n+1
    std::vector<double> y;         // n+1
    std::vector<double> q;         // n
    std::vector<double> z;         // n x D
    std::vector<double> beta;      // n x D
    std::vector<double> dm0;       // n
    std::vector<double> dm;        // n x D

    void resize(std::size_t steps, std::size_t d) {
        n = steps;
        dim = d;
        deltas.assign(n, 0.0);
        x.assign((n + 1) * d, 0.0);
        barrier.assign(n + 1, Barrier::minus_infinity());
        y.assign(n + 1, 0.0);
        q.assign(n, 0.0);
        z.assign(n * d, 0.0);
        beta.assign(n * d, 0.0);
        dm0.assign(n, 0.0);
        dm.assign(n * d, 0.0);
    }

    std::span<const double> state(std::size_t i) const { return {x.data() + i * dim, dim}; }
    std::span<const double> ztil(std::size_t i) const { return {z.data() + i * dim, dim}; }
    std::span<const double> weight(std::size_t i) const { return {beta.data() + i * dim, dim}; }
    std::span<const double> dmz(std::size_t i) const { return {dm.data() + i * dim, dim}; }
};

enum class InnerMode { plain, cv };

struct InnerEstimate {
    double ey = 0.0;
    std::array<double, kMaxDim> eby{};
};

// Sample means of ytil_{i+1} and beta ytil_{i+1} over an inner cloud.
inline InnerEstimate inner_estimates_plain(std::span<const double> y_next, std::span<const double> beta,
                                           std::size_t dim) {
    const std::size_t L = y_next.size();
    if (L == 0) throw std::invalid_argument("inner estimates: empty cloud");
    InnerEstimate e;
    for (std::size_t l = 0; l < L; ++l) {
        e.ey += y_next[l];
        for (std::size_t d = 0; d < dim; ++d) e.eby[d] += beta[l * dim + d] * y_next[l];
    }
    e.ey /= static_cast<double>(L);
    for (std::size_t d = 0; d < dim; ++d) e.eby[d] /= static_cast<double>(L);
    return e;
}

// Control-variate estimates: the projection q + beta^T B^+ z of ytil_{i+1} is
// integrated exactly and only the residual is averaged.
inline InnerEstimate inner_estimates_cv(std::span<const double> y_next, std::span<const double> beta,
                                        const WeightMoments& mom, double q, std::span<const double> z) {
    const std::size_t L = y_next.size(), D = z.size();
    if (L == 0) throw std::invalid_argument("inner estimates: empty cloud");
    std::array<double, kMaxDim> bz{}, bbz{};  // B^+ z and B B^+ z
    for (std::size_t d = 0; d < D; ++d)
        for (std::size_t k = 0; k < D; ++k) bz[d] += mom.pseudo_inverse(d, k) * z[k];
    for (std::size_t d = 0; d < D; ++d)
        for (std::size_t k = 0; k < D; ++k) bbz[d] += mom.second(d, k) * bz[k];
    InnerEstimate e;
    double mean_resid = 0.0;
    std::array<double, kMaxDim> mean_bresid{};
    for (std::size_t l = 0; l < L; ++l) {
        double proj = 0.0;
        for (std::size_t d = 0; d < D; ++d) proj += beta[l * D + d] * bz[d];
        mean_resid += y_next[l] - proj;
        const double r2 = y_next[l] - q - proj;
        for (std::size_t d = 0; d < D; ++d) mean_bresid[d] += beta[l * D + d] * r2;
    }
    double eb_bz = 0.0;
    for (std::size_t d = 0; d < D; ++d) eb_bz += mom.mean[d] * bz[d];
    e.ey = eb_bz + mean_resid / static_cast<double>(L);
    for (std::size_t d = 0; d < D; ++d) e.eby[d] = mom.mean[d] * q + bbz[d] + mean_bresid[d] / static_cast<double>(L);
    return e;
}

enum class UpperSolver { picard, conjugate };

// Dual recursion for a convex driver:
//   theta_i = max{S_i, theta_{i+1} - dm0_i + f(i, theta_i, beta theta_{i+1} - dm_i) Delta_i}.
inline double theta_up_convex(const PathRecord& p, const Generator& g, UpperSolver solver = UpperSolver::picard,
                              std::vector<double>* trajectory = nullptr) {
    const std::size_t n = p.n, D = p.dim;
    double theta = p.barrier[n].value();
    if (trajectory) trajectory->assign(n + 1, 0.0), (*trajectory)[n] = theta;
    std::array<double, kMaxDim> zu{};
    for (std::size_t i = n; i-- > 0;) {
        const double dt = p.deltas[i];
        const auto b = p.weight(i);
        const auto m = p.dmz(i);
        for (std::size_t d = 0; d < D; ++d) zu[d] = b[d] * theta - m[d];
        const std::span<const double> zs(zu.data(), D);
        const double a = theta - p.dm0[i];
        const auto x = p.state(i);
        const Barrier& s = p.barrier[i];
        if (solver == UpperSolver::conjugate) {
            const auto cands = g.candidate_r(i, x);
            if (cands.empty()) throw std::invalid_argument("conjugate solver: generator has no candidate slopes");
            double best = -std::numeric_limits<double>::infinity();
            for (double r : cands) {
                if (!(1.0 - r * dt > 0.0)) throw InvariantViolation("conjugate solver: 1 - r Delta <= 0");
                best = std::max(best, (a - g.conjugate_y(i, x, r, zs) * dt) / (1.0 - r * dt));
            }
            theta = s.reflect(best);
        } else {
            const double start = s.reflect(a + g.eval(i, x, theta, zs) * dt);
            theta = picard_solve([&](double t) { return s.reflect(a + g.eval(i, x, t, zs) * dt); }, start).value;
        }
        if (trajectory) (*trajectory)[i] = theta;
    }
    return theta;
}

enum class EnvelopeSolver { automatic, picard };

// Theta_i = [max{S_i,] Theta_{i+1} - dm0_i + f(ytil_i, ztil_i) Delta_i
//            + h(ytil_i, ztil_i; ytil_i - Theta_i, ztil_i - beta Theta_{i+1} + dm_i) Delta_i [}]
// over steps [0, stop), started from Theta_stop = S_stop. The max is taken for
// h^up only.
inline double envelope_recursion(const PathRecord& p, const Generator& g, const Envelope& h, std::size_t stop,
                                 EnvelopeSolver solver, std::vector<double>* trajectory = nullptr) {
    const std::size_t D = p.dim;
    const bool up = h.is_up();
    double theta = p.barrier[stop].value();
    if (trajectory) trajectory->assign(p.n + 1, 0.0), (*trajectory)[stop] = theta;
    std::array<double, kMaxDim> za{};
    for (std::size_t i = stop; i-- > 0;) {
        const double dt = p.deltas[i];
        const auto x = p.state(i);
        const auto zt = p.ztil(i);
        const auto b = p.weight(i);
        const auto m = p.dmz(i);
        const double yt = p.y[i];
        for (std::size_t d = 0; d < D; ++d) za[d] = zt[d] - b[d] * theta + m[d];
        const std::span<const double> zs(za.data(), D);
        const double a = theta - p.dm0[i] + g.eval(i, x, yt, zt) * dt;
        Barrier s = up ? p.barrier[i] : Barrier::minus_infinity();
        if (solver == EnvelopeSolver::automatic && h.kind() == EnvelopeKind::generic) {
            // h = +-(alpha0 |y| + sum alpha_d |z_d|): explicit over r in {-alpha0, alpha0}
            double c = 0.0;
            for (std::size_t d = 0; d < D; ++d) c += g.lipschitz_z(i, x, d) * std::abs(za[d]);
            const double a2 = up ? a + c * dt : a - c * dt;
            const double alpha = g.lipschitz_y(i, x);
            const double t1 = (a2 + alpha * yt * dt) / (1.0 + alpha * dt);
            const double t2 = (a2 - alpha * yt * dt) / (1.0 - alpha * dt);
            theta = s.reflect(up ? std::max(t1, t2) : std::min(t1, t2));
        } else {
            auto T = [&](double t) { return s.reflect(a + h(i, x, yt, zt, yt - t, zs) * dt); };
            theta = picard_solve(T, T(theta)).value;
        }
        if (trajectory) (*trajectory)[i] = theta;
    }
    return theta;
}

inline double theta_up_h(const PathRecord& p, const Generator& g, const Envelope& h_up,
                         EnvelopeSolver solver = EnvelopeSolver::automatic, std::vector<double>* trajectory = nullptr) {
    if (!h_up.is_up()) throw std::invalid_argument("theta_up_h: needs an upper envelope");
    return envelope_recursion(p, g, h_up, p.n, solver, trajectory);
}

}  // namespace pdbsde
