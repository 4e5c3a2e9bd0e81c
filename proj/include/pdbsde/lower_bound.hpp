#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pdbsde/generator.hpp"
#include "pdbsde/upper_bound.hpp"

namespace pdbsde {

// First exercise date j < n with S_j >= qtil_j + f(j, ytil_j, ztil_j) Delta_j, else n.
inline std::size_t stopping_time(const PathRecord& p, const Generator& g) {
    for (std::size_t j = 0; j < p.n; ++j) {
        const Barrier& s = p.barrier[j];
        if (!s.finite()) continue;
        if (s.value() >= p.q[j] + g.eval(j, p.state(j), p.y[j], p.ztil(j)) * p.deltas[j]) return j;
    }
    return p.n;
}

using ControlSequence = std::vector<Linearization>;

enum class ControlKind { convex, concave };

// Controls at the fitted (ytil_j, ztil_j) for j < n.
inline ControlSequence controls_along_path(const PathRecord& p, const Generator& g, ControlKind kind) {
    ControlSequence c(p.n);
    for (std::size_t j = 0; j < p.n; ++j)
        c[j] = kind == ControlKind::convex ? subgradient(g, j, p.state(j), p.y[j], p.ztil(j))
                                           : concave_controls(g, j, p.state(j), p.y[j], p.ztil(j));
    return c;
}

// Gamma_{0,j} = prod_{k<j} (1 + s rho_k . beta_{k+1} Delta_k) / (1 - s r_k Delta_k),
// s = +1 for convex controls and -1 for the mirrored (concave) ones.
inline std::vector<double> gamma_factors(const ControlSequence& c, const PathRecord& p, double sign = 1.0) {
    std::vector<double> g(p.n + 1, 1.0);
    for (std::size_t k = 0; k < p.n; ++k) {
        const auto b = p.weight(k);
        double rb = 0.0;
        for (std::size_t d = 0; d < p.dim; ++d) rb += c[k].rho[d] * b[d];
        const double den = 1.0 - sign * c[k].r * p.deltas[k];
        if (!(den > 0.0)) throw InvariantViolation("gamma_factors: 1 - r Delta <= 0");
        const double num = 1.0 + sign * rb * p.deltas[k];
        g[k + 1] = g[k] * num / den;
    }
    return g;
}

struct LowerTerms {
    double value = 0.0;    // Gamma S_tau - sum Gamma f^# Delta / (1 - r Delta)
    double control = 0.0;  // sum Gamma (dm0 + rho Delta . dm) / (1 - r Delta)
};

inline LowerTerms lower_terms(const PathRecord& p, std::size_t tau, const ControlSequence& c) {
    const auto gam = gamma_factors(c, p);
    LowerTerms t;
    t.value = gam[tau] * p.barrier[tau].value();
    for (std::size_t j = 0; j < tau; ++j) {
        const double dt = p.deltas[j];
        const double den = 1.0 - c[j].r * dt;
        if (c[j].conj != 0.0) t.value -= gam[j] * c[j].conj * dt / den;
        const auto m = p.dmz(j);
        double rm = 0.0;
        for (std::size_t d = 0; d < p.dim; ++d) rm += c[j].rho[d] * m[d];
        t.control += gam[j] * (p.dm0[j] + dt * rm) / den;
    }
    return t;
}

// Primal lower bound for a convex driver, optionally with the martingale
// control variate subtracted.
inline double theta_low_convex(const PathRecord& p, std::size_t tau, const ControlSequence& c, bool cv) {
    const auto t = lower_terms(p, tau, c);
    return cv ? t.value - t.control : t.value;
}

// Concave-case dual bound: max over finite-barrier k of
//   Gm_k S_k + sum_{j<k} Gm_j conj_j Delta_j/(1 + r_j Delta_j) - (M0_k - M0_0)
// with Gm the mirrored Gamma and conj = (-f)^#.
inline double vartheta_up_concave(const PathRecord& p, const ControlSequence& c) {
    const auto gam = gamma_factors(c, p, -1.0);
    double best = -std::numeric_limits<double>::infinity();
    double acc = 0.0;  // running sum minus martingale
    for (std::size_t k = 0; k <= p.n; ++k) {
        if (p.barrier[k].finite()) best = std::max(best, gam[k] * p.barrier[k].value() + acc);
        if (k == p.n) break;
        const double dt = p.deltas[k];
        const double den = 1.0 + c[k].r * dt;
        const auto m = p.dmz(k);
        double rm = 0.0;
        for (std::size_t d = 0; d < p.dim; ++d) rm += c[k].rho[d] * m[d];
        acc += gam[k] * (c[k].conj * dt - (p.dm0[k] - dt * rm)) / den;
    }
    return best;
}

inline double theta_low_h(const PathRecord& p, std::size_t tau, const Generator& g, const Envelope& h_low,
                          EnvelopeSolver solver = EnvelopeSolver::automatic, std::vector<double>* trajectory = nullptr) {
    if (h_low.is_up()) throw std::invalid_argument("theta_low_h: needs a lower envelope");
    return envelope_recursion(p, g, h_low, tau, solver, trajectory);
}

// theta_i = theta_{i+1} - dm0_i + f(i, theta_i, beta theta_{i+1} - dm_i) Delta_i
// for i < tau, from theta_tau = S_tau (concave lower bound).
inline double vartheta_low_concave(const PathRecord& p, std::size_t tau, const Generator& g) {
    const std::size_t D = p.dim;
    double theta = p.barrier[tau].value();
    std::array<double, kMaxDim> zu{};
    for (std::size_t i = tau; i-- > 0;) {
        const double dt = p.deltas[i];
        const auto b = p.weight(i);
        const auto m = p.dmz(i);
        for (std::size_t d = 0; d < D; ++d) zu[d] = b[d] * theta - m[d];
        const std::span<const double> zs(zu.data(), D);
        const double a = theta - p.dm0[i];
        const auto x = p.state(i);
        theta = picard_solve([&](double t) { return a + g.eval(i, x, t, zs) * dt; }, a + g.eval(i, x, theta, zs) * dt)
                    .value;
    }
    return theta;
}

}  // namespace pdbsde
