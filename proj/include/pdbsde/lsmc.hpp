#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pdbsde/closed_form.hpp"
#include "pdbsde/generator.hpp"
#include "pdbsde/parallel.hpp"
#include "pdbsde/payoff.hpp"
#include "pdbsde/sim_model.hpp"

namespace pdbsde {

enum class FitMode { lgw, mb };

inline const char* fit_mode_name(FitMode m) { return m == FitMode::lgw ? "lgw" : "mb"; }

inline FitMode parse_fit_mode(const std::string& s) {
    if (s == "lgw") return FitMode::lgw;
    if (s == "mb") return FitMode::mb;
    throw std::invalid_argument("unknown fit mode '" + s + "'");
}

struct StepCoefficients {
    std::vector<double> q;  // over the y-basis at step i
    std::vector<double> z;  // D rows over the z-basis at step i
};

struct Approximation {
    FitMode mode = FitMode::lgw;
    BasisPreset preset = BasisPreset::eu2;
    std::size_t n = 0;
    std::size_t dim = 0;
    std::vector<StepCoefficients> steps;  // i = 0..n-1
    std::vector<std::string> warnings;
};

inline constexpr int kApproximationFormat = 1;

inline nlohmann::json to_json(const Approximation& a) {
    nlohmann::json j;
    j["format"] = "pdbsde-approximation";
    j["version"] = kApproximationFormat;
    j["mode"] = fit_mode_name(a.mode);
    j["preset"] = basis_preset_name(a.preset);
    j["steps"] = a.n;
    j["dim"] = a.dim;
    auto& c = j["coefficients"] = nlohmann::json::array();
    for (std::size_t i = 0; i < a.steps.size(); ++i)
        c.push_back({{"step", i}, {"q", a.steps[i].q}, {"z", a.steps[i].z}});
    j["warnings"] = a.warnings;
    return j;
}

inline Approximation approximation_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "pdbsde-approximation") throw std::invalid_argument("not an approximation document");
    if (j.at("version").get<int>() != kApproximationFormat)
        throw std::invalid_argument("unsupported approximation format version");
    Approximation a;
    a.mode = parse_fit_mode(j.at("mode").get<std::string>());
    a.preset = parse_basis_preset(j.at("preset").get<std::string>());
    a.n = j.at("steps").get<std::size_t>();
    a.dim = j.at("dim").get<std::size_t>();
    const auto& c = j.at("coefficients");
    if (c.size() != a.n) throw std::invalid_argument("approximation: coefficient count does not match steps");
    a.steps.resize(a.n);
    for (const auto& e : c) {
        const auto i = e.at("step").get<std::size_t>();
        if (i >= a.n) throw std::invalid_argument("approximation: step index out of range");
        a.steps[i].q = e.at("q").get<std::vector<double>>();
        a.steps[i].z = e.at("z").get<std::vector<double>>();
    }
    if (j.contains("warnings")) a.warnings = j.at("warnings").get<std::vector<std::string>>();
    return a;
}

// Binds coefficients to basis, driver and payoff.
class ApproxEvaluator {
public:
    ApproxEvaluator(const Approximation& a, const Basis& b, const Generator& g, const Payoff& p, const TimeGrid& grid)
        : a_(a), b_(b), g_(g), p_(p), grid_(grid) {
        if (a.n != grid.n || a.dim != b.dim() || a.dim != g.dim())
            throw std::invalid_argument("ApproxEvaluator: approximation does not match the problem");
    }

    const Basis& basis() const { return b_; }
    const Generator& generator() const { return g_; }
    const Payoff& payoff() const { return p_; }
    const TimeGrid& grid() const { return grid_; }

    // q and z from precomputed basis values at step i < n.
    void affine(std::size_t i, std::span<const double> yb, std::span<const double> zb, double& q,
                std::span<double> z) const {
        const auto& c = a_.steps[i];
        q = 0.0;
        for (std::size_t k = 0; k < c.q.size(); ++k) q += c.q[k] * yb[k];
        const std::size_t kz = b_.z_size(i);
        for (std::size_t d = 0; d < a_.dim; ++d) {
            double s = 0.0;
            for (std::size_t k = 0; k < kz; ++k) s += c.z[d * kz + k] * zb[d * kz + k];
            z[d] = s;
        }
    }

    // ytil_i = max{G_i, y} on exercise dates, y the fixed point of
    // y = q + f(i, x, y, z) Delta_i.
    double transform(std::size_t i, std::span<const double> x, double q, std::span<const double> z) const {
        if (i == grid_.n) return p_.intrinsic(i, x);
        const double dt = grid_.deltas[i];
        const auto r = picard_solve([&](double y) { return q + g_.eval(i, x, y, z) * dt; }, q);
        return p_.barrier(i, x).reflect(r.value);
    }

    struct Point {
        double y = 0.0;
        double q = 0.0;
        std::vector<double> z;
    };

    Point eval(std::size_t i, std::span<const double> x) const {
        Point pt;
        pt.z.assign(a_.dim, 0.0);
        if (i == grid_.n) {
            pt.y = p_.intrinsic(i, x);
            return pt;
        }
        std::vector<double> yb(b_.y_size(i)), zb(a_.dim * b_.z_size(i));
        b_.evaluate(i, x, yb, zb);
        affine(i, yb, zb, pt.q, pt.z);
        pt.y = transform(i, x, pt.q, pt.z);
        return pt;
    }

private:
    const Approximation& a_;
    const Basis& b_;
    const Generator& g_;
    const Payoff& p_;
    const TimeGrid& grid_;
};

struct LeastSquares {
    Eigen::VectorXd coef;
    Eigen::Index rank = 0;
};

inline constexpr double kSvdThreshold = 1e-10;

// Minimum-norm least squares via SVD with a relative singular value cutoff.
inline LeastSquares least_squares(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    Eigen::JacobiSVD<Eigen::MatrixXd, Eigen::ColPivHouseholderQRPreconditioner> svd(
        A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(kSvdThreshold);
    return {svd.solve(b), svd.rank()};
}

struct FitOptions {
    std::size_t threads = 1;
};

namespace detail {

struct StepBasis {
    Eigen::MatrixXd y;  // paths x ky
    Eigen::MatrixXd z;  // paths x (D*kz)
};

inline StepBasis evaluate_step(const Basis& b, std::span<const OuterPath> paths, std::size_t i, bool want_z,
                               std::size_t threads) {
    const std::size_t ky = b.y_size(i), kz = want_z && i < b.steps() ? b.z_size(i) : 0, D = b.dim();
    StepBasis s;
    // row-major staging keeps each path's writes contiguous
    std::vector<double> yv(paths.size() * ky), zv(paths.size() * D * kz);
    parallel_for(paths.size(), threads, [&](std::size_t l) {
        b.evaluate(i, paths[l].state(i), std::span<double>(yv.data() + l * ky, ky),
                   std::span<double>(zv.data() + l * D * kz, D * kz));
    });
    s.y = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        yv.data(), static_cast<Eigen::Index>(paths.size()), static_cast<Eigen::Index>(ky));
    s.z = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        zv.data(), static_cast<Eigen::Index>(paths.size()), static_cast<Eigen::Index>(D * kz));
    return s;
}

inline void note_rank(Approximation& a, const char* what, std::size_t i, const LeastSquares& ls, Eigen::Index cols) {
    if (ls.rank < cols)
        a.warnings.push_back("step " + std::to_string(i) + ": " + what + " design has rank " +
                             std::to_string(ls.rank) + " < " + std::to_string(cols) + ", minimum-norm solution used");
}

inline void check_finite(const StepCoefficients& c, std::size_t i) {
    for (double v : c.q)
        if (!std::isfinite(v)) throw InvariantViolation("non-finite regression coefficient at step " + std::to_string(i));
    for (double v : c.z)
        if (!std::isfinite(v)) throw InvariantViolation("non-finite regression coefficient at step " + std::to_string(i));
}

}  // namespace detail

// Backward regression: q_i on the y-basis at X_i against ytil_{i+1}(X_{i+1}),
// z_{d,i} on the z_d-basis against beta_{d,i+1} ytil_{i+1}(X_{i+1}).
inline Approximation lgw_fit(std::span<const OuterPath> paths, const Basis& basis, const Generator& gen,
                             const Payoff& payoff, const TimeGrid& grid, const FitOptions& opt = {}) {
    const std::size_t n = grid.n, D = basis.dim(), L = paths.size();
    if (L < basis.y_size(0)) throw std::invalid_argument("lgw_fit: fewer regression paths than basis functions");
    Approximation a;
    a.mode = FitMode::lgw;
    a.preset = basis.preset();
    a.n = n;
    a.dim = D;
    a.steps.resize(n);
    ApproxEvaluator ev(a, basis, gen, payoff, grid);

    Eigen::VectorXd target(static_cast<Eigen::Index>(L));
    for (std::size_t l = 0; l < L; ++l) target[l] = payoff.intrinsic(n, paths[l].state(n));

    for (std::size_t i = n; i-- > 0;) {
        const auto sb = detail::evaluate_step(basis, paths, i, true, opt.threads);
        auto& c = a.steps[i];
        auto ls = least_squares(sb.y, target);
        detail::note_rank(a, "y", i, ls, sb.y.cols());
        c.q.assign(ls.coef.data(), ls.coef.data() + ls.coef.size());

        const std::size_t kz = basis.z_size(i);
        c.z.assign(D * kz, 0.0);
        if (kz > 0) {
            Eigen::VectorXd tz(static_cast<Eigen::Index>(L));
            for (std::size_t d = 0; d < D; ++d) {
                for (std::size_t l = 0; l < L; ++l) tz[l] = paths[l].weight(i)[d] * target[l];
                auto lz = least_squares(sb.z.middleCols(static_cast<Eigen::Index>(d * kz), kz), tz);
                detail::note_rank(a, "z", i, lz, static_cast<Eigen::Index>(kz));
                std::copy(lz.coef.data(), lz.coef.data() + kz, c.z.begin() + d * kz);
            }
        }
        detail::check_finite(c, i);

        Eigen::VectorXd next(static_cast<Eigen::Index>(L));
        parallel_for(L, opt.threads, [&](std::size_t l) {
            std::array<double, kMaxDim> z{};
            std::vector<double> yb(sb.y.cols()), zb(sb.z.cols());
            for (Eigen::Index k = 0; k < sb.y.cols(); ++k) yb[k] = sb.y(l, k);
            for (Eigen::Index k = 0; k < sb.z.cols(); ++k) zb[k] = sb.z(l, k);
            double q = 0.0;
            ev.affine(i, yb, zb, q, std::span<double>(z.data(), D));
            next[l] = ev.transform(i, paths[l].state(i), q, std::span<const double>(z.data(), D));
        });
        target = std::move(next);
    }
    return a;
}

// Martingale-basis variant: regress ytil_{i+1} on the y-basis at step i+1 and
// map the coefficients through closed-form one-step conditional expectations.
inline Approximation mb_fit(std::span<const OuterPath> paths, const Basis& basis, const Generator& gen,
                            const Payoff& payoff, const TimeGrid& grid, const FitOptions& opt = {}) {
    if (!basis.supports_martingale_basis())
        throw std::invalid_argument("mb_fit: basis preset has no closed-form conditional expectations");
    const std::size_t n = grid.n, D = basis.dim(), L = paths.size();
    if (L < basis.y_size(n)) throw std::invalid_argument("mb_fit: fewer regression paths than basis functions");
    Approximation a;
    a.mode = FitMode::mb;
    a.preset = basis.preset();
    a.n = n;
    a.dim = D;
    a.steps.resize(n);
    ApproxEvaluator ev(a, basis, gen, payoff, grid);

    Eigen::VectorXd target(static_cast<Eigen::Index>(L));
    for (std::size_t l = 0; l < L; ++l) target[l] = payoff.intrinsic(n, paths[l].state(n));
    auto ahead = detail::evaluate_step(basis, paths, n, false, opt.threads);

    for (std::size_t i = n; i-- > 0;) {
        auto ls = least_squares(ahead.y, target);
        detail::note_rank(a, "y", i + 1, ls, ahead.y.cols());
        const auto tr = basis.mb_transfer(i);
        const Eigen::VectorXd q = tr.q * ls.coef;
        const Eigen::VectorXd z = tr.z * ls.coef;
        auto& c = a.steps[i];
        c.q.assign(q.data(), q.data() + q.size());
        c.z.assign(z.data(), z.data() + z.size());
        detail::check_finite(c, i);

        auto sb = detail::evaluate_step(basis, paths, i, true, opt.threads);
        Eigen::VectorXd next(static_cast<Eigen::Index>(L));
        parallel_for(L, opt.threads, [&](std::size_t l) {
            std::array<double, kMaxDim> zz{};
            std::vector<double> yb(sb.y.cols()), zb(sb.z.cols());
            for (Eigen::Index k = 0; k < sb.y.cols(); ++k) yb[k] = sb.y(l, k);
            for (Eigen::Index k = 0; k < sb.z.cols(); ++k) zb[k] = sb.z(l, k);
            double qq = 0.0;
            ev.affine(i, yb, zb, qq, std::span<double>(zz.data(), D));
            next[l] = ev.transform(i, paths[l].state(i), qq, std::span<const double>(zz.data(), D));
        });
        target = std::move(next);
        ahead.y = std::move(sb.y);
    }
    return a;
}

inline Approximation fit(FitMode mode, std::span<const OuterPath> paths, const Basis& basis, const Generator& gen,
                         const Payoff& payoff, const TimeGrid& grid, const FitOptions& opt = {}) {
    return mode == FitMode::lgw ? lgw_fit(paths, basis, gen, payoff, grid, opt)
                                : mb_fit(paths, basis, gen, payoff, grid, opt);
}

}  // namespace pdbsde
