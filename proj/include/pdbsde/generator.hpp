#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdbsde/errors.hpp"

namespace pdbsde {

enum class Shape { convex, concave, general, affine };

inline bool is_convex(Shape s) { return s == Shape::convex || s == Shape::affine; }
inline bool is_concave(Shape s) { return s == Shape::concave || s == Shape::affine; }

inline const char* shape_name(Shape s) {
    switch (s) {
        case Shape::convex: return "convex";
        case Shape::concave: return "concave";
        case Shape::affine: return "affine";
        default: return "general";
    }
}

// f(y, z) = lin_y*y + lin_z.z + psi(kink_y*y + kink_z.z) with psi nonincreasing
// and kappa-Lipschitz.
struct SemiGenericForm {
    double lin_y = 0.0;
    std::vector<double> lin_z;
    double kink_y = 0.0;
    std::vector<double> kink_z;
    double kappa = 0.0;
};

class Generator {
public:
    virtual ~Generator() = default;

    virtual std::string name() const = 0;
    virtual std::size_t dim() const = 0;
    virtual Shape shape() const = 0;
    virtual bool depends_on_z() const { return true; }

    virtual double eval(std::size_t i, std::span<const double> x, double y, std::span<const double> z) const = 0;
    virtual double lipschitz_y(std::size_t i, std::span<const double> x) const = 0;
    virtual double lipschitz_z(std::size_t i, std::span<const double> x, std::size_t d) const = 0;

    // Slope (r, rho) of an affine function touching f at (y, z): a supporting
    // plane if f is convex, a majorant if concave, the local tangent otherwise.
    virtual void tangent(std::size_t i, std::span<const double> x, double y, std::span<const double> z, double& r,
                         std::span<double> rho) const = 0;

    // f^#(r, rho), +inf outside the domain. Empty when no closed form exists.
    virtual std::optional<double> conjugate(std::size_t, std::span<const double>, double,
                                            std::span<const double>) const {
        return std::nullopt;
    }

    // Finite set of slopes containing a maximizer of r*y - f^{#y}(r, z).
    virtual std::vector<double> candidate_r(std::size_t, std::span<const double>) const { return {}; }

    virtual double conjugate_y(std::size_t, std::span<const double>, double, std::span<const double>) const {
        throw std::domain_error(name() + ": no y-conjugate available");
    }

    virtual std::optional<SemiGenericForm> semigeneric_form() const { return std::nullopt; }

    double max_lipschitz_z(std::size_t i, std::span<const double> x) const {
        double a = 0.0;
        for (std::size_t d = 0; d < dim(); ++d) a = std::max(a, lipschitz_z(i, x, d));
        return a;
    }
};

using GeneratorPtr = std::shared_ptr<const Generator>;

struct FundingParams {
    double R_l = 0.01;
    double R_b = 0.06;
    double mu = 0.05;
    double sigma = 0.2;
};

class FundingGenerator final : public Generator {
public:
    FundingGenerator(FundingParams p, std::size_t dim) : p_(p), dim_(dim) {
        if (!(p.R_l <= p.R_b)) throw std::invalid_argument("funding: need R_l <= R_b");
        if (!(p.sigma > 0.0)) throw std::invalid_argument("funding: sigma must be positive");
        if (dim == 0) throw std::invalid_argument("funding: dimension must be >= 1");
    }

    const FundingParams& params() const { return p_; }
    std::string name() const override { return "funding"; }
    std::size_t dim() const override { return dim_; }
    Shape shape() const override { return Shape::convex; }

    double sum_z(std::span<const double> z) const {
        double s = 0.0;
        for (double v : z) s += v;
        return s;
    }

    double eval(std::size_t, std::span<const double>, double y, std::span<const double> z) const override {
        const double u = sum_z(z) / p_.sigma;
        return -p_.R_l * y - (p_.mu - p_.R_l) * u + (p_.R_b - p_.R_l) * std::max(u - y, 0.0);
    }

    double lipschitz_y(std::size_t, std::span<const double>) const override {
        return std::max(std::abs(p_.R_l), std::abs(p_.R_b));
    }

    double lipschitz_z(std::size_t, std::span<const double>, std::size_t) const override {
        return std::max(std::abs(p_.mu - p_.R_l), std::abs(p_.mu - p_.R_b)) / p_.sigma;
    }

    // Ties y = sum(z)/sigma go to the borrowing branch.
    void tangent(std::size_t, std::span<const double>, double y, std::span<const double> z, double& r,
                 std::span<double> rho) const override {
        r = y > sum_z(z) / p_.sigma ? -p_.R_l : -p_.R_b;
        for (std::size_t d = 0; d < dim_; ++d) rho[d] = -(r + p_.mu) / p_.sigma;
    }

    std::optional<double> conjugate(std::size_t, std::span<const double>, double r,
                                     std::span<const double> rho) const override {
        constexpr double inf = std::numeric_limits<double>::infinity();
        const double tol = 1e-12;
        if (r < -p_.R_b - tol || r > -p_.R_l + tol) return inf;
        const double want = -(r + p_.mu) / p_.sigma;
        for (double v : rho)
            if (std::abs(v - want) > tol) return inf;
        return 0.0;
    }

    std::vector<double> candidate_r(std::size_t, std::span<const double>) const override { return {-p_.R_b, -p_.R_l}; }

    double conjugate_y(std::size_t, std::span<const double>, double r, std::span<const double> z) const override {
        const double tol = 1e-12;
        if (r < -p_.R_b - tol || r > -p_.R_l + tol)
            throw std::domain_error("funding: r outside [-R_b, -R_l]");
        return sum_z(z) / p_.sigma * (p_.mu + r);
    }

    std::optional<SemiGenericForm> semigeneric_form() const override {
        SemiGenericForm s;
        s.lin_y = -p_.R_l;
        s.lin_z.assign(dim_, -(p_.mu - p_.R_l) / p_.sigma);
        s.kink_y = 1.0;
        s.kink_z.assign(dim_, -1.0 / p_.sigma);
        s.kappa = p_.R_b - p_.R_l;
        return s;
    }

private:
    FundingParams p_;
    std::size_t dim_;
};

struct CreditParams {
    double R = 0.02;
    double delta = 0.0;
    double v_h = 54.0;
    double v_l = 90.0;
    double gamma_h = 0.2;
    double gamma_l = 0.02;
};

class CreditGenerator final : public Generator {
public:
    CreditGenerator(CreditParams p, std::size_t dim) : p_(p), dim_(dim) {
        if (!(p.v_h < p.v_l)) throw std::invalid_argument("credit: need v_h < v_l");
        if (!(p.gamma_h > p.gamma_l)) throw std::invalid_argument("credit: need gamma_h > gamma_l");
        if (!(p.delta >= 0.0 && p.delta < 1.0)) throw std::invalid_argument("credit: delta must lie in [0, 1)");
        slope_ = (p.gamma_h - p.gamma_l) / (p.v_l - p.v_h);
    }

    const CreditParams& params() const { return p_; }
    std::string name() const override { return "credit"; }
    std::size_t dim() const override { return dim_; }
    Shape shape() const override { return Shape::general; }
    bool depends_on_z() const override { return false; }

    double intensity(double y) const {
        if (y <= p_.v_h) return p_.gamma_h;
        if (y >= p_.v_l) return p_.gamma_l;
        return p_.gamma_h - slope_ * (y - p_.v_h);
    }

    double eval(std::size_t, std::span<const double>, double y, std::span<const double>) const override {
        return -(1.0 - p_.delta) * intensity(y) * y - p_.R * y;
    }

    // Derivative in y; at the thresholds the middle branch is used.
    double derivative(double y) const {
        if (y < p_.v_h) return -(1.0 - p_.delta) * p_.gamma_h - p_.R;
        if (y > p_.v_l) return -(1.0 - p_.delta) * p_.gamma_l - p_.R;
        return -(1.0 - p_.delta) * (intensity(y) - slope_ * y) - p_.R;
    }

    double lipschitz_y(std::size_t, std::span<const double>) const override {
        // slopes are piecewise linear in y, so extremes sit at branch ends
        const double cands[] = {derivative(p_.v_h - 1.0), derivative(p_.v_h), derivative(p_.v_l),
                                derivative(p_.v_l + 1.0)};
        double a = 0.0;
        for (double c : cands) a = std::max(a, std::abs(c));
        return a;
    }

    double lipschitz_z(std::size_t, std::span<const double>, std::size_t) const override { return 0.0; }

    void tangent(std::size_t, std::span<const double>, double y, std::span<const double>, double& r,
                 std::span<double> rho) const override {
        r = derivative(y);
        std::fill(rho.begin(), rho.end(), 0.0);
    }

private:
    CreditParams p_;
    std::size_t dim_;
    double slope_;
};

// f(y, z) = a*y + b.z + c
class LinearGenerator final : public Generator {
public:
    LinearGenerator(double a, std::vector<double> b, double c = 0.0) : a_(a), b_(std::move(b)), c_(c) {
        if (b_.empty()) throw std::invalid_argument("linear: dimension must be >= 1");
    }

    std::string name() const override { return "linear"; }
    std::size_t dim() const override { return b_.size(); }
    Shape shape() const override { return Shape::affine; }
    bool depends_on_z() const override {
        return std::any_of(b_.begin(), b_.end(), [](double v) { return v != 0.0; });
    }

    double eval(std::size_t, std::span<const double>, double y, std::span<const double> z) const override {
        double s = a_ * y + c_;
        for (std::size_t d = 0; d < b_.size(); ++d) s += b_[d] * z[d];
        return s;
    }
    double lipschitz_y(std::size_t, std::span<const double>) const override { return std::abs(a_); }
    double lipschitz_z(std::size_t, std::span<const double>, std::size_t d) const override { return std::abs(b_[d]); }

    void tangent(std::size_t, std::span<const double>, double, std::span<const double>, double& r,
                 std::span<double> rho) const override {
        r = a_;
        std::copy(b_.begin(), b_.end(), rho.begin());
    }

    std::optional<double> conjugate(std::size_t, std::span<const double>, double r,
                                     std::span<const double> rho) const override {
        if (r != a_ || !std::equal(rho.begin(), rho.end(), b_.begin())) return std::numeric_limits<double>::infinity();
        return -c_;
    }
    std::vector<double> candidate_r(std::size_t, std::span<const double>) const override { return {a_}; }
    double conjugate_y(std::size_t, std::span<const double>, double r, std::span<const double> z) const override {
        if (r != a_) throw std::domain_error("linear: r outside the conjugate domain");
        double s = -c_;
        for (std::size_t d = 0; d < b_.size(); ++d) s -= b_[d] * z[d];
        return s;
    }

private:
    double a_;
    std::vector<double> b_;
    double c_;
};

inline GeneratorPtr make_zero_generator(std::size_t dim) {
    return std::make_shared<LinearGenerator>(0.0, std::vector<double>(dim, 0.0), 0.0);
}

// f(y, z) = -g(-y, -z): swaps convex and concave.
class MirroredGenerator final : public Generator {
public:
    explicit MirroredGenerator(GeneratorPtr g) : g_(std::move(g)) {}

    std::string name() const override { return "mirrored-" + g_->name(); }
    std::size_t dim() const override { return g_->dim(); }
    Shape shape() const override {
        switch (g_->shape()) {
            case Shape::convex: return Shape::concave;
            case Shape::concave: return Shape::convex;
            default: return g_->shape();
        }
    }
    bool depends_on_z() const override { return g_->depends_on_z(); }

    double eval(std::size_t i, std::span<const double> x, double y, std::span<const double> z) const override {
        double nz[64];
        for (std::size_t d = 0; d < z.size(); ++d) nz[d] = -z[d];
        return -g_->eval(i, x, -y, {nz, z.size()});
    }
    double lipschitz_y(std::size_t i, std::span<const double> x) const override { return g_->lipschitz_y(i, x); }
    double lipschitz_z(std::size_t i, std::span<const double> x, std::size_t d) const override {
        return g_->lipschitz_z(i, x, d);
    }
    void tangent(std::size_t i, std::span<const double> x, double y, std::span<const double> z, double& r,
                 std::span<double> rho) const override {
        double nz[64];
        for (std::size_t d = 0; d < z.size(); ++d) nz[d] = -z[d];
        g_->tangent(i, x, -y, {nz, z.size()}, r, rho);
    }

private:
    GeneratorPtr g_;
};

// Affine data (r, rho, conj) with r*y + rho.z - conj = f(y, z) at the touch
// point.
struct Linearization {
    double r = 0.0;
    std::vector<double> rho;
    double conj = 0.0;
};

inline Linearization local_linearization(const Generator& g, std::size_t i, std::span<const double> x, double y,
                                         std::span<const double> z) {
    Linearization l;
    l.rho.assign(g.dim(), 0.0);
    g.tangent(i, x, y, z, l.r, l.rho);
    double dot = 0.0;
    for (std::size_t d = 0; d < l.rho.size(); ++d) dot += l.rho[d] * z[d];
    l.conj = l.r * y + dot - g.eval(i, x, y, z);
    return l;
}

// Subgradient controls of a convex driver; conj = f^#(r, rho).
inline Linearization subgradient(const Generator& g, std::size_t i, std::span<const double> x, double y,
                                 std::span<const double> z) {
    if (!is_convex(g.shape())) throw std::invalid_argument("subgradient: generator " + g.name() + " is not convex");
    Linearization l = local_linearization(g, i, x, y, z);
    if (auto c = g.conjugate(i, x, l.r, l.rho)) l.conj = *c;
    return l;
}

// Controls for a concave driver in the mirrored parametrization
// f(y, z) = -r*y - rho.z + (-f)^#(r, rho) at the touch point; conj = (-f)^#.
inline Linearization concave_controls(const Generator& g, std::size_t i, std::span<const double> x, double y,
                                      std::span<const double> z) {
    if (!is_concave(g.shape())) throw std::invalid_argument("concave_controls: generator " + g.name() + " is not concave");
    Linearization l;
    l.rho.assign(g.dim(), 0.0);
    g.tangent(i, x, y, z, l.r, l.rho);
    l.r = -l.r;
    double dot = 0.0;
    for (std::size_t d = 0; d < l.rho.size(); ++d) {
        l.rho[d] = -l.rho[d];
        dot += l.rho[d] * z[d];
    }
    l.conj = g.eval(i, x, y, z) + l.r * y + dot;
    return l;
}

struct PicardResult {
    double value = 0.0;
    int iterations = 0;
    double last_step = 0.0;
};

inline constexpr double kPicardTolerance = 1e-12;
inline constexpr int kPicardCap = 50;

// Iterates y <- T(y) from `start`. Optional trace receives |y_{k+1} - y_k|.
template <class Map>
PicardResult picard_solve(Map&& T, double start, std::vector<double>* trace = nullptr) {
    double y = start;
    for (int k = 1; k <= kPicardCap; ++k) {
        const double next = T(y);
        const double step = std::abs(next - y);
        if (trace) trace->push_back(step);
        y = next;
        if (!std::isfinite(y)) break;
        if (step <= kPicardTolerance || step <= 8.0 * std::numeric_limits<double>::epsilon() * std::abs(y))
            return {y, k, step};
    }
    std::ostringstream msg;
    msg << "Picard iteration did not converge within " << kPicardCap << " sweeps (last value " << y << ")";
    throw InvariantViolation(msg.str());
}

enum class EnvelopeKind { generic, semigeneric, exact, custom };

// h^up (convex majorant of increments) or h^low (concave minorant) for a
// driver f. Evaluated as h(i, x, ytil, ztil; y, z).
class Envelope {
public:
    using Fn = std::function<double(std::size_t, std::span<const double>, double, std::span<const double>, double,
                                    std::span<const double>)>;

    static Envelope generic(GeneratorPtr g, bool up) { return Envelope(EnvelopeKind::generic, std::move(g), up, {}); }

    static Envelope semigeneric(GeneratorPtr g, bool up) {
        if (!g->semigeneric_form())
            throw std::invalid_argument("semigeneric envelope: generator " + g->name() + " has no semi-linear form");
        return Envelope(EnvelopeKind::semigeneric, std::move(g), up, {});
    }

    // h(y, z) = f(ytil - y, ztil - z) - f(ytil, ztil): tight, valid as h^up for
    // convex f and as h^low for concave f.
    static Envelope exact(GeneratorPtr g, bool up) { return Envelope(EnvelopeKind::exact, std::move(g), up, {}); }

    static Envelope custom(GeneratorPtr g, bool up, Fn fn) {
        return Envelope(EnvelopeKind::custom, std::move(g), up, std::move(fn));
    }

    EnvelopeKind kind() const { return kind_; }
    bool is_up() const { return up_; }
    const Generator& generator() const { return *g_; }

    double operator()(std::size_t i, std::span<const double> x, double yt, std::span<const double> zt, double y,
                      std::span<const double> z) const {
        const std::size_t D = g_->dim();
        switch (kind_) {
            case EnvelopeKind::generic: {
                double s = g_->lipschitz_y(i, x) * std::abs(y);
                for (std::size_t d = 0; d < D; ++d) s += g_->lipschitz_z(i, x, d) * std::abs(z[d]);
                return up_ ? s : -s;
            }
            case EnvelopeKind::semigeneric: {
                double lin = form_.lin_y * y;
                double arg = form_.kink_y * y;
                for (std::size_t d = 0; d < D; ++d) {
                    lin += form_.lin_z[d] * z[d];
                    arg += form_.kink_z[d] * z[d];
                }
                return up_ ? -lin + form_.kappa * std::max(arg, 0.0) : -lin - form_.kappa * std::max(-arg, 0.0);
            }
            case EnvelopeKind::exact: {
                double dz[64];
                for (std::size_t d = 0; d < D; ++d) dz[d] = zt[d] - z[d];
                return g_->eval(i, x, yt - y, {dz, D}) - g_->eval(i, x, yt, zt);
            }
            default: return fn_(i, x, yt, zt, y, z);
        }
    }

    struct Audit {
        std::size_t probes = 0;
        double worst_normalization = 0.0;
        double worst_domination = 0.0;  // positive means violated
        double worst_lipschitz = 0.0;
        double worst_convexity = 0.0;
        bool ok(double tol) const {
            return worst_normalization <= tol && worst_domination <= tol && worst_lipschitz <= tol &&
                   worst_convexity <= tol;
        }
    };

    // Randomized check of normalization, domination, Lipschitz and
    // convexity (concavity for h^low). Values are scaled by magnitude.
    Audit audit(std::size_t probes, std::uint64_t seed, std::span<const double> x = {}, std::size_t step = 0,
                double scale = 150.0) const {
        const std::size_t D = g_->dim();
        std::mt19937_64 eng(seed);
        std::uniform_real_distribution<double> U(-scale, scale);
        Audit a;
        a.probes = probes;
        std::vector<double> zt(D), z1(D), z2(D), zm(D), zv(D);
        const double ay = g_->lipschitz_y(step, x);
        for (std::size_t k = 0; k < probes; ++k) {
            const double yt = U(eng), y1 = U(eng), y2 = U(eng);
            for (std::size_t d = 0; d < D; ++d) {
                zt[d] = U(eng) / 4.0;
                z1[d] = U(eng) / 4.0;
                z2[d] = U(eng) / 4.0;
            }
            const double fyt = g_->eval(step, x, yt, zt);
            const double mag = 1.0 + std::abs(fyt) + std::abs(yt) + std::abs(y1) + std::abs(y2);

            std::vector<double> zero(D, 0.0);
            a.worst_normalization =
                std::max(a.worst_normalization, std::abs((*this)(step, x, yt, zt, 0.0, zero)) / mag);

            // domination at (y1, z1)
            for (std::size_t d = 0; d < D; ++d) zv[d] = zt[d] - z1[d];
            const double h = (*this)(step, x, yt, zt, yt - y1, zv);
            const double df = g_->eval(step, x, y1, z1) - fyt;
            a.worst_domination = std::max(a.worst_domination, (up_ ? df - h : h - df) / mag);

            // Lipschitz between two arguments
            const double h1 = (*this)(step, x, yt, zt, y1, z1);
            const double h2 = (*this)(step, x, yt, zt, y2, z2);
            double bound = ay * std::abs(y1 - y2);
            for (std::size_t d = 0; d < D; ++d) bound += g_->lipschitz_z(step, x, d) * std::abs(z1[d] - z2[d]);
            a.worst_lipschitz = std::max(a.worst_lipschitz, (std::abs(h1 - h2) - bound) / mag);

            // midpoint convexity (concavity)
            for (std::size_t d = 0; d < D; ++d) zm[d] = 0.5 * (z1[d] + z2[d]);
            const double hm = (*this)(step, x, yt, zt, 0.5 * (y1 + y2), zm);
            const double gap = up_ ? hm - 0.5 * (h1 + h2) : 0.5 * (h1 + h2) - hm;
            a.worst_convexity = std::max(a.worst_convexity, gap / mag);
        }
        return a;
    }

    void validate(std::size_t probes = 10000, double tol = 1e-12) const {
        std::vector<double> x(g_->dim(), 100.0);
        const Audit a = audit(probes, 0x5eedULL, x);
        if (!a.ok(tol)) {
            std::ostringstream msg;
            msg << (up_ ? "h^up" : "h^low") << " envelope failed validation for " << g_->name()
                << ": normalization " << a.worst_normalization << ", domination " << a.worst_domination
                << ", lipschitz " << a.worst_lipschitz << ", convexity " << a.worst_convexity;
            throw std::invalid_argument(msg.str());
        }
    }

private:
    Envelope(EnvelopeKind k, GeneratorPtr g, bool up, Fn fn) : kind_(k), g_(std::move(g)), up_(up), fn_(std::move(fn)) {
        if (g_->dim() > 64) throw std::invalid_argument("envelope: dimension too large");
        if (kind_ == EnvelopeKind::semigeneric) form_ = *g_->semigeneric_form();
    }

    EnvelopeKind kind_;
    GeneratorPtr g_;
    bool up_;
    Fn fn_;
    SemiGenericForm form_;
};

}  // namespace pdbsde
