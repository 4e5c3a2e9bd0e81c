#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "pdbsde/payoff.hpp"
#include "pdbsde/sim_model.hpp"

namespace pdbsde {

struct QuadratureRule {
    std::vector<double> nodes;  // on [-1, 1]
    std::vector<double> weights;
};

inline QuadratureRule gauss_legendre(std::size_t n) {
    if (n == 0) throw std::invalid_argument("gauss_legendre: need at least one node");
    QuadratureRule q;
    q.nodes.resize(n);
    q.weights.resize(n);
    for (std::size_t k = 0; k < (n + 1) / 2; ++k) {
        double x = std::cos(std::numbers::pi * (static_cast<double>(k) + 0.75) / (static_cast<double>(n) + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (std::size_t j = 1; j <= n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p2) / static_cast<double>(j);
            }
            dp = static_cast<double>(n) * (x * p0 - p1) / (x * x - 1.0);
            const double dx = p0 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        q.nodes[k] = -x;
        q.nodes[n - 1 - k] = x;
        q.weights[k] = q.weights[n - 1 - k] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return q;
}

inline constexpr double kTailWidth = 8.5;

// Conditional moments of the extremes of D iid lognormal assets, integrated
// in log-price space over a window of +-kTailWidth standard deviations.
class LognormalExtremes {
public:
    explicit LognormalExtremes(std::size_t nodes = 21) : rule_(gauss_legendre(nodes)) {}

    std::size_t nodes() const { return rule_.nodes.size(); }

    // E[(max_d X^d - K)_+] with X^d = x_d exp((mu - sigma^2/2) tau + sigma W_tau).
    // If x_delta is non-empty it receives x_d * d/dx_d of the same quantity.
    double max_call(std::span<const double> x, double tau, double K, double mu, double sigma,
                    std::span<double> x_delta = {}) const {
        if (tau < 0.0) throw std::invalid_argument("max_call: negative time to maturity");
        const std::size_t D = x.size();
        const double xmax = *std::max_element(x.begin(), x.end());
        if (tau == 0.0 || sigma == 0.0) {
            const double g = std::exp(mu * tau);
            double m = 0.0;
            std::size_t arg = 0;
            for (std::size_t d = 0; d < D; ++d)
                if (x[d] * g > m) m = x[d] * g, arg = d;
            std::fill(x_delta.begin(), x_delta.end(), 0.0);
            if (!x_delta.empty() && m > K) x_delta[arg] = m;
            return std::max(m - K, 0.0);
        }
        const double nu = (mu - 0.5 * sigma * sigma) * tau;
        const double s = sigma * std::sqrt(tau);
        const double centre = std::log(xmax) + nu;
        const double vlo = centre - kTailWidth * s;
        const double vhi = centre + kTailWidth * s;
        const double lk = K > 0.0 ? std::log(K) : -std::numeric_limits<double>::infinity();
        std::fill(x_delta.begin(), x_delta.end(), 0.0);
        double total = 0.0;
        if (lk < vlo) total += std::exp(vlo) - K;
        const double a = std::max(lk, vlo);
        if (a >= vhi) return total;
        std::array<double, kMaxDim> lx{}, cdf{}, hs{};
        for (std::size_t d = 0; d < D; ++d) lx[d] = std::log(x[d]) + nu;
        const double half = 0.5 * (vhi - a), mid = 0.5 * (vhi + a);
        const double inv_s = 1.0 / s;
        for (std::size_t k = 0; k < rule_.nodes.size(); ++k) {
            const double v = mid + half * rule_.nodes[k];
            const double w = half * rule_.weights[k] * std::exp(v);
            double prod = 1.0;
            for (std::size_t d = 0; d < D; ++d) {
                hs[d] = (v - lx[d]) * inv_s;
                cdf[d] = normal_cdf(hs[d]);
                prod *= cdf[d];
            }
            total += w * (1.0 - prod);
            if (!x_delta.empty()) add_density_terms(D, hs, cdf, w * inv_s, x_delta);
        }
        return total;
    }

    // E[min_d X^d], same conventions.
    double min_asset(std::span<const double> x, double tau, double mu, double sigma,
                     std::span<double> x_delta = {}) const {
        if (tau < 0.0) throw std::invalid_argument("min_asset: negative time to maturity");
        const std::size_t D = x.size();
        if (tau == 0.0 || sigma == 0.0) {
            const double g = std::exp(mu * tau);
            std::size_t arg = static_cast<std::size_t>(std::min_element(x.begin(), x.end()) - x.begin());
            std::fill(x_delta.begin(), x_delta.end(), 0.0);
            if (!x_delta.empty()) x_delta[arg] = x[arg] * g;
            return x[arg] * g;
        }
        const double xmin = *std::min_element(x.begin(), x.end());
        const double nu = (mu - 0.5 * sigma * sigma) * tau;
        const double s = sigma * std::sqrt(tau);
        const double centre = std::log(xmin) + nu;
        const double vlo = centre - kTailWidth * s;
        const double vhi = centre + kTailWidth * s;
        std::fill(x_delta.begin(), x_delta.end(), 0.0);
        double total = std::exp(vlo);
        std::array<double, kMaxDim> lx{}, surv{}, hs{};
        for (std::size_t d = 0; d < D; ++d) lx[d] = std::log(x[d]) + nu;
        const double half = 0.5 * (vhi - vlo), mid = 0.5 * (vhi + vlo);
        const double inv_s = 1.0 / s;
        for (std::size_t k = 0; k < rule_.nodes.size(); ++k) {
            const double v = mid + half * rule_.nodes[k];
            const double w = half * rule_.weights[k] * std::exp(v);
            double prod = 1.0;
            for (std::size_t d = 0; d < D; ++d) {
                hs[d] = (v - lx[d]) * inv_s;
                surv[d] = normal_cdf(-hs[d]);
                prod *= surv[d];
            }
            total += w * prod;
            if (!x_delta.empty()) add_density_terms(D, hs, surv, w * inv_s, x_delta);
        }
        return total;
    }

private:
    // out[d] += scale * phi(h_d) * prod_{e != d} c_e, by prefix and suffix products
    static void add_density_terms(std::size_t D, const std::array<double, kMaxDim>& h,
                                  const std::array<double, kMaxDim>& c, double scale, std::span<double> out) {
        std::array<double, kMaxDim + 1> pre{};
        pre[0] = 1.0;
        for (std::size_t d = 0; d < D; ++d) pre[d + 1] = pre[d] * c[d];
        double suf = 1.0;
        for (std::size_t d = D; d-- > 0;) {
            const double others = pre[d] * suf;
            if (others != 0.0 && std::abs(h[d]) < 40.0) out[d] += scale * normal_pdf(h[d]) * others;
            suf *= c[d];
        }
    }

    QuadratureRule rule_;
};

// Optimal quadratic quantizer of N(0, 1) by Lloyd iterations: centroids
// and cell probabilities.
struct Quantizer {
    std::vector<double> points;
    std::vector<double> probs;
};

inline Quantizer normal_quantizer(std::size_t n) {
    if (n < 2) throw std::invalid_argument("normal_quantizer: need at least two points");
    Quantizer q;
    q.points.resize(n);
    q.probs.resize(n);
    for (std::size_t k = 0; k < n; ++k) q.points[k] = -3.0 + 6.0 * static_cast<double>(k) / static_cast<double>(n - 1);
    const double inf = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 20000; ++it) {
        double moved = 0.0;
        double lo = -inf;
        for (std::size_t k = 0; k < n; ++k) {
            const double hi = k + 1 < n ? 0.5 * (q.points[k] + q.points[k + 1]) : inf;
            const double mass = normal_cdf(hi) - normal_cdf(lo);
            const double phi_lo = std::isinf(lo) ? 0.0 : normal_pdf(lo), phi_hi = std::isinf(hi) ? 0.0 : normal_pdf(hi);
            const double c = (phi_lo - phi_hi) / mass;
            moved = std::max(moved, std::abs(c - q.points[k]));
            q.points[k] = c;
            q.probs[k] = mass;
            lo = hi;
        }
        if (moved < 1e-15) break;
    }
    return q;
}

// Same quantities as LognormalExtremes, written as a one-dimensional normal
// expectation per asset and evaluated on a quantizer: for iid Gaussian logs,
//   E[(max X - K)_+] = sum_d E[(X_d - K)_+ prod_{e != d} Phi((l_d - l_e)/s + W)].
// The kink at the strike is not resolved, which biases the basis slightly.
class QuantizedExtremes {
public:
    explicit QuantizedExtremes(std::size_t points = 21) : q_(normal_quantizer(points)) {}

    std::size_t nodes() const { return q_.points.size(); }

    double max_call(std::span<const double> x, double tau, double K, double mu, double sigma,
                    std::span<double> x_delta = {}) const {
        if (tau == 0.0 || sigma == 0.0) return LognormalExtremes(2).max_call(x, tau, K, mu, sigma, x_delta);
        return expect(x, tau, mu, sigma, x_delta, false, [K](double v, double& dv) {
            dv = v > K ? v : 0.0;
            return std::max(v - K, 0.0);
        });
    }

    double min_asset(std::span<const double> x, double tau, double mu, double sigma,
                     std::span<double> x_delta = {}) const {
        if (tau == 0.0 || sigma == 0.0) return LognormalExtremes(2).min_asset(x, tau, mu, sigma, x_delta);
        return expect(x, tau, mu, sigma, x_delta, true, [](double v, double& dv) {
            dv = v;
            return v;
        });
    }

    // E[g(extreme)] for the maximum (or the minimum if lower). g(v, dv)
    // returns the payoff at price v and sets dv = v g'(v); a zero payoff with
    // zero slope skips the node.
    template <class G>
    double expect(std::span<const double> x, double tau, double mu, double sigma, std::span<double> x_delta,
                  bool lower, G&& g) const {
        const std::size_t D = x.size();
        const double nu = (mu - 0.5 * sigma * sigma) * tau;
        const double s = sigma * std::sqrt(tau);
        const double inv_s = 1.0 / s;
        std::array<double, kMaxDim> lx{};
        for (std::size_t d = 0; d < D; ++d) lx[d] = std::log(x[d]) + nu;
        std::fill(x_delta.begin(), x_delta.end(), 0.0);
        const double sgn = lower ? -1.0 : 1.0;
        double total = 0.0;
        std::array<double, kMaxDim> c{}, hs{};
        std::array<double, kMaxDim + 1> pre{};
        for (std::size_t k = 0; k < q_.points.size(); ++k) {
            const double w = q_.points[k], p = q_.probs[k];
            for (std::size_t d = 0; d < D; ++d) {
                const double v = std::exp(lx[d] + s * w);
                double dv = 0.0;
                const double pay = g(v, dv);
                if (pay == 0.0 && dv == 0.0) continue;
                pre[0] = 1.0;
                for (std::size_t e = 0; e < D; ++e) {
                    if (e == d) {
                        c[e] = 1.0;
                    } else {
                        hs[e] = sgn * ((lx[d] - lx[e]) * inv_s + w);
                        c[e] = normal_cdf(hs[e]);
                    }
                    pre[e + 1] = pre[e] * c[e];
                }
                const double prod = pre[D];
                total += p * pay * prod;
                if (x_delta.empty()) continue;
                x_delta[d] += p * dv * prod;
                if (pay == 0.0) continue;
                double suf = 1.0;
                for (std::size_t e = D; e-- > 0;) {
                    if (e != d) {
                        const double others = pre[e] * suf;
                        if (others != 0.0 && std::abs(hs[e]) < 40.0) {
                            const double t = p * pay * normal_pdf(hs[e]) * sgn * inv_s * others;
                            x_delta[d] += t;
                            x_delta[e] -= t;
                        }
                    }
                    suf *= c[e];
                }
            }
        }
        return total;
    }

private:
    Quantizer q_;
};

enum class Integration { quadrature, quantization };

inline const char* integration_name(Integration m) { return m == Integration::quadrature ? "quadrature" : "quantization"; }

inline Integration parse_integration(const std::string& s) {
    if (s == "quadrature") return Integration::quadrature;
    if (s == "quantization") return Integration::quantization;
    throw std::invalid_argument("unknown integration '" + s + "'");
}

// Discounted max-call value e^{-rate tau} E[(max X_tau - K)_+] under drift = rate.
inline double maxcall_price(std::span<const double> x, double tau, double K, double rate, double sigma,
                            std::size_t nodes = 21) {
    return std::exp(-rate * tau) * LognormalExtremes(nodes).max_call(x, tau, K, rate, sigma);
}

// x_d * d price / d x_d for the discounted max-call.
inline double maxcall_delta(std::span<const double> x, double tau, double K, double rate, double sigma,
                            std::size_t d, std::size_t nodes = 21) {
    if (!(tau > 0.0)) throw std::invalid_argument("maxcall_delta: needs positive time to maturity");
    if (d >= x.size()) throw std::out_of_range("maxcall_delta: asset index");
    std::array<double, kMaxDim> dl{};
    LognormalExtremes(nodes).max_call(x, tau, K, rate, sigma, std::span<double>(dl.data(), x.size()));
    return std::exp(-rate * tau) * dl[d];
}

// Conditional expectation E[G(X_j) | X_i = x] of the (undiscounted) payoff
// and its deltas x_d d/dx_d, under the simulation drift.
class PayoffPricer {
public:
    PayoffPricer(const Payoff& payoff, const GbmModel& model, std::size_t nodes = 21,
                 Integration how = Integration::quadrature)
        : payoff_(payoff), model_(model), how_(how) {
        if (payoff.kind() == PayoffKind::custom) throw std::invalid_argument("no closed form for a custom payoff");
        if (how == Integration::quadrature) gl_.emplace(nodes);
        else qz_.emplace(nodes);
    }

    std::size_t nodes() const { return gl_ ? gl_->nodes() : qz_->nodes(); }
    Integration integration() const { return how_; }

    double value(std::span<const double> x, double tau, std::span<double> x_delta = {}) const {
        return gl_ ? value_with(*gl_, x, tau, x_delta) : value_with(*qz_, x, tau, x_delta);
    }

private:
    template <class E>
    double value_with(const E& ext, std::span<const double> x, double tau, std::span<double> x_delta) const {
        const double mu = model_.mu, sg = model_.sigma;
        if (payoff_.kind() == PayoffKind::min_asset) return ext.min_asset(x, tau, mu, sg, x_delta);
        if constexpr (std::is_same_v<E, QuantizedExtremes>) {
            // both strikes share the per-node distribution terms
            if (tau > 0.0 && sg > 0.0) {
                const double K1 = payoff_.K1(), K2 = payoff_.K2();
                return ext.expect(x, tau, mu, sg, x_delta, false, [K1, K2](double v, double& dv) {
                    dv = (v > K1 ? v : 0.0) - (v > K2 ? 2.0 * v : 0.0);
                    return std::max(v - K1, 0.0) - 2.0 * std::max(v - K2, 0.0);
                });
            }
        }
        if (x_delta.empty())
            return ext.max_call(x, tau, payoff_.K1(), mu, sg) - 2.0 * ext.max_call(x, tau, payoff_.K2(), mu, sg);
        std::array<double, kMaxDim> d2{};
        const double c1 = ext.max_call(x, tau, payoff_.K1(), mu, sg, x_delta);
        const double c2 = ext.max_call(x, tau, payoff_.K2(), mu, sg, std::span<double>(d2.data(), x.size()));
        for (std::size_t d = 0; d < x.size(); ++d) x_delta[d] -= 2.0 * d2[d];
        return c1 - 2.0 * c2;
    }

    Payoff payoff_;
    GbmModel model_;
    Integration how_;
    std::optional<LognormalExtremes> gl_;
    std::optional<QuantizedExtremes> qz_;
};

enum class BasisPreset { eu2, eu7, bermudan6, constant };

inline BasisPreset parse_basis_preset(const std::string& s) {
    if (s == "eu2") return BasisPreset::eu2;
    if (s == "eu7") return BasisPreset::eu7;
    if (s == "bermudan6") return BasisPreset::bermudan6;
    if (s == "constant") return BasisPreset::constant;
    throw std::invalid_argument("unknown basis preset '" + s + "'");
}

inline const char* basis_preset_name(BasisPreset p) {
    switch (p) {
        case BasisPreset::eu2: return "eu2";
        case BasisPreset::eu7: return "eu7";
        case BasisPreset::bermudan6: return "bermudan6";
        default: return "constant";
    }
}

enum class ElementKind { constant, price, coordinate, max_price };

// y-basis element. `date` is the payoff date of a price element; in the
// z-basis a price element stands for its delta and a coordinate for x_d.
struct BasisElement {
    ElementKind kind = ElementKind::constant;
    std::size_t date = 0;
};

struct MbConditional {
    double mean = 0.0;              // E_i[b_{i+1}(X_{i+1})]
    std::vector<double> beta_mean;  // E_i[beta_{d,i+1} b_{i+1}(X_{i+1})]
};

class Basis {
public:
    Basis(BasisPreset preset, const Payoff& payoff, const TimeGrid& grid, const GbmModel& model,
          std::size_t nodes = 21, Integration how = Integration::quadrature)
        : preset_(preset), grid_(grid), model_(model), dim_(model.dim()) {
        if (preset != BasisPreset::constant) pricer_.emplace_back(payoff, model, nodes, how);
        const auto dates = payoff.exercise().dates();
        y_.resize(grid.n + 1);
        z_.resize(grid.n + 1);
        for (std::size_t i = 0; i <= grid.n; ++i) {
            auto& y = y_[i];
            auto& z = z_[i];
            y.push_back({ElementKind::constant, 0});
            switch (preset) {
                case BasisPreset::constant: break;
                case BasisPreset::eu2:
                case BasisPreset::eu7:
                    if (dates.size() != 1) throw std::invalid_argument("European basis preset needs a European payoff");
                    y.push_back({ElementKind::price, grid.n});
                    if (i < grid.n) z.push_back({ElementKind::price, grid.n});
                    if (preset == BasisPreset::eu7) {
                        y.push_back({ElementKind::coordinate, 0});
                        z.push_back({ElementKind::coordinate, 0});
                    }
                    break;
                case BasisPreset::bermudan6: {
                    std::size_t live = 0;
                    for (auto j : dates)
                        if (j >= i) {
                            y.push_back({ElementKind::price, j});
                            ++live;
                            if (j > i) z.push_back({ElementKind::price, j});
                        }
                    if (live >= 2) y.push_back({ElementKind::max_price, 0});
                    break;
                }
            }
        }
    }

    BasisPreset preset() const { return preset_; }
    std::size_t dim() const { return dim_; }
    std::size_t steps() const { return grid_.n; }

    // A coordinate element in y_elements expands to D entries.
    const std::vector<BasisElement>& y_elements(std::size_t i) const { return y_[i]; }
    const std::vector<BasisElement>& z_elements(std::size_t i) const { return z_[i]; }

    std::size_t y_size(std::size_t i) const { return expanded(y_[i], dim_); }
    // per dimension d
    std::size_t z_size(std::size_t i) const { return expanded(z_[i], 1); }

    bool supports_martingale_basis() const {
        for (const auto& el : y_)
            for (const auto& e : el)
                if (e.kind == ElementKind::max_price) return false;
        return true;
    }

    // Fills y-basis values (y_size) and, if z is non-empty, the z-basis laid
    // out as D rows of z_size(i).
    void evaluate(std::size_t i, std::span<const double> x, std::span<double> y, std::span<double> z) const {
        const std::size_t kz = z_size(i);
        std::array<double, kMaxDim> delta{};
        std::size_t yk = 0, zk = 0;
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& e : y_[i]) {
            switch (e.kind) {
                case ElementKind::constant: y[yk++] = 1.0; break;
                case ElementKind::coordinate:
                    for (std::size_t d = 0; d < dim_; ++d) y[yk++] = x[d];
                    break;
                case ElementKind::price: {
                    const double tau = grid_.times[e.date] - grid_.times[i];
                    const bool with_delta = !z.empty() && e.date > i;
                    const double v =
                        pricer_[0].value(x, tau, with_delta ? std::span<double>(delta.data(), dim_) : std::span<double>());
                    y[yk++] = v;
                    best = std::max(best, v);
                    if (with_delta) {
                        for (std::size_t d = 0; d < dim_; ++d) z[d * kz + zk] = delta[d];
                        ++zk;
                    }
                    break;
                }
                case ElementKind::max_price: y[yk++] = best; break;
            }
        }
        if (!z.empty())
            for (const auto& e : z_[i])
                if (e.kind == ElementKind::coordinate) {
                    for (std::size_t d = 0; d < dim_; ++d) z[d * kz + zk] = x[d];
                    ++zk;
                }
    }

    // Values of E_i[b_{i+1}] and E_i[beta_{d,i+1} b_{i+1}] for each y-basis
    // element at step i+1, from Gaussian integration by parts for untruncated
    // increments.
    std::vector<MbConditional> mb_conditional(std::size_t i, std::span<const double> x) const {
        if (i >= grid_.n) throw std::out_of_range("mb_conditional: step out of range");
        const double dt = grid_.deltas[i];
        const double growth = std::exp(model_.mu * dt);
        std::vector<MbConditional> out;
        std::array<double, kMaxDim> delta{};
        for (const auto& e : y_[i + 1]) {
            switch (e.kind) {
                case ElementKind::constant: out.push_back({1.0, std::vector<double>(dim_, 0.0)}); break;
                case ElementKind::coordinate:
                    for (std::size_t k = 0; k < dim_; ++k) {
                        MbConditional c{x[k] * growth, std::vector<double>(dim_, 0.0)};
                        c.beta_mean[k] = model_.sigma * x[k] * growth;
                        out.push_back(std::move(c));
                    }
                    break;
                case ElementKind::price: {
                    const double tau = grid_.times[e.date] - grid_.times[i];
                    MbConditional c;
                    c.mean = pricer_[0].value(x, tau, std::span<double>(delta.data(), dim_));
                    c.beta_mean.resize(dim_);
                    for (std::size_t d = 0; d < dim_; ++d) c.beta_mean[d] = model_.sigma * delta[d];
                    out.push_back(std::move(c));
                    break;
                }
                case ElementKind::max_price:
                    throw std::invalid_argument("mb_conditional: max-of-prices element has no closed form");
            }
        }
        return out;
    }

    // Coefficient maps for the martingale-basis fit: if ytil_{i+1} = a . b_{i+1}
    // then E_i[ytil_{i+1}] = (q * a) . b_i and E_i[beta_d ytil_{i+1}] is row
    // block d of (z * a) against the z_d-basis at i.
    struct Transfer {
        Eigen::MatrixXd q;  // y_size(i) x y_size(i+1)
        Eigen::MatrixXd z;  // D*z_size(i) x y_size(i+1)
    };

    Transfer mb_transfer(std::size_t i) const {
        if (i >= grid_.n) throw std::out_of_range("mb_transfer: step out of range");
        const double growth = std::exp(model_.mu * grid_.deltas[i]);
        const std::size_t kz = z_size(i);
        Transfer t{Eigen::MatrixXd::Zero(y_size(i), y_size(i + 1)), Eigen::MatrixXd::Zero(dim_ * kz, y_size(i + 1))};
        auto find = [&](const std::vector<BasisElement>& els, const BasisElement& e, std::size_t width) -> std::size_t {
            std::size_t off = 0;
            for (const auto& f : els) {
                if (f.kind == e.kind && (f.kind != ElementKind::price || f.date == e.date)) return off;
                off += f.kind == ElementKind::coordinate ? width : 1;
            }
            throw std::invalid_argument("mb_transfer: basis element has no counterpart at the previous step");
        };
        std::size_t col = 0;
        for (const auto& e : y_[i + 1]) {
            switch (e.kind) {
                case ElementKind::constant: t.q(find(y_[i], e, dim_), col++) = 1.0; break;
                case ElementKind::price: {
                    t.q(find(y_[i], e, dim_), col) = 1.0;
                    const std::size_t zr = find(z_[i], e, 1);
                    for (std::size_t d = 0; d < dim_; ++d) t.z(d * kz + zr, col) = model_.sigma;
                    ++col;
                    break;
                }
                case ElementKind::coordinate: {
                    const std::size_t yr = find(y_[i], e, dim_);
                    const std::size_t zr = find(z_[i], e, 1);
                    for (std::size_t k = 0; k < dim_; ++k) {
                        t.q(yr + k, col + k) = growth;
                        t.z(k * kz + zr, col + k) = model_.sigma * growth;
                    }
                    col += dim_;
                    break;
                }
                case ElementKind::max_price:
                    throw std::invalid_argument("mb_transfer: max-of-prices element has no closed form");
            }
        }
        return t;
    }

private:
    static std::size_t expanded(const std::vector<BasisElement>& els, std::size_t coord_width) {
        std::size_t k = 0;
        for (const auto& e : els) k += e.kind == ElementKind::coordinate ? coord_width : 1;
        return k;
    }

    BasisPreset preset_;
    TimeGrid grid_;
    GbmModel model_;
    std::size_t dim_;
    std::vector<PayoffPricer> pricer_;
    std::vector<std::vector<BasisElement>> y_, z_;
};

}  // namespace pdbsde
