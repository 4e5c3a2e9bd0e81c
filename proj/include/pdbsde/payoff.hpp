#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdbsde/sim_model.hpp"

namespace pdbsde {

// Obstacle value: a real number or minus infinity, never a float sentinel.
class Barrier {
public:
    static Barrier minus_infinity() { return Barrier(); }
    static Barrier of(double v) { return Barrier(v); }

    bool finite() const { return finite_; }
    bool is_minus_infinity() const { return !finite_; }
    double value() const {
        if (!finite_) throw std::logic_error("Barrier: value of minus infinity requested");
        return v_;
    }
    // max(barrier, y)
    double reflect(double y) const { return finite_ ? std::max(v_, y) : y; }
    bool dominates(double y) const { return finite_ && v_ >= y; }

    friend bool operator==(const Barrier& a, const Barrier& b) {
        return a.finite_ == b.finite_ && (!a.finite_ || a.v_ == b.v_);
    }

private:
    Barrier() = default;
    explicit Barrier(double v) : finite_(true), v_(v) {}
    bool finite_ = false;
    double v_ = 0.0;
};

class ExerciseSet {
public:
    ExerciseSet() = default;
    ExerciseSet(std::size_t n, std::vector<std::size_t> dates) : flags_(n + 1, false) {
        for (auto d : dates) {
            if (d > n) throw std::invalid_argument("exercise date beyond horizon");
            flags_[d] = true;
        }
        flags_[n] = true;
    }

    bool contains(std::size_t i) const { return i < flags_.size() && flags_[i]; }
    std::size_t steps() const { return flags_.size() - 1; }
    std::vector<std::size_t> dates() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < flags_.size(); ++i)
            if (flags_[i]) out.push_back(i);
        return out;
    }

private:
    std::vector<bool> flags_;
};

inline ExerciseSet european_exercise_set(const TimeGrid& g) { return ExerciseSet(g.n, {g.n}); }

inline ExerciseSet bermudan_exercise_set(const TimeGrid& g) {
    if (g.n % 4 != 0) throw std::invalid_argument("Bermudan exercise needs n divisible by 4");
    const std::size_t q = g.n / 4;
    return ExerciseSet(g.n, {q, 2 * q, 3 * q, g.n});
}

enum class PayoffKind { call_spread_max, min_asset, custom };

class Payoff {
public:
    using Fn = std::function<double(std::size_t, std::span<const double>)>;

    static Payoff call_spread_max(double K1, double K2, ExerciseSet ex) {
        Payoff p(PayoffKind::call_spread_max, std::move(ex));
        p.K1_ = K1;
        p.K2_ = K2;
        return p;
    }
    static Payoff min_asset(std::size_t n) { return Payoff(PayoffKind::min_asset, ExerciseSet(n, {n})); }
    static Payoff custom(ExerciseSet ex, Fn g) {
        Payoff p(PayoffKind::custom, std::move(ex));
        p.fn_ = std::move(g);
        return p;
    }

    PayoffKind kind() const { return kind_; }
    const ExerciseSet& exercise() const { return ex_; }
    double K1() const { return K1_; }
    double K2() const { return K2_; }

    // G_i(x), defined whatever the exercise set says.
    double intrinsic(std::size_t i, std::span<const double> x) const {
        switch (kind_) {
            case PayoffKind::call_spread_max: {
                const double m = *std::max_element(x.begin(), x.end());
                return std::max(m - K1_, 0.0) - 2.0 * std::max(m - K2_, 0.0);
            }
            case PayoffKind::min_asset: return *std::min_element(x.begin(), x.end());
            default: return fn_(i, x);
        }
    }

    Barrier barrier(std::size_t i, std::span<const double> x) const {
        if (!ex_.contains(i)) return Barrier::minus_infinity();
        return Barrier::of(intrinsic(i, x));
    }

private:
    Payoff(PayoffKind k, ExerciseSet ex) : kind_(k), ex_(std::move(ex)) {}
    PayoffKind kind_;
    ExerciseSet ex_;
    double K1_ = 0.0, K2_ = 0.0;
    Fn fn_;
};

}  // namespace pdbsde
