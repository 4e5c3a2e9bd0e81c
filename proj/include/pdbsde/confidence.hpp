#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>

namespace pdbsde {

struct SampleStats {
    std::size_t count = 0;
    double mean = 0.0;
    double variance = 0.0;  // unbiased
    double se = 0.0;
};

// Two-pass mean and unbiased variance, summed in index order.
inline SampleStats summarize(std::span<const double> v) {
    if (v.size() < 2) throw std::invalid_argument("summarize: need at least two samples");
    SampleStats s;
    s.count = v.size();
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.variance = ss / static_cast<double>(v.size() - 1);
    s.se = std::sqrt(s.variance / static_cast<double>(v.size()));
    return s;
}

inline constexpr double kZ95 = 1.96;

struct ConfidenceInterval {
    double lo = 0.0;
    double hi = 0.0;
    double mean_low = 0.0;
    double mean_up = 0.0;
    double se_low = 0.0;
    double se_up = 0.0;
    std::size_t lambda_out = 0;
    std::size_t lambda_in = 0;

    bool covers(double y) const { return lo <= y && y <= hi; }
};

inline ConfidenceInterval make_interval(const SampleStats& low, const SampleStats& up, std::size_t lambda_in = 0,
                                        double z = kZ95) {
    ConfidenceInterval ci;
    ci.mean_low = low.mean;
    ci.mean_up = up.mean;
    ci.se_low = low.se;
    ci.se_up = up.se;
    ci.lo = low.mean - z * low.se;
    ci.hi = up.mean + z * up.se;
    ci.lambda_out = low.count;
    ci.lambda_in = lambda_in;
    return ci;
}

inline ConfidenceInterval ci95(std::span<const double> low, std::span<const double> up, std::size_t lambda_in = 0,
                               double z = kZ95) {
    return make_interval(summarize(low), summarize(up), lambda_in, z);
}

}  // namespace pdbsde
