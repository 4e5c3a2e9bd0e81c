#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "pdbsde/confidence.hpp"

using namespace pdbsde;

TEST(Confidence, SummaryOfSmallSample) {
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    const auto s = summarize(v);
    EXPECT_EQ(s.count, 4u);
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_NEAR(s.variance, 5.0 / 3.0, 1e-15);
    EXPECT_NEAR(s.se, std::sqrt(5.0 / 12.0), 1e-15);
}

TEST(Confidence, ConstantSamplesGiveDegenerateInterval) {
    const std::vector<double> low(10, 1.0), up(10, 2.0);
    const auto ci = ci95(low, up);
    EXPECT_DOUBLE_EQ(ci.lo, 1.0);
    EXPECT_DOUBLE_EQ(ci.hi, 2.0);
    EXPECT_EQ(ci.lambda_out, 10u);
    EXPECT_TRUE(ci.covers(1.5));
    EXPECT_FALSE(ci.covers(2.5));
}

TEST(Confidence, EndpointsUseOneNinetySixStandardErrors) {
    const std::vector<double> low{0.0, 2.0}, up{10.0, 14.0};
    // se = sd / sqrt(2): sd_low = sqrt(2), sd_up = sqrt(8)
    const auto ci = ci95(low, up, 100);
    EXPECT_NEAR(ci.lo, 1.0 - 1.96 * 1.0, 1e-14);
    EXPECT_NEAR(ci.hi, 12.0 + 1.96 * 2.0, 1e-14);
    EXPECT_EQ(ci.lambda_in, 100u);
}

TEST(Confidence, RejectsTooFewSamples) {
    const std::vector<double> one{1.0};
    EXPECT_THROW(summarize(one), std::invalid_argument);
}

TEST(Confidence, CoverageOfKnownMeanIsNearNominal) {
    // two independent samples of one law: each end misses with probability
    // 2.5%, so coverage sits near 95%
    std::mt19937_64 eng(3);
    std::normal_distribution<double> n(5.0, 2.0);
    int hits = 0;
    const int runs = 2000;
    for (int r = 0; r < runs; ++r) {
        std::vector<double> a(50), b(50);
        for (auto& v : a) v = n(eng);
        for (auto& v : b) v = n(eng);
        hits += ci95(a, b).covers(5.0);
    }
    EXPECT_GE(hits, static_cast<int>(0.93 * runs));
}
