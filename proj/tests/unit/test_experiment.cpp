#include <gtest/gtest.h>

#include <sstream>
#include <string>

#include "pdbsde/experiment.hpp"

using namespace pdbsde;

namespace {

const char* kSmall = R"({
  "version": 1,
  "name": "small",
  "model": {"dim": 2},
  "grid": {"T": 0.25, "n": 4},
  "approximation": {"mode": "mb", "basis": "eu7", "lambda_reg": 300},
  "bounds": {"flavor": ["convex", "generic", "semigeneric"], "lambda_out": 300, "lambda_in": [20, 5],
             "inner_cv": "both"},
  "seed": 5
})";

std::string error_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

std::string summary(const std::vector<ExperimentResult>& rs) {
    std::ostringstream os;
    for (const auto& r : rs) write_summary_rows(os, r);
    return os.str();
}

}  // namespace

TEST(Config, MinimalConfigTakesDefaults) {
    const auto c = parse_config(R"({"version": 1})");
    EXPECT_EQ(c.mode, FitMode::lgw);
    EXPECT_EQ(c.inner_modes, std::vector<InnerMode>{InnerMode::cv});
    EXPECT_TRUE(c.lower_cv);
    EXPECT_EQ(c.dim, 5u);
    EXPECT_EQ(c.n, 40u);
    EXPECT_EQ(c.flavors, std::vector<Flavor>{Flavor::convex});
    EXPECT_EQ(c.integration, Integration::quadrature);
}

TEST(Config, RejectsBadValues) {
    EXPECT_NE(error_of(R"({"version": 1, "bounds": {"lambda_out": 0}})").find("/bounds/lambda_out"), std::string::npos);
    EXPECT_NE(error_of(R"({"version": 1, "grid": {"n": 42}, "payoff": {"exercise": "bermudan"},
                          "approximation": {"basis": "bermudan6"}})")
                  .find("divisible by 4"),
              std::string::npos);
    EXPECT_NE(error_of(R"({})").find("/version"), std::string::npos);
    EXPECT_NE(error_of(R"({"version": 2})").find("unsupported version"), std::string::npos);
    EXPECT_NE(error_of(R"({"version": 1, "colour": "red"})").find("/colour"), std::string::npos);
    EXPECT_NE(error_of(R"({"version": 1, "generator": {"kind": "credit"}, "payoff": {"kind": "min_asset"}})")
                  .find("does not fit"),
              std::string::npos);
    EXPECT_NE(error_of(R"({"version": 1, "payoff": {"exercise": "bermudan"}})").find("single exercise date"),
              std::string::npos);
    EXPECT_NE(error_of(R"({"version": 1, "payoff": {"exercise": "bermudan"},
                          "approximation": {"mode": "mb", "basis": "bermudan6"}})")
                  .find("/approximation/mode"),
              std::string::npos);
    EXPECT_NE(error_of(R"({"version": 1, "grid": {"T": 50, "n": 2}})").find("alpha0"), std::string::npos);
    EXPECT_NE(error_of("{\"version\": 1,\n \"seed\": }").find("not valid JSON"), std::string::npos);
    EXPECT_THROW(load_config("/nonexistent.json"), ConfigError);
}

TEST(Config, ErrorsPointAtLines) {
    const auto msg = error_of("{\n \"version\": 1,\n \"bounds\": {\n   \"lambda_in\": -3\n }\n}");
    EXPECT_NE(msg.find("/bounds/lambda_in (line 4)"), std::string::npos) << msg;
}

TEST(Config, ListsAreNormalized) {
    const auto c = parse_config(kSmall);
    EXPECT_EQ(c.lambda_in, (std::vector<std::size_t>{5, 20}));
    EXPECT_EQ(c.inner_modes.size(), 2u);
    EXPECT_EQ(c.flavors.size(), 3u);
    // the echo parses back to the same configuration
    json e = c.echo();
    const auto d = parse_config(e.dump());
    EXPECT_EQ(d.echo(), e);
}

TEST(Experiment, BoundsAreOrderedAndDeterministicAcrossThreads) {
    auto c = parse_config(kSmall);
    c.threads = 1;
    const auto a = run_experiment(c);
    c.threads = 3;
    const auto b = run_experiment(c);
    EXPECT_EQ(summary({a}), summary({b}));
    ASSERT_EQ(a.variants.size(), 3u * 2u * 2u);
    for (const auto& v : a.variants) {
        EXPECT_EQ(v.low.size(), 300u);
        EXPECT_LT(v.low_stats.mean, v.up_stats.mean + 3.0 * combined_se(v.low_stats.se, v.up_stats.se));
    }
    // with the same inputs, the generic envelope is never tighter than the semi-generic one
    for (std::size_t k = 0; k < a.variants.size(); ++k) {
        const auto& v = a.variants[k];
        if (v.flavor != Flavor::generic) continue;
        for (const auto& w : a.variants)
            if (w.flavor == Flavor::semigeneric && w.lambda_in == v.lambda_in && w.inner == v.inner) {
                EXPECT_GE(v.up_stats.mean, w.up_stats.mean - 1e-9);
                EXPECT_LE(v.low_stats.mean, w.low_stats.mean + 1e-9);
            }
    }
}

TEST(Experiment, GroupedRunsMatchSeparateRuns) {
    auto c1 = parse_config(kSmall);
    c1.flavors = {Flavor::convex};
    auto c2 = c1;
    c2.name = "other";
    c2.generator_spec = json{{"kind", "funding"}, {"R_b", 0.08}};
    const auto grouped = run_group({c1, c2});
    EXPECT_EQ(summary(grouped), summary({run_experiment(c1), run_experiment(c2)}));
    auto c3 = c1;
    c3.seed = 6;
    EXPECT_THROW(run_group({c1, c3}), std::invalid_argument);
}

TEST(Experiment, LoadedApproximationReproducesFit) {
    auto c = parse_config(kSmall);
    c.flavors = {Flavor::convex};
    const auto a = run_experiment(c);
    const auto path = std::filesystem::temp_directory_path() / "pdbsde_test_approx.json";
    {
        std::ofstream os(path);
        os << to_json(a.approx).dump();
    }
    auto c2 = c;
    c2.load = path.string();
    EXPECT_EQ(summary({run_experiment(c2)}), summary({a}));
    c2.n = 8;
    EXPECT_THROW(run_experiment(c2), ConfigError);
    std::filesystem::remove(path);
}

TEST(Experiment, ReportIsStableAndComplete) {
    auto c = parse_config(kSmall);
    c.flavors = {Flavor::convex};
    c.target = Target{10.0, 0.01, 10.1, 0.01};
    const auto r = run_experiment(c);
    auto j = result_json(r);
    EXPECT_EQ(j["format"], "pdbsde-report");
    EXPECT_EQ(j["rows"].size(), 4u);
    EXPECT_TRUE(j["rows"][0].contains("target_z"));
    j.erase("timing");
    auto j2 = result_json(run_experiment(c));
    j2.erase("timing");
    EXPECT_EQ(j.dump(), j2.dump());
    std::ostringstream ps;
    write_path_samples(ps, r);
    const std::string text = ps.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 4 * 300);
}

TEST(Presets, NamesResolveAndCarryTargets) {
    const auto names = presets::names();
    EXPECT_FALSE(names.empty());
    for (const auto& n : names) {
        const auto c = presets::by_name(n);
        EXPECT_EQ(c.name, n);
        SchemaErrors err;
        config_from_json(c.echo(), err);
        EXPECT_TRUE(err.empty()) << n << ": " << (err.empty() ? "" : err.errors()[0]);
    }
    const auto mb7 = presets::by_name("table1-mb7-n40");
    ASSERT_TRUE(mb7.target.has_value());
    EXPECT_EQ(mb7.lambda_out, 10000u);
    EXPECT_EQ(mb7.mode, FitMode::mb);
    EXPECT_THROW(presets::by_name("table9"), ConfigError);
}
