#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <set>
#include <vector>

#include "../support/records.hpp"
#include "pdbsde/oracle.hpp"

using namespace pdbsde;

namespace {

std::vector<std::string> fixture_files() {
    std::vector<std::string> out;
    for (const auto& e : std::filesystem::directory_iterator(PDBSDE_FIXTURES))
        if (e.path().extension() == ".json") out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

GeneratorPtr funding(std::size_t D) { return std::make_shared<FundingGenerator>(FundingParams{}, D); }

// Backward induction written against the tree directly, each step solved
// by bisection rather than fixed-point iteration.
double reference_y0(const ExactTree& t, const Generator& g, const Payoff& p) {
    std::vector<double> next;
    for (const auto& x : t.states[t.n]) next.push_back(p.intrinsic(t.n, x));
    for (std::size_t i = t.n; i-- > 0;) {
        std::vector<double> cur(t.nodes(i));
        for (std::size_t k = 0; k < t.nodes(i); ++k) {
            double q = 0.0;
            std::vector<double> z(t.dim, 0.0);
            for (const auto& b : t.branches[i][k]) {
                q += b.prob * next[b.next];
                for (std::size_t d = 0; d < t.dim; ++d) z[d] += b.prob * b.beta[d] * next[b.next];
            }
            const auto& x = t.states[i][k];
            const double y = pdbsde::testing::bisect_fixed_point([&](double v) { return g.eval(i, x, v, z); }, q,
                                                                 t.deltas[i]);
            cur[k] = p.barrier(i, x).reflect(y);
        }
        next = std::move(cur);
    }
    return next[0];
}

}  // namespace

TEST(Oracle, FixturesCoverFundingAndCredit) {
    const auto files = fixture_files();
    ASSERT_GE(files.size(), 5u);
    std::set<std::string> kinds;
    for (const auto& f : files) {
        const auto fx = load_fixture(f);
        EXPECT_LE(fx.tree.n, 4u) << f;
        kinds.insert(fx.generator_spec.at("kind").get<std::string>());
        ASSERT_TRUE(fx.golden_y0.has_value()) << f;
    }
    EXPECT_TRUE(kinds.count("funding"));
    EXPECT_TRUE(kinds.count("credit"));
}

TEST(Oracle, FixturesPassPathwiseChecksAndGoldenValues) {
    for (const auto& f : fixture_files()) {
        const auto fx = load_fixture(f);
        const auto rep = verify_pathwise_optimality(fx.tree, fx.generator, *fx.payoff, 1e-10, fx.name);
        EXPECT_TRUE(rep.ok()) << fx.name << ": " << (rep.failures.empty() ? "" : rep.failures.front());
        EXPECT_NEAR(rep.y0, *fx.golden_y0, 1e-10 * std::max(1.0, std::abs(rep.y0))) << fx.name;
        EXPECT_NEAR(rep.y0, reference_y0(fx.tree, *fx.generator, *fx.payoff), 1e-8) << fx.name;
    }
}

TEST(Oracle, OneStepBinomialByHand) {
    TreeSpec s;
    s.n = 1;
    s.delta = 0.5;
    const auto t = lattice_tree(s);
    const LinearGenerator g(-0.04, {0.0});
    const auto pay = Payoff::call_spread_max(95.0, 115.0, european_exercise_set(t.grid()));
    const double drift = (0.05 - 0.02) * 0.5, sq = std::sqrt(0.5);
    const double up = 100.0 * std::exp(drift + 0.2 * sq), dn = 100.0 * std::exp(drift - 0.2 * sq);
    const double e = 0.5 * (pay.intrinsic(1, std::vector<double>{up}) + pay.intrinsic(1, std::vector<double>{dn}));
    const auto sol = solve_dp_exact(t, g, pay);
    EXPECT_NEAR(sol.y0(), e / (1.0 + 0.04 * 0.5), 1e-12);
    // Z = E[beta Y_1] with beta = +-1/sqrt(Delta)
    const double yu = pay.intrinsic(1, std::vector<double>{up}), yd = pay.intrinsic(1, std::vector<double>{dn});
    EXPECT_NEAR(sol.nodes[0][0].z[0], 0.5 * (yu - yd) / sq, 1e-12);
}

TEST(Oracle, LatticeMomentsAndValidation) {
    for (bool tri : {false, true}) {
        TreeSpec s;
        s.dim = 2;
        s.n = 2;
        s.trinomial = tri;
        const auto t = lattice_tree(s);
        EXPECT_NO_THROW(t.validate());
        double m1 = 0.0, m2 = 0.0, m4 = 0.0;
        for (const auto& b : t.branches[0][0]) {
            const double w = b.beta[0] * s.delta;  // dW
            m1 += b.prob * w;
            m2 += b.prob * w * w;
            m4 += b.prob * w * w * w * w;
        }
        EXPECT_NEAR(m1, 0.0, 1e-15);
        EXPECT_NEAR(m2, s.delta, 1e-15);
        if (tri) {
            EXPECT_NEAR(m4, 3.0 * s.delta * s.delta, 1e-14);  // trinomial matches the fourth moment
        }
        EXPECT_EQ(enumerate_paths(t).size(), tri ? 81u : 16u);
    }
    auto t = lattice_tree(TreeSpec{});
    t.branches[0][0][0].prob = 0.6;
    EXPECT_THROW(t.validate(), std::invalid_argument);
    // alpha_z |beta| Delta = 20 sqrt(0.01) > 1 unless the weights are capped
    TreeSpec fine;
    fine.delta = 0.01;
    const LinearGenerator steep(0.0, {20.0});
    EXPECT_THROW(lattice_tree(fine).check_weights(steep), std::invalid_argument);
    fine.beta_cap = tree_beta_cap(steep, fine.delta);
    EXPECT_NO_THROW(lattice_tree(fine).check_weights(steep));
}

TEST(Oracle, TreeJsonRoundTrip) {
    TreeSpec s;
    s.dim = 2;
    s.trinomial = true;
    const auto t = lattice_tree(s);
    const auto u = tree_from_json(json::parse(tree_to_json(t).dump()));
    EXPECT_EQ(u.states, t.states);
    ASSERT_EQ(u.branches.size(), t.branches.size());
    EXPECT_EQ(u.branches[1][4][2].next, t.branches[1][4][2].next);
    EXPECT_EQ(u.branches[1][4][2].beta, t.branches[1][4][2].beta);
}

TEST(Oracle, ErrorBoundConstants) {
    const std::vector<double> zero(4, 0.0), deltas(4, 0.25);
    const auto k0 = error_bound_constants(zero, deltas, 0, 4);
    EXPECT_DOUBLE_EQ(k0.C, 2.0);
    EXPECT_DOUBLE_EQ(k0.c, 1.0);
    const std::vector<double> a{0.4, 0.4, 0.4, 0.4};
    const auto k = error_bound_constants(a, deltas, 1, 2);
    EXPECT_NEAR(k.C, 1.0 + std::pow(0.9, -3) * 1.3, 1e-14);
    EXPECT_NEAR(k.c, std::pow(0.9, -2), 1e-14);
    const std::vector<double> bad{4.0, 0.0, 0.0, 0.0};
    EXPECT_THROW(error_bound_constants(bad, deltas, 0, 4), std::invalid_argument);
}

TEST(Oracle, ErrorBoundsHoldOnZeroWeightTrees) {
    for (bool berm : {false, true}) {
        TreeSpec s;
        s.n = 4;
        s.zero_beta = true;
        s.trinomial = true;
        const auto t = lattice_tree(s);
        const auto pay = Payoff::call_spread_max(95.0, 115.0, berm ? ExerciseSet(4, {1, 2, 3}) : european_exercise_set(t.grid()));
        const FundingGenerator g(FundingParams{}, 1);
        for (double eps : {0.0, 0.01, 0.1, 1.0, 5.0}) {
            Perturbation p{eps, eps, eps, 3};
            const auto chk = check_error_bounds(t, g, pay, p);
            EXPECT_TRUE(chk.holds()) << eps << " up " << chk.lhs_up << " <= " << chk.rhs_up << ", low " << chk.lhs_low
                                     << " <= " << chk.rhs_low;
            EXPECT_GE(chk.lhs_up, -1e-10);
            EXPECT_GE(chk.lhs_low, -1e-10);
        }
        EXPECT_THROW(check_error_bounds(lattice_tree(TreeSpec{}), g, pay, {}), std::invalid_argument);
    }
}

TEST(Oracle, TreeMonteCarloBracketsValue) {
    TreeSpec s;
    s.n = 3;
    s.trinomial = true;
    const auto gp = funding(1);
    s.beta_cap = tree_beta_cap(*gp, s.delta);
    const auto t = lattice_tree(s);
    const auto pay = Payoff::call_spread_max(95.0, 115.0, european_exercise_set(t.grid()));
    const double y0 = solve_dp_exact(t, *gp, pay).y0();
    TreeMonteCarlo cfg;
    cfg.outer = 4000;
    cfg.perturb = 0.05;
    const auto b = tree_monte_carlo(t, gp, pay, cfg);
    const auto ci = ci95(b.low, b.up);
    EXPECT_LE(ci.mean_low - 3.0 * ci.se_low, y0);
    EXPECT_GE(ci.mean_up + 3.0 * ci.se_up, y0);
    EXPECT_LE(ci.mean_low, ci.mean_up);
}

TEST(Oracle, FixtureSchemaErrors) {
    auto j = json::parse(R"({"name": "x", "tree": {"dim": 1, "deltas": [0.5], "states": [[[100]], [[110], [90]]],
        "branches": [[[{"p": 0.5, "next": 0, "beta": [1]}, {"p": 0.5, "next": 1, "beta": [-1]}]]]},
        "generator": {"kind": "funding", "R_l": 0.07}, "payoff": {"kind": "min_asset"}})");
    EXPECT_THROW(fixture_from_json(j), ConfigError);
    j["generator"] = {{"kind", "funding"}};
    EXPECT_NO_THROW(fixture_from_json(j));
    EXPECT_THROW(load_fixture("/nonexistent/fixture.json"), std::runtime_error);
}
