// Regenerates the oracle fixtures: small exact trees with golden Y0 from
// backward induction. Usage: make_fixtures <dir>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "pdbsde/oracle.hpp"

using namespace pdbsde;

namespace {

void write(const std::filesystem::path& dir, const std::string& name, TreeSpec spec, const json& gen_spec,
           const json& pay_spec) {
    SchemaErrors err;
    auto gen = generator_from_json(gen_spec, "/generator", spec.dim, spec.mu, spec.sigma, err);
    err.throw_if_any();
    spec.beta_cap = tree_beta_cap(*gen, spec.delta);
    const auto tree = lattice_tree(spec);
    auto pay = payoff_from_json(pay_spec, "/payoff", tree.grid(), err);
    err.throw_if_any();
    const auto sol = solve_dp_exact(tree, *gen, *pay);
    json j{{"name", name}, {"tree", tree_to_json(tree)}, {"generator", gen_spec}, {"payoff", pay_spec},
           {"golden", {{"Y0", sol.y0()}}}};
    std::ofstream os(dir / (name + ".json"));
    os << std::setprecision(17) << j.dump(1) << '\n';
    std::cout << name << "  Y0 = " << std::setprecision(12) << sol.y0() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: make_fixtures <dir>\n";
        return 1;
    }
    const std::filesystem::path dir(argv[1]);
    std::filesystem::create_directories(dir);
    const json funding{{"kind", "funding"}, {"R_l", 0.01}, {"R_b", 0.06}};
    const json spread{{"kind", "call_spread_max"}, {"K1", 95.0}, {"K2", 115.0}};

    TreeSpec s;
    write(dir, "funding_binomial_1d_n2", s, funding, spread);

    s = {};
    s.dim = 2;
    s.trinomial = true;
    write(dir, "funding_trinomial_2d_n2", s, funding,
          {{"kind", "call_spread_max"}, {"K1", 95.0}, {"K2", 115.0}, {"exercise", {1, 2}}});

    s = {};
    s.n = 4;
    s.delta = 0.0625;
    write(dir, "funding_bermudan_1d_n4", s, funding,
          {{"kind", "call_spread_max"}, {"K1", 95.0}, {"K2", 115.0}, {"exercise", "bermudan"}});

    s = {};
    s.n = 4;
    s.x0 = 75.0;
    s.mu = 0.02;
    s.sigma = 0.4;
    s.trinomial = true;
    write(dir, "credit_trinomial_1d_n4", s, {{"kind", "credit"}, {"delta", 0.0}}, {{"kind", "min_asset"}});

    s = {};
    s.dim = 2;
    s.n = 3;
    s.delta = 1.0 / 3.0;
    s.x0 = 75.0;
    s.mu = 0.02;
    s.sigma = 0.4;
    write(dir, "credit_binomial_2d_n3", s, {{"kind", "credit"}, {"delta", 2.0 / 3.0}}, {{"kind", "min_asset"}});

    s = {};
    s.n = 3;
    write(dir, "linear_binomial_1d_n3", s, {{"kind", "linear"}, {"a", -0.05}, {"b", 0.1}, {"c", 0.5}}, spread);

    s = {};
    write(dir, "mirrored_funding_1d_n2", s, {{"kind", "mirrored"}, {"of", funding}}, spread);
    return 0;
}
