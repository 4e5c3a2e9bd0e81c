// One PASS/FAIL line per acceptance criterion. `acceptance --criterion k`
// runs a single one; without arguments all eight run in order.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "../support/properties.hpp"
#include "pdbsde/experiment.hpp"
#include "pdbsde/oracle.hpp"

using namespace pdbsde;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string summary;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fixed(double v, int prec = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

std::string sci(double v) {
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << v;
    return os.str();
}

// z-scores of a row against its reference target, combining both errors
struct Agreement {
    double z_low = 0.0, z_up = 0.0;
    bool within(double k) const { return std::abs(z_low) <= k && std::abs(z_up) <= k; }
};

Agreement agree(const VariantResult& v, const Target& t) {
    return {(v.low_stats.mean - t.low) / combined_se(v.low_stats.se, t.se_low),
            (v.up_stats.mean - t.up) / combined_se(v.up_stats.se, t.se_up)};
}

std::string row_text(const VariantResult& v) {
    return fixed(v.low_stats.mean) + " (" + fixed(v.low_stats.se) + ") / " + fixed(v.up_stats.mean) + " (" +
           fixed(v.up_stats.se) + ")";
}

double rel_gap(const VariantResult& v) { return (v.up_stats.mean - v.low_stats.mean) / v.low_stats.mean; }

const VariantResult& find_variant(const ExperimentResult& r, Flavor f, std::size_t lambda_in, InnerMode m) {
    for (const auto& v : r.variants)
        if (v.flavor == f && v.lambda_in == lambda_in && v.inner == m) return v;
    throw std::runtime_error("variant not found");
}

std::vector<fs::path> fixture_files() {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(PDBSDE_FIXTURES))
        if (e.path().extension() == ".json") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

// 1: pathwise identities with exact inputs on the fixture trees
Outcome oracle_exactness() {
    const auto t0 = Clock::now();
    std::size_t count = 0, funding = 0, credit = 0;
    double worst = 0.0;
    std::vector<std::string> bad;
    for (const auto& path : fixture_files()) {
        const auto f = load_fixture(path.string());
        const auto rep = verify_pathwise_optimality(f.tree, f.generator, *f.payoff, 1e-10, f.name);
        ++count;
        const std::string kind = f.generator_spec.value("kind", "");
        funding += kind == "funding" || kind == "mirrored";
        credit += kind == "credit";
        for (double w : {rep.up_convex, rep.low_convex_expectation, rep.up_envelope, rep.low_envelope, rep.up_concave,
                         rep.low_concave})
            worst = std::max(worst, w);
        const bool up_checked = rep.up_convex >= 0.0 || rep.up_concave >= 0.0;
        const bool low_checked = rep.low_convex_expectation >= 0.0 || rep.low_concave >= 0.0;
        const bool env_checked = rep.up_envelope >= 0.0 && rep.low_envelope >= 0.0;
        if (!rep.ok()) bad.push_back(f.name + ": " + rep.failures.front());
        else if (!(up_checked || env_checked) || !(low_checked || env_checked))
            bad.push_back(f.name + ": identities not exercised");
        if (f.tree.n > 4) bad.push_back(f.name + ": tree deeper than 4 steps");
        if (!f.golden_y0 || std::abs(rep.y0 - *f.golden_y0) > 1e-10) bad.push_back(f.name + ": golden Y0 mismatch");
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = bad.empty() && count >= 5 && funding > 0 && credit > 0 && secs < 1.0;
    o.summary = std::to_string(count) + " fixtures (" + std::to_string(funding) + " funding, " +
                std::to_string(credit) + " credit), worst deviation " + sci(worst) + ", " +
                fixed(secs, 3) + " s to verify";
    if (!bad.empty()) o.summary += "; " + bad.front();
    return o;
}

// 2: table 1, martingale basis with seven functions, n = 40
Outcome table1_reproduction() {
    const auto c = presets::by_name("table1-mb7-n40");
    const auto r = run_experiment(c);
    const auto& v = r.variants.front();
    const auto a = agree(v, *c.target);
    const double gap = rel_gap(v);
    Outcome o;
    o.pass = a.within(3.0) && gap <= 0.005;
    o.summary = row_text(v) + ", z = " + fixed(a.z_low, 2) + " / " + fixed(a.z_up, 2) + ", gap " + fixed(100 * gap, 3) +
                "%";
    return o;
}

// 3: inner control variates against plain inner means
Outcome figure1_claims() {
    const auto r = run_experiment(presets::figure1());
    const auto& p100 = find_variant(r, Flavor::convex, 100, InnerMode::plain);
    const auto& c100 = find_variant(r, Flavor::convex, 100, InnerMode::cv);
    const auto& p1000 = find_variant(r, Flavor::convex, 1000, InnerMode::plain);
    const double gp = rel_gap(p100), gc = rel_gap(c100), gp1000 = rel_gap(p1000);
    Outcome o;
    o.pass = gp > 0.02 && gc < 0.005 && gp1000 < gp;
    o.summary = "gap at lambda_in 100: plain " + fixed(100 * gp, 2) + "%, cv " + fixed(100 * gc, 3) +
                "%; plain at 1000: " + fixed(100 * gp1000, 2) + "%";
    return o;
}

// 4: table 2, credit driver with three recovery rates at n = 40
Outcome table2_reproduction() {
    std::vector<ExperimentConfig> cs;
    for (const char* k : {"delta0", "delta1_3", "delta2_3"}) cs.push_back(presets::by_name(std::string("table2-") + k + "-n40"));
    const auto rs = run_group(cs);
    const double expected_alpha[3] = {0.41, 0.27, 0.12};
    Outcome o{true, ""};
    for (std::size_t k = 0; k < rs.size(); ++k) {
        const auto& v = rs[k].variants.front();
        const auto a = agree(v, *cs[k].target);
        const double alpha = round_to(rs[k].lipschitz_y, 2);
        o.pass = o.pass && a.within(3.0) && alpha == expected_alpha[k];
        o.summary += (k ? "; " : "") + cs[k].name + " " + row_text(v) + " z " + fixed(a.z_low, 2) + "/" +
                     fixed(a.z_up, 2) + " alpha0 " + fixed(alpha, 2);
    }
    return o;
}

// 5: generic against semi-generic envelopes. n = 40 runs at full size; the
// finer grids use 200 outer and 200 inner samples.
Outcome table3_ordering() {
    Outcome o{true, ""};
    for (std::size_t n : presets::kSteps) {
        auto c = presets::by_name("table3-semigeneric-n" + std::to_string(n));
        c.flavors = {Flavor::generic, Flavor::semigeneric};
        if (n != 40) {
            c.lambda_out = 200;
            c.lambda_in = {200};
        }
        const auto r = run_experiment(c);
        const auto L = c.lambda_in.front();
        const auto& g = find_variant(r, Flavor::generic, L, InnerMode::cv);
        const auto& s = find_variant(r, Flavor::semigeneric, L, InnerMode::cv);
        const bool wider = g.low_stats.mean < s.low_stats.mean && g.up_stats.mean > s.up_stats.mean;
        o.pass = o.pass && wider;
        o.summary += (n == 40 ? "" : "; ") + std::string("n") + std::to_string(n) + " generic [" +
                     fixed(g.low_stats.mean) + ", " + fixed(g.up_stats.mean) + "] semi [" + fixed(s.low_stats.mean) + ", " +
                     fixed(s.up_stats.mean) + "]";
        if (n == 40) {
            const auto a = agree(s, *c.target);
            o.pass = o.pass && a.within(3.0);
            o.summary += " z " + fixed(a.z_low, 2) + "/" + fixed(a.z_up, 2);
        }
    }
    return o;
}

// 6: coverage of the 95% interval on a tree with known Y0
Outcome ci_coverage() {
    const auto f = load_fixture((fs::path(PDBSDE_FIXTURES) / "funding_bermudan_1d_n4.json").string());
    const double y0 = solve_dp_exact(f.tree, *f.generator, *f.payoff).y0();
    const std::size_t runs = 200;
    std::size_t hits = 0;
    double width = 0.0;
    for (std::size_t k = 0; k < runs; ++k) {
        TreeMonteCarlo cfg;
        cfg.outer = 500;
        cfg.inner = 20;
        cfg.seed = 1000 + k;
        const auto b = tree_monte_carlo(f.tree, f.generator, *f.payoff, cfg);
        const auto ci = ci95(b.low, b.up);
        hits += ci.covers(y0);
        width += (ci.hi - ci.lo) / static_cast<double>(runs);
    }
    const double cover = static_cast<double>(hits) / static_cast<double>(runs);
    return {cover >= 0.93, f.name + ": " + std::to_string(hits) + "/" + std::to_string(runs) + " intervals cover Y0 = " +
                               fixed(y0, 6) + ", mean width " + fixed(width, 4)};
}

// 7: randomized property suites
Outcome property_suites() {
    Outcome o{true, ""};
    for (const auto& r : testing::all_properties(10000)) {
        o.pass = o.pass && r.ok() && r.probes >= 10000;
        std::ostringstream w;
        w << std::setprecision(2) << r.worst;
        o.summary += (o.summary.empty() ? "" : "; ") + r.name + " " + w.str() + (r.ok() ? "" : " FAILED at " + r.detail);
    }
    return o;
}

// 8: identical output whatever the thread count
Outcome determinism() {
    auto funding = presets::by_name("table1-mb7-n40");
    funding.name = "determinism-funding";
    funding.lambda_out = 300;
    funding.lambda_in = {20, 50};
    funding.flavors = {Flavor::convex, Flavor::generic, Flavor::semigeneric};
    funding.inner_modes = {InnerMode::plain, InnerMode::cv};
    funding.target.reset();
    auto credit = presets::by_name("table2-delta1_3-n40");
    credit.name = "determinism-credit";
    credit.lambda_reg = 3000;
    credit.lambda_out = 200;
    credit.lambda_in = {30};
    credit.target.reset();

    auto render = [](ExperimentConfig c, std::size_t threads) {
        c.threads = threads;
        const auto r = run_experiment(c);
        auto j = result_json(r);
        j.erase("timing");
        std::ostringstream os;
        os << j.dump() << '\n' << to_json(r.approx).dump() << '\n';
        write_path_samples(os, r);
        return os.str();
    };
    Outcome o{true, ""};
    for (const auto& c : {funding, credit}) {
        const auto ref = render(c, 1);
        std::string counts;
        for (std::size_t t : {2, 3, 7}) {
            const bool same = render(c, t) == ref;
            o.pass = o.pass && same;
            if (!same) counts += " differs at " + std::to_string(t) + " threads";
        }
        o.summary += (o.summary.empty() ? "" : "; ") + c.name + " " + std::to_string(ref.size()) + " bytes" +
                     (counts.empty() ? " identical at 1/2/3/7 threads" : counts);
    }
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    int only = 0;
    app.add_option("--criterion", only, "run a single criterion (1-8)")->check(CLI::Range(1, 8));
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<const char*, std::function<Outcome()>>> all = {
        {"oracle exactness", oracle_exactness},   {"table 1 mb7 n40", table1_reproduction},
        {"figure 1 gaps", figure1_claims},        {"table 2 credit n40", table2_reproduction},
        {"table 3 ordering", table3_ordering},    {"ci coverage", ci_coverage},
        {"property suites", property_suites},     {"determinism", determinism}};
    bool ok = true;
    for (std::size_t k = 0; k < all.size(); ++k) {
        if (only && static_cast<std::size_t>(only) != k + 1) continue;
        Outcome o;
        const auto t0 = Clock::now();
        try {
            o = all[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::cout << "criterion " << k + 1 << " " << (o.pass ? "PASS" : "FAIL") << " [" << all[k].first << "] "
                  << o.summary << " (" << fixed(seconds_since(t0), 1) << " s)" << std::endl;
        ok = ok && o.pass;
    }
    return ok ? 0 : 1;
}
