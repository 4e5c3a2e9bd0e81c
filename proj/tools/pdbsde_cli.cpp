// Command-line front end: fit, bounds, ci, oracle-check and the table runs.
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pdbsde/experiment.hpp"
#include "pdbsde/oracle.hpp"

namespace fs = std::filesystem;
using namespace pdbsde;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> presets;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::optional<std::size_t> lambda_out;
    std::string out = ".";
};

void add_common(CLI::App* sub, Common& c, bool with_preset) {
    sub->add_option("--config", c.config, "experiment configuration (JSON)");
    if (with_preset) sub->add_option("--preset", c.presets, "named preset; repeatable");
    sub->add_option("--seed", c.seed, "override the seed");
    sub->add_option("--threads", c.threads, "worker threads (default: PDBSDE_THREADS or all cores)");
    sub->add_option("--lambda-out", c.lambda_out, "override the outer sample size");
    sub->add_option("--out", c.out, "output directory")->capture_default_str();
}

void apply_overrides(ExperimentConfig& cfg, const Common& c) {
    if (c.seed) cfg.seed = *c.seed;
    if (c.threads) cfg.threads = *c.threads;
    if (c.lambda_out) {
        if (*c.lambda_out < 2) throw ConfigError("--lambda-out must be >= 2");
        cfg.lambda_out = *c.lambda_out;
    }
}

std::vector<ExperimentConfig> resolve(const Common& c) {
    std::vector<ExperimentConfig> out;
    if (!c.config.empty()) out.push_back(load_config(c.config));
    for (const auto& p : c.presets) out.push_back(presets::by_name(p));
    if (out.empty()) throw ConfigError("give --config or --preset");
    for (auto& cfg : out) apply_overrides(cfg, c);
    return out;
}

fs::path ensure_dir(const std::string& d) {
    fs::path p(d);
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << text;
}

void print_rows(const ExperimentResult& r) {
    for (const auto& v : r.variants) {
        std::cout << r.config.name << "  " << flavor_name(v.flavor) << "  lambda_in=" << v.lambda_in << " "
                  << inner_mode_name(v.inner) << "  " << table_cell(v) << "  CI [" << fmt(v.ci.lo) << ", "
                  << fmt(v.ci.hi) << "]";
        if (r.config.target) {
            const auto k = compare_to_target(v, *r.config.target);
            std::cout << "  target " << fmt(r.config.target->low) << " / " << fmt(r.config.target->up) << "  z "
                      << fmt(k.z_low, 2) << " / " << fmt(k.z_up, 2);
        }
        std::cout << '\n';
    }
    for (const auto& w : r.approx.warnings) std::cout << "  warning: " << w << '\n';
}

// Writes <stem>.csv (summary), <stem>.json (sidecar) and optionally the
// per-path samples.
void emit(const std::vector<ExperimentResult>& results, const fs::path& dir, const std::string& stem, bool samples) {
    std::ostringstream csv;
    write_summary_header(csv);
    json side = json::array();
    for (const auto& r : results) {
        write_summary_rows(csv, r);
        side.push_back(result_json(r));
        print_rows(r);
    }
    write_file(dir / (stem + ".csv"), csv.str());
    write_file(dir / (stem + ".json"), side.dump(2) + "\n");
    if (samples) {
        std::ostringstream ps;
        bool first = true;
        for (const auto& r : results) {
            write_path_samples(ps, r, first);
            first = false;
        }
        write_file(dir / (stem + "_paths.csv"), ps.str());
    }
}

// Runs configs, grouping those that can share simulation.
std::vector<ExperimentResult> run_all(const std::vector<ExperimentConfig>& cfgs) {
    std::vector<std::vector<ExperimentConfig>> groups;
    for (const auto& c : cfgs) {
        bool placed = false;
        for (auto& g : groups) {
            {
                const auto& a = g.front();
                if (a.n == c.n && a.dim == c.dim && a.T == c.T && a.x0 == c.x0 && a.mu == c.mu && a.sigma == c.sigma &&
                    a.payoff_spec == c.payoff_spec && a.basis == c.basis && a.nodes == c.nodes &&
                    a.integration == c.integration && a.seed == c.seed && a.lambda_out == c.lambda_out &&
                    a.lambda_in == c.lambda_in && a.inner_modes == c.inner_modes && a.lower_cv == c.lower_cv &&
                    a.truncation == c.truncation && a.threads == c.threads) {
                    g.push_back(c);
                    placed = true;
                    break;
                }
            }
        }
        if (!placed) groups.push_back({c});
    }
    std::vector<ExperimentResult> out;
    for (const auto& g : groups) {
        auto rs = run_group(g);
        out.insert(out.end(), rs.begin(), rs.end());
    }
    // report in request order
    std::vector<ExperimentResult> ordered;
    for (const auto& c : cfgs)
        for (const auto& r : out)
            if (r.config.name == c.name) {
                ordered.push_back(r);
                break;
            }
    return ordered;
}

std::vector<ExperimentConfig> table_presets(const std::string& table, const std::vector<std::string>& pick,
                                            const std::vector<std::size_t>& steps) {
    std::vector<ExperimentConfig> out;
    const std::string prefix = table + "-";
    for (const auto& name : presets::names()) {
        if (name.rfind(prefix, 0) != 0) continue;
        const auto c = presets::by_name(name);
        if (!steps.empty() && std::find(steps.begin(), steps.end(), c.n) == steps.end()) continue;
        if (!pick.empty() && std::find(pick.begin(), pick.end(), name) == pick.end()) continue;
        out.push_back(c);
    }
    if (out.empty()) throw ConfigError("no " + table + " preset matches the selection");
    return out;
}

struct SampleRow {
    std::vector<double> low, up;
};

int cmd_ci(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    std::string line;
    std::getline(in, line);
    if (line != "preset,flavor,lambda_in,inner,path,low,up") throw ConfigError(path + ": not a per-path sample file");
    std::map<std::string, SampleRow> rows;
    std::vector<std::string> order;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 7) throw ConfigError(path + " (line " + std::to_string(lineno) + "): expected 7 fields");
        const std::string key = f[0] + "," + f[1] + "," + f[2] + "," + f[3];
        if (!rows.count(key)) order.push_back(key);
        rows[key].low.push_back(std::stod(f[5]));
        rows[key].up.push_back(std::stod(f[6]));
    }
    std::cout << "preset,flavor,lambda_in,inner,low,se_low,up,se_up,ci_lo,ci_hi\n" << std::setprecision(17);
    for (const auto& k : order) {
        const auto& r = rows[k];
        const auto ci = ci95(r.low, r.up);
        std::cout << k << ',' << ci.mean_low << ',' << ci.se_low << ',' << ci.mean_up << ',' << ci.se_up << ','
                  << ci.lo << ',' << ci.hi << '\n';
    }
    return 0;
}

int cmd_oracle(const std::vector<std::string>& inputs, double tol) {
    std::vector<std::string> files;
    for (const auto& p : inputs) {
        if (fs::is_directory(p)) {
            std::vector<std::string> here;
            for (const auto& e : fs::directory_iterator(p))
                if (e.path().extension() == ".json") here.push_back(e.path().string());
            std::sort(here.begin(), here.end());
            files.insert(files.end(), here.begin(), here.end());
        } else {
            files.push_back(p);
        }
    }
    if (files.empty()) throw ConfigError("no fixture files given");
    bool ok = true;
    for (const auto& f : files) {
        const auto fx = load_fixture(f);
        const auto rep = verify_pathwise_optimality(fx.tree, fx.generator, *fx.payoff, tol, fx.name);
        bool golden_ok = true;
        if (fx.golden_y0) golden_ok = std::abs(*fx.golden_y0 - rep.y0) <= tol * std::max(1.0, std::abs(rep.y0));
        std::cout << (rep.ok() && golden_ok ? "PASS " : "FAIL ") << fx.name << "  Y0=" << std::setprecision(12)
                  << rep.y0 << "  paths=" << rep.paths << '\n';
        for (const auto& msg : rep.failures) std::cout << "  " << msg << '\n';
        if (!golden_ok) std::cout << "  golden Y0 " << *fx.golden_y0 << " differs\n";
        ok = ok && rep.ok() && golden_ok;
    }
    return ok ? 0 : 2;
}

void emit_figure1(const ExperimentResult& r, const fs::path& dir) {
    std::ostringstream csv;
    csv << "lambda_in,plain_up,plain_up_se,cv_up,cv_up_se,low,low_se,cv_low,cv_low_se,plain_gap,cv_gap\n";
    csv << std::setprecision(10);
    std::map<std::size_t, std::pair<const VariantResult*, const VariantResult*>> by;
    for (const auto& v : r.variants) (v.inner == InnerMode::plain ? by[v.lambda_in].first : by[v.lambda_in].second) = &v;
    for (const auto& [L, pv] : by) {
        const auto* p = pv.first;
        const auto* c = pv.second;
        if (!p || !c) continue;
        const double pg = (p->up_stats.mean - p->low_stats.mean) / p->low_stats.mean;
        const double cg = (c->up_stats.mean - c->low_stats.mean) / c->low_stats.mean;
        csv << L << ',' << p->up_stats.mean << ',' << p->up_stats.se << ',' << c->up_stats.mean << ','
            << c->up_stats.se << ',' << p->low_stats.mean << ',' << p->low_stats.se << ',' << c->low_stats.mean << ','
            << c->low_stats.se << ',' << pg << ',' << cg << '\n';
    }
    write_file(dir / "figure1.csv", csv.str());
    std::cout << csv.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Primal-dual bounds for reflected BSDEs"};
    app.require_subcommand(1);

    Common fit_o, bounds_o, t1, t2, t3, f1;
    auto* fit = app.add_subcommand("fit", "fit the input approximation and write it as JSON");
    add_common(fit, fit_o, true);
    auto* bounds = app.add_subcommand("bounds", "fit (or load) and compute lower and upper bounds");
    add_common(bounds, bounds_o, true);
    bool keep_samples = false;
    bounds->add_flag("--samples", keep_samples, "also write per-path samples");

    std::string sample_file;
    auto* ci = app.add_subcommand("ci", "confidence intervals from a per-path sample file");
    ci->add_option("--samples", sample_file, "file written by 'bounds --samples'")->required();

    std::vector<std::string> fixtures;
    double tol = 1e-10;
    auto* oracle = app.add_subcommand("oracle-check", "verify pathwise identities on exact trees");
    oracle->add_option("--fixtures", fixtures, "fixture files or directories")->required();
    oracle->add_option("--tol", tol, "absolute tolerance")->capture_default_str();

    std::vector<std::size_t> steps;
    auto* table1 = app.add_subcommand("table1", "funding: European and Bermudan call spread on the maximum");
    add_common(table1, t1, true);
    table1->add_option("--n", steps, "restrict to these step counts");
    auto* table2 = app.add_subcommand("table2", "credit: minimum of five assets, three recovery rates");
    add_common(table2, t2, true);
    table2->add_option("--n", steps, "restrict to these step counts");
    auto* table3 = app.add_subcommand("table3", "funding: fully generic against semi-generic envelopes");
    add_common(table3, t3, true);
    table3->add_option("--n", steps, "restrict to these step counts");
    auto* figure1 = app.add_subcommand("figure1", "upper bounds against the inner sample size");
    add_common(figure1, f1, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*fit) {
            const auto dir = ensure_dir(fit_o.out);
            for (const auto& cfg : resolve(fit_o)) {
                const auto grid = config_grid(cfg);
                const auto model = config_model(cfg);
                const auto pay = config_payoff(cfg);
                const auto gen = config_generator(cfg);
                const Basis basis(cfg.basis, pay, grid, model, cfg.nodes, cfg.integration);
                const auto tr = default_truncation(grid, cfg.dim, {gen}, model.x0, cfg.truncation);
                const auto a = fit_for(cfg, basis, *gen, pay, grid, tr);
                write_file(dir / (cfg.name + "_approximation.json"), to_json(a).dump(1) + "\n");
                std::cout << "wrote " << (dir / (cfg.name + "_approximation.json")).string() << '\n';
                for (const auto& w : a.warnings) std::cout << "  warning: " << w << '\n';
            }
            return 0;
        }
        if (*bounds) {
            const auto dir = ensure_dir(bounds_o.out);
            emit(run_all(resolve(bounds_o)), dir, "bounds", keep_samples);
            return 0;
        }
        if (*ci) return cmd_ci(sample_file);
        if (*oracle) return cmd_oracle(fixtures, tol);
        auto table = [&](const char* name, Common& o) {
            auto cfgs = table_presets(name, o.presets, steps);
            if (!o.config.empty()) throw ConfigError(std::string(name) + " runs presets only; use 'bounds' for configs");
            for (auto& c : cfgs) apply_overrides(c, o);
            emit(run_all(cfgs), ensure_dir(o.out), name, false);
            return 0;
        };
        if (*table1) return table("table1", t1);
        if (*table2) return table("table2", t2);
        if (*table3) return table("table3", t3);
        if (*figure1) {
            auto cfg = presets::figure1();
            if (!f1.config.empty()) cfg = load_config(f1.config);
            apply_overrides(cfg, f1);
            const auto dir = ensure_dir(f1.out);
            const auto r = run_experiment(cfg);
            emit({r}, dir, "figure1_bounds", false);
            emit_figure1(r, dir);
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << e.what() << '\n';
        return 1;
    } catch (const InvariantViolation& e) {
        std::cerr << "invariant violation: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
