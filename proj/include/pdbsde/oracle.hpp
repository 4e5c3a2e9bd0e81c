#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdbsde/confidence.hpp"
#include "pdbsde/factory.hpp"
#include "pdbsde/generator.hpp"
#include "pdbsde/lower_bound.hpp"
#include "pdbsde/payoff.hpp"
#include "pdbsde/rng.hpp"
#include "pdbsde/upper_bound.hpp"

namespace pdbsde {

struct TreeBranch {
    double prob = 0.0;
    std::size_t next = 0;
    std::vector<double> beta;
};

// Finite Markov chain with per-transition weights. Node 0 at step 0 is the root.
struct ExactTree {
    std::size_t dim = 0;
    std::size_t n = 0;
    std::vector<double> deltas;
    std::vector<std::vector<std::vector<double>>> states;         // [i][node] -> x
    std::vector<std::vector<std::vector<TreeBranch>>> branches;  // [i][node], i < n

    std::size_t nodes(std::size_t i) const { return states[i].size(); }

    TimeGrid grid() const {
        TimeGrid g;
        g.n = n;
        g.deltas = deltas;
        g.times.assign(n + 1, 0.0);
        for (std::size_t i = 0; i < n; ++i) g.times[i + 1] = g.times[i] + deltas[i];
        return g;
    }

    void validate() const {
        if (n == 0 || deltas.size() != n || states.size() != n + 1 || branches.size() != n)
            throw std::invalid_argument("tree: inconsistent step counts");
        if (states[0].size() != 1) throw std::invalid_argument("tree: step 0 must hold exactly the root");
        for (std::size_t i = 0; i < n; ++i) {
            if (!(deltas[i] > 0.0)) throw std::invalid_argument("tree: step sizes must be positive");
            if (branches[i].size() != states[i].size()) throw std::invalid_argument("tree: missing branch lists");
            for (const auto& bs : branches[i]) {
                double total = 0.0;
                for (const auto& b : bs) {
                    if (b.prob < 0.0) throw std::invalid_argument("tree: negative probability");
                    if (b.next >= states[i + 1].size()) throw std::invalid_argument("tree: dangling transition");
                    if (b.beta.size() != dim) throw std::invalid_argument("tree: weight dimension mismatch");
                    total += b.prob;
                }
                if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("tree: probabilities do not sum to one");
            }
        }
        for (const auto& level : states)
            for (const auto& x : level)
                if (x.size() != dim) throw std::invalid_argument("tree: state dimension mismatch");
    }

    // alpha0 Delta < 1 and sum_d alpha_d |beta_d| <= 1/Delta on every transition.
    void check_weights(const Generator& g) const {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < nodes(i); ++k) {
                const auto& x = states[i][k];
                if (!(g.lipschitz_y(i, x) * deltas[i] < 1.0))
                    throw std::invalid_argument("tree: alpha0 * Delta >= 1 at step " + std::to_string(i));
                for (const auto& b : branches[i][k]) {
                    double s = 0.0;
                    for (std::size_t d = 0; d < dim; ++d) s += g.lipschitz_z(i, x, d) * std::abs(b.beta[d]);
                    if (s * deltas[i] > 1.0 + 1e-12)
                        throw std::invalid_argument("tree: weight constraint violated at step " + std::to_string(i));
                }
            }
    }
};

struct TreeSpec {
    std::size_t dim = 1;
    std::size_t n = 2;
    double delta = 0.25;
    double x0 = 100.0;
    double mu = 0.05;
    double sigma = 0.2;
    bool trinomial = false;
    double beta_cap = std::numeric_limits<double>::infinity();  // clamp level for beta
    bool zero_beta = false;
};

// Product of per-asset binomial (+-sqrt(dt), 1/2 each) or trinomial
// (0, +-sqrt(3 dt); 2/3, 1/6, 1/6) Brownian increments. Non-recombining.
inline ExactTree lattice_tree(const TreeSpec& s) {
    std::vector<std::pair<double, double>> moves;  // (dW / sqrt(dt), prob)
    if (s.trinomial)
        moves = {{-std::sqrt(3.0), 1.0 / 6.0}, {0.0, 2.0 / 3.0}, {std::sqrt(3.0), 1.0 / 6.0}};
    else
        moves = {{-1.0, 0.5}, {1.0, 0.5}};
    std::vector<std::vector<std::size_t>> combos{{}};
    for (std::size_t d = 0; d < s.dim; ++d) {
        std::vector<std::vector<std::size_t>> next;
        for (const auto& c : combos)
            for (std::size_t m = 0; m < moves.size(); ++m) {
                auto e = c;
                e.push_back(m);
                next.push_back(e);
            }
        combos = next;
    }
    ExactTree t;
    t.dim = s.dim;
    t.n = s.n;
    t.deltas.assign(s.n, s.delta);
    t.states.assign(s.n + 1, {});
    t.branches.assign(s.n, {});
    t.states[0].push_back(std::vector<double>(s.dim, s.x0));
    const double sq = std::sqrt(s.delta);
    const double drift = (s.mu - 0.5 * s.sigma * s.sigma) * s.delta;
    for (std::size_t i = 0; i < s.n; ++i) {
        for (std::size_t k = 0; k < t.states[i].size(); ++k) {
            const auto x = t.states[i][k];
            std::vector<TreeBranch> bs;
            for (const auto& c : combos) {
                TreeBranch b;
                b.prob = 1.0;
                std::vector<double> xn(s.dim);
                b.beta.assign(s.dim, 0.0);
                for (std::size_t d = 0; d < s.dim; ++d) {
                    const double dw = moves[c[d]].first * sq;
                    b.prob *= moves[c[d]].second;
                    xn[d] = x[d] * std::exp(drift + s.sigma * dw);
                    if (!s.zero_beta) b.beta[d] = std::clamp(dw / s.delta, -s.beta_cap, s.beta_cap);
                }
                b.next = t.states[i + 1].size();
                t.states[i + 1].push_back(xn);
                bs.push_back(std::move(b));
            }
            t.branches[i].push_back(std::move(bs));
        }
    }
    return t;
}

// Clamp level giving sum_d alpha_d |beta_d| <= margin / Delta.
inline double tree_beta_cap(const Generator& g, double delta, double margin = 0.9) {
    std::vector<double> x(g.dim(), 100.0);
    double s = 0.0;
    for (std::size_t d = 0; d < g.dim(); ++d) s += g.lipschitz_z(0, x, d);
    return s > 0.0 ? margin / (delta * s) : std::numeric_limits<double>::infinity();
}

inline json tree_to_json(const ExactTree& t) {
    json j;
    j["dim"] = t.dim;
    j["deltas"] = t.deltas;
    j["states"] = t.states;
    auto& b = j["branches"] = json::array();
    for (const auto& level : t.branches) {
        json lv = json::array();
        for (const auto& bs : level) {
            json node = json::array();
            for (const auto& e : bs) node.push_back({{"p", e.prob}, {"next", e.next}, {"beta", e.beta}});
            lv.push_back(node);
        }
        b.push_back(lv);
    }
    return j;
}

inline ExactTree tree_from_json(const json& j) {
    ExactTree t;
    t.dim = j.at("dim").get<std::size_t>();
    t.deltas = j.at("deltas").get<std::vector<double>>();
    t.n = t.deltas.size();
    t.states = j.at("states").get<std::vector<std::vector<std::vector<double>>>>();
    for (const auto& lv : j.at("branches")) {
        std::vector<std::vector<TreeBranch>> level;
        for (const auto& node : lv) {
            std::vector<TreeBranch> bs;
            for (const auto& e : node)
                bs.push_back({e.at("p").get<double>(), e.at("next").get<std::size_t>(),
                              e.at("beta").get<std::vector<double>>()});
            level.push_back(std::move(bs));
        }
        t.branches.push_back(std::move(level));
    }
    t.validate();
    return t;
}

// A tree together with the problem posed on it.
struct OracleFixture {
    std::string name;
    ExactTree tree;
    json generator_spec;
    json payoff_spec;
    GeneratorPtr generator;
    std::optional<Payoff> payoff;
    std::optional<double> golden_y0;
};

inline OracleFixture fixture_from_json(const json& j) {
    OracleFixture f;
    f.name = j.value("name", "unnamed");
    f.tree = tree_from_json(j.at("tree"));
    f.generator_spec = j.at("generator");
    f.payoff_spec = j.at("payoff");
    SchemaErrors err;
    f.generator = generator_from_json(f.generator_spec, "/generator", f.tree.dim, 0.05, 0.2, err);
    f.payoff = payoff_from_json(f.payoff_spec, "/payoff", f.tree.grid(), err);
    err.throw_if_any();
    f.tree.check_weights(*f.generator);
    if (j.contains("golden")) f.golden_y0 = j.at("golden").at("Y0").get<double>();
    return f;
}

inline OracleFixture load_fixture(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open fixture " + path);
    return fixture_from_json(json::parse(in));
}

struct NodeSolution {
    double y = 0.0;
    double q = 0.0;
    std::vector<double> z;
    bool stop = false;  // tau* stops here
};

struct DpSolution {
    std::vector<std::vector<NodeSolution>> nodes;
    double y0() const { return nodes[0][0].y; }
};

// Y_i = max{S_i, E_i[Y_{i+1}] + f(i, Y_i, E_i[beta Y_{i+1}]) Delta_i} by exact
// summation; the optimal rule stops where S_i >= E_i[Y_{i+1}] + f(i, Y_i, Z_i) Delta_i.
inline DpSolution solve_dp_exact(const ExactTree& t, const Generator& g, const Payoff& p) {
    DpSolution s;
    s.nodes.resize(t.n + 1);
    for (std::size_t k = 0; k < t.nodes(t.n); ++k) {
        NodeSolution ns;
        ns.y = p.barrier(t.n, t.states[t.n][k]).value();
        ns.z.assign(t.dim, 0.0);
        ns.stop = true;
        s.nodes[t.n].push_back(ns);
    }
    for (std::size_t i = t.n; i-- > 0;) {
        s.nodes[i].resize(t.nodes(i));
        for (std::size_t k = 0; k < t.nodes(i); ++k) {
            auto& ns = s.nodes[i][k];
            ns.z.assign(t.dim, 0.0);
            for (const auto& b : t.branches[i][k]) {
                const double yn = s.nodes[i + 1][b.next].y;
                ns.q += b.prob * yn;
                for (std::size_t d = 0; d < t.dim; ++d) ns.z[d] += b.prob * b.beta[d] * yn;
            }
            const auto& x = t.states[i][k];
            const Barrier sb = p.barrier(i, x);
            const double dt = t.deltas[i];
            ns.y = picard_solve([&](double y) { return sb.reflect(ns.q + g.eval(i, x, y, ns.z) * dt); }, ns.q).value;
            ns.stop = sb.finite() && sb.value() >= ns.q + g.eval(i, x, ns.y, ns.z) * dt;
        }
    }
    return s;
}

struct TreePath {
    std::vector<std::size_t> node;    // n+1 node indices
    std::vector<std::size_t> branch;  // n branch indices
    double prob = 1.0;
};

inline std::vector<TreePath> enumerate_paths(const ExactTree& t) {
    std::vector<TreePath> out;
    TreePath cur;
    cur.node.push_back(0);
    auto rec = [&](auto&& self, std::size_t i) -> void {
        if (i == t.n) {
            out.push_back(cur);
            return;
        }
        const auto& bs = t.branches[i][cur.node.back()];
        for (std::size_t b = 0; b < bs.size(); ++b) {
            const double keep = cur.prob;
            cur.prob *= bs[b].prob;
            cur.node.push_back(bs[b].next);
            cur.branch.push_back(b);
            self(self, i + 1);
            cur.node.pop_back();
            cur.branch.pop_back();
            cur.prob = keep;
        }
    };
    rec(rec, 0);
    return out;
}

// Approximate inputs on the tree: per node (ytil, qtil, ztil).
struct NodeInputs {
    std::vector<std::vector<double>> y, q;
    std::vector<std::vector<std::vector<double>>> z;
};

inline NodeInputs exact_inputs(const DpSolution& s) {
    NodeInputs in;
    for (const auto& level : s.nodes) {
        std::vector<double> y, q;
        std::vector<std::vector<double>> z;
        for (const auto& ns : level) {
            y.push_back(ns.y);
            q.push_back(ns.q);
            z.push_back(ns.z);
        }
        in.y.push_back(y);
        in.q.push_back(q);
        in.z.push_back(z);
    }
    return in;
}

inline double node_noise(std::uint64_t seed, std::size_t i, std::size_t k, std::uint64_t salt) {
    std::uint64_t s = derive_seed(seed, StreamRole::oracle, i * 1000003ULL + k, salt);
    return 2.0 * (static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53) - 1.0;
}

// Exact values scaled by (1 + eps * u) with a fixed uniform u per node.
inline NodeInputs perturbed_inputs(const DpSolution& s, double eps, std::uint64_t seed) {
    NodeInputs in = exact_inputs(s);
    for (std::size_t i = 0; i < in.y.size(); ++i)
        for (std::size_t k = 0; k < in.y[i].size(); ++k) {
            if (i + 1 < in.y.size()) in.y[i][k] *= 1.0 + eps * node_noise(seed, i, k, 1);
            in.q[i][k] *= 1.0 + eps * node_noise(seed, i, k, 2);
            for (std::size_t d = 0; d < in.z[i][k].size(); ++d) in.z[i][k][d] *= 1.0 + eps * node_noise(seed, i, k, 3 + d);
        }
    return in;
}

// Record along a tree path with inputs `in` and exact conditional
// expectations of the inputs as martingale compensators.
inline PathRecord tree_record(const ExactTree& t, const Payoff& p, const NodeInputs& in, const TreePath& path) {
    PathRecord r;
    r.resize(t.n, t.dim);
    for (std::size_t i = 0; i <= t.n; ++i) {
        const auto k = path.node[i];
        const auto& x = t.states[i][k];
        std::copy(x.begin(), x.end(), r.x.begin() + i * t.dim);
        r.barrier[i] = p.barrier(i, x);
        r.y[i] = in.y[i][k];
        if (i == t.n) break;
        r.deltas[i] = t.deltas[i];
        r.q[i] = in.q[i][k];
        for (std::size_t d = 0; d < t.dim; ++d) r.z[i * t.dim + d] = in.z[i][k][d];
        const auto& bs = t.branches[i][k];
        const auto& taken = bs[path.branch[i]];
        double ey = 0.0;
        std::vector<double> eby(t.dim, 0.0);
        for (const auto& b : bs) {
            const double yn = in.y[i + 1][b.next];
            ey += b.prob * yn;
            for (std::size_t d = 0; d < t.dim; ++d) eby[d] += b.prob * b.beta[d] * yn;
        }
        const double yn = in.y[i + 1][taken.next];
        r.dm0[i] = yn - ey;
        for (std::size_t d = 0; d < t.dim; ++d) {
            r.beta[i * t.dim + d] = taken.beta[d];
            r.dm[i * t.dim + d] = taken.beta[d] * yn - eby[d];
        }
    }
    return r;
}

inline std::size_t optimal_stop(const DpSolution& s, const TreePath& path) {
    for (std::size_t i = 0; i < path.node.size(); ++i)
        if (s.nodes[i][path.node[i]].stop) return i;
    return path.node.size() - 1;
}

struct OracleReport {
    std::string name;
    double y0 = 0.0;
    std::size_t paths = 0;
    // worst absolute deviations from Y0; negative means not applicable
    double up_convex = -1.0;
    double up_convex_conjugate = -1.0;
    double low_convex_expectation = -1.0;
    double low_convex_cv_pathwise = -1.0;
    double up_envelope = -1.0;
    double low_envelope = -1.0;
    double up_concave = -1.0;
    double low_concave = -1.0;
    bool stopping_matches = true;
    std::vector<std::string> failures;

    bool ok() const { return failures.empty(); }
};

// Enumerates every path and checks the pathwise optimality identities with
// exact inputs for all machinery applicable to the driver's shape.
inline OracleReport verify_pathwise_optimality(const ExactTree& t, const GeneratorPtr& gp, const Payoff& p,
                                               double tol = 1e-10, const std::string& name = "") {
    const Generator& g = *gp;
    OracleReport rep;
    rep.name = name;
    const auto sol = solve_dp_exact(t, g, p);
    rep.y0 = sol.y0();
    const auto in = exact_inputs(sol);
    const auto paths = enumerate_paths(t);
    rep.paths = paths.size();
    const Shape shape = g.shape();

    std::vector<Envelope> ups{Envelope::generic(gp, true)}, lows{Envelope::generic(gp, false)};
    if (g.semigeneric_form()) {
        ups.push_back(Envelope::semigeneric(gp, true));
        lows.push_back(Envelope::semigeneric(gp, false));
    }
    if (is_convex(shape)) ups.push_back(Envelope::exact(gp, true));
    if (is_concave(shape)) lows.push_back(Envelope::exact(gp, false));

    auto worst = [](double& slot, double v) { slot = std::max(std::max(slot, 0.0), v); };
    double expect_low = 0.0;
    std::ostringstream fail;
    for (const auto& path : paths) {
        const auto rec = tree_record(t, p, in, path);
        const std::size_t tau_star = optimal_stop(sol, path);
        const std::size_t tau = stopping_time(rec, g);
        if (tau != tau_star) rep.stopping_matches = false;
        if (is_convex(shape)) {
            worst(rep.up_convex, std::abs(theta_up_convex(rec, g, UpperSolver::picard) - rep.y0));
            if (!g.candidate_r(0, rec.state(0)).empty())
                worst(rep.up_convex_conjugate, std::abs(theta_up_convex(rec, g, UpperSolver::conjugate) - rep.y0));
            const auto ctrl = controls_along_path(rec, g, ControlKind::convex);
            expect_low += path.prob * theta_low_convex(rec, tau_star, ctrl, false);
            worst(rep.low_convex_cv_pathwise, std::abs(theta_low_convex(rec, tau_star, ctrl, true) - rep.y0));
        }
        if (is_concave(shape)) {
            const auto ctrl = controls_along_path(rec, g, ControlKind::concave);
            worst(rep.up_concave, std::abs(vartheta_up_concave(rec, ctrl) - rep.y0));
            worst(rep.low_concave, std::abs(vartheta_low_concave(rec, tau_star, g) - rep.y0));
        }
        for (const auto& h : ups)
            for (auto solver : {EnvelopeSolver::automatic, EnvelopeSolver::picard})
                worst(rep.up_envelope, std::abs(theta_up_h(rec, g, h, solver) - rep.y0));
        for (const auto& h : lows)
            for (auto solver : {EnvelopeSolver::automatic, EnvelopeSolver::picard})
                worst(rep.low_envelope, std::abs(theta_low_h(rec, tau_star, g, h, solver) - rep.y0));
    }
    if (is_convex(shape)) rep.low_convex_expectation = std::abs(expect_low - rep.y0);

    auto check = [&](const char* what, double v) {
        if (v > tol) {
            std::ostringstream os;
            os << what << " deviates from Y0 by " << v;
            rep.failures.push_back(os.str());
        }
    };
    check("theta_up (picard)", rep.up_convex);
    check("theta_up (conjugate)", rep.up_convex_conjugate);
    check("E[theta_low]", rep.low_convex_expectation);
    check("theta_low with control variate", rep.low_convex_cv_pathwise);
    check("Theta^{h up}", rep.up_envelope);
    check("Theta^{h low}", rep.low_envelope);
    check("concave dual bound", rep.up_concave);
    check("concave primal bound", rep.low_concave);
    if (!rep.stopping_matches) rep.failures.push_back("approximate stopping rule differs from the optimal one");
    return rep;
}

// Exact expectation over all tree paths of fn(record, path).
template <class Fn>
double tree_expectation(const ExactTree& t, const Payoff& p, const NodeInputs& in, Fn&& fn) {
    double e = 0.0;
    for (const auto& path : enumerate_paths(t)) e += path.prob * fn(tree_record(t, p, in, path), path);
    return e;
}

struct DiagnosticConstants {
    double C = 1.0;
    double c = 1.0;
};

// C(alpha, i) = 1 + prod_{l=i}^{n-1} (1 - alpha_l Delta_l)^{-1} (1 + sum_{j=i}^{n-1} alpha_j Delta_j)
// c(i, alpha, tau) = prod_{l=i}^{min(tau, n-1)} (1 - alpha_l Delta_l)^{-1}
// alpha and deltas have one entry per step l < n.
inline DiagnosticConstants error_bound_constants(std::span<const double> alpha, std::span<const double> deltas,
                                                 std::size_t i, std::size_t tau) {
    const std::size_t n = deltas.size();
    DiagnosticConstants k;
    double prod = 1.0, sum = 0.0;
    for (std::size_t l = i; l < n; ++l) {
        const double a = alpha[l] * deltas[l];
        if (!(a < 1.0)) throw std::invalid_argument("error_bound_constants: alpha Delta >= 1");
        prod /= 1.0 - a;
        sum += a;
    }
    k.C = 1.0 + prod * (1.0 + sum);
    k.c = 1.0;
    for (std::size_t l = i; l <= std::min(tau, n - 1); ++l) k.c /= 1.0 - alpha[l] * deltas[l];
    return k;
}

struct Perturbation {
    double martingale = 0.0;  // scale of the added martingale
    double y = 0.0;           // relative error of ytil
    double q = 0.0;           // relative error of qtil
    std::uint64_t seed = 1;
};

struct ErrorBoundCheck {
    double lhs_up = 0.0, rhs_up = 0.0;
    double lhs_low = 0.0, rhs_low = 0.0;
    bool holds(double slack = 1e-12) const { return lhs_up <= rhs_up + slack && lhs_low <= rhs_low + slack; }
};

// Error-bound audit at i = 0 on a tree with beta = 0 and a convex driver.
inline ErrorBoundCheck check_error_bounds(const ExactTree& t, const Generator& g, const Payoff& p,
                                          const Perturbation& pert) {
    if (!is_convex(g.shape())) throw std::invalid_argument("error bounds: driver must be convex");
    for (const auto& level : t.branches)
        for (const auto& bs : level)
            for (const auto& b : bs)
                for (double v : b.beta)
                    if (v != 0.0) throw std::invalid_argument("error bounds: needs beta = 0");
    const auto sol = solve_dp_exact(t, g, p);
    const double y0 = sol.y0();
    const auto exact = exact_inputs(sol);
    const auto paths = enumerate_paths(t);
    ErrorBoundCheck out;

    // (i): exact Doob martingale plus a martingale N with N_0 = 0
    double e_up = 0.0, e_rhs_up = 0.0;
    for (const auto& path : paths) {
        auto rec = tree_record(t, p, exact, path);
        double n_acc = 0.0, n_max = 0.0;
        std::vector<double> alpha(t.n), deltas(t.deltas);
        for (std::size_t i = 0; i < t.n; ++i) {
            const auto k = path.node[i];
            const auto& bs = t.branches[i][k];
            double mean = 0.0;
            for (const auto& b : bs) mean += b.prob * node_noise(pert.seed, i + 1, b.next, 7);
            const double inc = pert.martingale * (node_noise(pert.seed, i + 1, path.node[i + 1], 7) - mean);
            rec.dm0[i] += inc;
            n_acc += inc;
            n_max = std::max(n_max, std::abs(n_acc));
            alpha[i] = g.lipschitz_y(i, rec.state(i));
        }
        e_up += path.prob * theta_up_convex(rec, g);
        e_rhs_up += path.prob * error_bound_constants(alpha, deltas, 0, t.n).C * n_max;
    }
    out.lhs_up = e_up - y0;
    out.rhs_up = e_rhs_up;

    // (ii): perturbed ytil and qtil, controls from ytil, stopping from (ytil, qtil)
    NodeInputs in = exact;
    for (std::size_t i = 0; i < t.n; ++i)
        for (std::size_t k = 0; k < t.nodes(i); ++k) {
            in.y[i][k] = exact.y[i][k] + pert.y * node_noise(pert.seed, i, k, 11) * (1.0 + std::abs(exact.y[i][k]));
            in.q[i][k] = exact.q[i][k] + pert.q * node_noise(pert.seed, i, k, 13) * (1.0 + std::abs(exact.q[i][k]));
        }
    double e_low = 0.0, e_rhs_low = 0.0;
    for (const auto& path : paths) {
        const auto rec = tree_record(t, p, in, path);
        const std::size_t tau = stopping_time(rec, g);
        const auto ctrl = controls_along_path(rec, g, ControlKind::convex);
        e_low += path.prob * theta_low_convex(rec, tau, ctrl, false);
        std::vector<double> alpha(t.n);
        for (std::size_t i = 0; i < t.n; ++i) alpha[i] = g.lipschitz_y(i, rec.state(i));
        const double c = error_bound_constants(alpha, t.deltas, 0, tau).c;
        double s = 0.0;
        for (std::size_t j = 0; j <= std::min(tau, t.n - 1); ++j)
            s += 3.0 * std::abs(in.y[j][path.node[j]] - exact.y[j][path.node[j]]) * alpha[j] * t.deltas[j];
        auto in_A = [&](std::size_t j) {
            const auto& ns = sol.nodes[j][path.node[j]];
            const Barrier sb = rec.barrier[j];
            return sb.finite() && sb.value() >= ns.q + g.eval(j, rec.state(j), ns.y, ns.z) * t.deltas[j];
        };
        for (std::size_t j = 0; j < tau; ++j)
            if (in_A(j)) s += std::max(in.q[j][path.node[j]] - sol.nodes[j][path.node[j]].q, 0.0);
        if (tau < t.n && !in_A(tau)) s += std::max(sol.nodes[tau][path.node[tau]].q - in.q[tau][path.node[tau]], 0.0);
        e_rhs_low += path.prob * c * s;
    }
    out.lhs_low = y0 - e_low;
    out.rhs_low = e_rhs_low;
    return out;
}

struct TreeMonteCarlo {
    std::size_t outer = 500;
    std::size_t inner = 20;
    double perturb = 0.02;
    std::uint64_t seed = 1;
    InnerMode inner_mode = InnerMode::plain;
    bool lower_cv = true;
};

struct BoundSamples {
    std::vector<double> low;
    std::vector<double> up;
};

inline std::size_t sample_branch(const std::vector<TreeBranch>& bs, Engine& eng) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(eng);
    double acc = 0.0;
    for (std::size_t b = 0; b < bs.size(); ++b) {
        acc += bs[b].prob;
        if (u < acc) return b;
    }
    return bs.size() - 1;
}

// Nested simulation on the tree with perturbed inputs: convex drivers use
// (theta_low, theta_up), others the generic envelopes.
inline BoundSamples tree_monte_carlo(const ExactTree& t, const GeneratorPtr& gp, const Payoff& p,
                                     const TreeMonteCarlo& cfg) {
    const Generator& g = *gp;
    const auto sol = solve_dp_exact(t, g, p);
    const auto in = perturbed_inputs(sol, cfg.perturb, cfg.seed ^ 0xabcdefULL);
    BoundSamples out;
    out.low.resize(cfg.outer);
    out.up.resize(cfg.outer);
    const auto h_up = Envelope::generic(gp, true), h_low = Envelope::generic(gp, false);
    for (std::size_t l = 0; l < cfg.outer; ++l) {
        auto eng = make_engine(cfg.seed, StreamRole::outer, l);
        TreePath path;
        path.node.push_back(0);
        for (std::size_t i = 0; i < t.n; ++i) {
            const auto& bs = t.branches[i][path.node.back()];
            const auto b = sample_branch(bs, eng);
            path.branch.push_back(b);
            path.node.push_back(bs[b].next);
        }
        PathRecord rec = tree_record(t, p, in, path);
        // replace exact compensators by inner-sample estimates
        for (std::size_t i = 0; i < t.n; ++i) {
            const auto& bs = t.branches[i][path.node[i]];
            auto ie = make_engine(cfg.seed, StreamRole::inner, l, i);
            std::vector<double> yn(cfg.inner), beta(cfg.inner * t.dim);
            for (std::size_t s = 0; s < cfg.inner; ++s) {
                const auto& b = bs[sample_branch(bs, ie)];
                yn[s] = in.y[i + 1][b.next];
                for (std::size_t d = 0; d < t.dim; ++d) beta[s * t.dim + d] = b.beta[d];
            }
            const auto est = inner_estimates_plain(yn, beta, t.dim);
            const auto& taken = bs[path.branch[i]];
            const double y_next = in.y[i + 1][taken.next];
            rec.dm0[i] = y_next - est.ey;
            for (std::size_t d = 0; d < t.dim; ++d) rec.dm[i * t.dim + d] = taken.beta[d] * y_next - est.eby[d];
        }
        const std::size_t tau = stopping_time(rec, g);
        if (is_convex(g.shape())) {
            out.up[l] = theta_up_convex(rec, g);
            out.low[l] = theta_low_convex(rec, tau, controls_along_path(rec, g, ControlKind::convex), cfg.lower_cv);
        } else {
            out.up[l] = theta_up_h(rec, g, h_up);
            out.low[l] = theta_low_h(rec, tau, g, h_low);
        }
    }
    return out;
}

}  // namespace pdbsde
