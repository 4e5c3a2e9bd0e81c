#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdbsde/errors.hpp"
#include "pdbsde/generator.hpp"
#include "pdbsde/payoff.hpp"
#include "pdbsde/sim_model.hpp"

namespace pdbsde {

using json = nlohmann::json;

// Line numbers of every object member, keyed by JSON pointer. A small
// structural scan over the text; it assumes the text already parsed.
inline std::map<std::string, std::size_t> index_key_lines(const std::string& text) {
    std::map<std::string, std::size_t> lines;
    struct Frame {
        bool object;
        std::size_t index;
        std::string key;
    };
    std::vector<Frame> stack;
    std::size_t line = 1;
    auto pointer = [&](const std::string& last) {
        std::string p;
        for (const auto& f : stack) {
            if (&f == &stack.back()) break;
            p += "/" + (f.object ? f.key : std::to_string(f.index));
        }
        return p + "/" + last;
    };
    bool expecting_key = false;
    for (std::size_t k = 0; k < text.size(); ++k) {
        const char c = text[k];
        if (c == '\n') ++line;
        if (c == '"') {
            std::string s;
            for (++k; k < text.size() && text[k] != '"'; ++k) {
                if (text[k] == '\\' && k + 1 < text.size()) ++k;
                s += text[k];
            }
            if (expecting_key && !stack.empty() && stack.back().object) {
                stack.back().key = s;
                lines[pointer(s)] = line;
                expecting_key = false;
            }
            continue;
        }
        switch (c) {
            case '{': stack.push_back({true, 0, ""}); expecting_key = true; break;
            case '[': stack.push_back({false, 0, ""}); break;
            case '}':
            case ']':
                if (!stack.empty()) stack.pop_back();
                break;
            case ',':
                if (!stack.empty()) {
                    if (stack.back().object) expecting_key = true;
                    else ++stack.back().index;
                }
                break;
            default: break;
        }
    }
    return lines;
}

// Collects schema errors as "<pointer> (line L): message".
class SchemaErrors {
public:
    SchemaErrors() = default;
    explicit SchemaErrors(const std::string& text) : lines_(index_key_lines(text)) {}

    void add(const std::string& pointer, const std::string& message) {
        std::ostringstream os;
        os << (pointer.empty() ? "/" : pointer);
        // fall back to the nearest enclosing member with a known line
        std::string p = pointer;
        while (!p.empty()) {
            auto it = lines_.find(p);
            if (it != lines_.end()) {
                os << " (line " << it->second << ")";
                break;
            }
            p = p.substr(0, p.find_last_of('/'));
        }
        os << ": " << message;
        errors_.push_back(os.str());
    }

    bool empty() const { return errors_.empty(); }
    const std::vector<std::string>& errors() const { return errors_; }

    void throw_if_any() const {
        if (errors_.empty()) return;
        std::string msg = "invalid configuration:";
        for (const auto& e : errors_) msg += "\n  " + e;
        throw ConfigError(msg);
    }

private:
    std::map<std::string, std::size_t> lines_;
    std::vector<std::string> errors_;
};

inline void allow_keys(const json& j, const std::string& path, std::initializer_list<const char*> keys,
                       SchemaErrors& err) {
    if (!j.is_object()) {
        err.add(path, "expected an object");
        return;
    }
    for (const auto& [k, v] : j.items()) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
            err.add(path + "/" + k, "unknown key");
    }
}

inline double read_number(const json& j, const std::string& path, const char* key, double fallback, SchemaErrors& err,
                          double lo = -std::numeric_limits<double>::infinity(),
                          double hi = std::numeric_limits<double>::infinity()) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    const auto& v = j.at(key);
    const std::string p = path + "/" + key;
    if (!v.is_number()) {
        err.add(p, "expected a number");
        return fallback;
    }
    const double x = v.get<double>();
    if (!std::isfinite(x) || x < lo || x > hi) {
        std::ostringstream os;
        os << "value " << x << " outside [" << lo << ", " << hi << "]";
        err.add(p, os.str());
        return fallback;
    }
    return x;
}

inline std::size_t read_count(const json& j, const std::string& path, const char* key, std::size_t fallback,
                              SchemaErrors& err, std::size_t lo = 0) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    const auto& v = j.at(key);
    const std::string p = path + "/" + key;
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
        err.add(p, "expected a non-negative integer");
        return fallback;
    }
    const auto x = v.get<std::size_t>();
    if (x < lo) {
        err.add(p, "must be >= " + std::to_string(lo));
        return fallback;
    }
    return x;
}

inline std::string read_string(const json& j, const std::string& path, const char* key, const std::string& fallback,
                               SchemaErrors& err, std::initializer_list<const char*> choices = {}) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    const auto& v = j.at(key);
    const std::string p = path + "/" + key;
    if (!v.is_string()) {
        err.add(p, "expected a string");
        return fallback;
    }
    auto s = v.get<std::string>();
    if (choices.size() > 0 && std::none_of(choices.begin(), choices.end(), [&](const char* c) { return s == c; })) {
        std::string msg = "'" + s + "' is not one of";
        for (const char* c : choices) msg += std::string(" ") + c;
        err.add(p, msg);
        return fallback;
    }
    return s;
}

inline bool read_bool(const json& j, const std::string& path, const char* key, bool fallback, SchemaErrors& err) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_boolean()) {
        err.add(path + "/" + key, "expected true or false");
        return fallback;
    }
    return v.get<bool>();
}

// Generator from its JSON description. mu and sigma default to the model's.
inline GeneratorPtr generator_from_json(const json& j, const std::string& path, std::size_t dim, double mu,
                                        double sigma, SchemaErrors& err) {
    const auto kind = read_string(j, path, "kind", "funding", err, {"funding", "credit", "linear", "zero", "mirrored"});
    try {
        if (kind == "funding") {
            allow_keys(j, path, {"kind", "R_l", "R_b", "mu", "sigma"}, err);
            FundingParams p;
            p.R_l = read_number(j, path, "R_l", p.R_l, err);
            p.R_b = read_number(j, path, "R_b", p.R_b, err);
            p.mu = read_number(j, path, "mu", mu, err);
            p.sigma = read_number(j, path, "sigma", sigma, err, 0.0);
            if (p.R_l > p.R_b) err.add(path + "/R_l", "lending rate must not exceed the borrowing rate");
            if (!(p.sigma > 0.0)) err.add(path + "/sigma", "funding driver needs positive sigma");
            if (!err.empty()) return nullptr;
            return std::make_shared<FundingGenerator>(p, dim);
        }
        if (kind == "credit") {
            allow_keys(j, path, {"kind", "R", "delta", "v_h", "v_l", "gamma_h", "gamma_l"}, err);
            CreditParams p;
            p.R = read_number(j, path, "R", p.R, err);
            p.delta = read_number(j, path, "delta", p.delta, err, 0.0, 1.0);
            p.v_h = read_number(j, path, "v_h", p.v_h, err);
            p.v_l = read_number(j, path, "v_l", p.v_l, err);
            p.gamma_h = read_number(j, path, "gamma_h", p.gamma_h, err);
            p.gamma_l = read_number(j, path, "gamma_l", p.gamma_l, err);
            if (!(p.v_h < p.v_l)) err.add(path + "/v_h", "need v_h < v_l");
            if (!(p.gamma_h > p.gamma_l)) err.add(path + "/gamma_h", "need gamma_h > gamma_l");
            if (!(p.delta < 1.0)) err.add(path + "/delta", "recovery fraction must be < 1");
            if (!err.empty()) return nullptr;
            return std::make_shared<CreditGenerator>(p, dim);
        }
        if (kind == "linear") {
            allow_keys(j, path, {"kind", "a", "b", "c"}, err);
            const double a = read_number(j, path, "a", 0.0, err);
            const double c = read_number(j, path, "c", 0.0, err);
            std::vector<double> b(dim, 0.0);
            if (j.contains("b")) {
                const auto& v = j.at("b");
                if (v.is_number()) std::fill(b.begin(), b.end(), v.get<double>());
                else if (v.is_array() && v.size() == dim && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); }))
                    b = v.get<std::vector<double>>();
                else
                    err.add(path + "/b", "expected a number or an array of " + std::to_string(dim) + " numbers");
            }
            if (!err.empty()) return nullptr;
            return std::make_shared<LinearGenerator>(a, b, c);
        }
        if (kind == "zero") {
            allow_keys(j, path, {"kind"}, err);
            return make_zero_generator(dim);
        }
        allow_keys(j, path, {"kind", "of"}, err);
        if (!j.contains("of")) {
            err.add(path, "mirrored generator needs 'of'");
            return nullptr;
        }
        auto inner = generator_from_json(j.at("of"), path + "/of", dim, mu, sigma, err);
        return inner ? std::make_shared<MirroredGenerator>(inner) : nullptr;
    } catch (const std::invalid_argument& e) {
        err.add(path, e.what());
        return nullptr;
    }
}

inline std::optional<ExerciseSet> exercise_from_json(const json& j, const std::string& path, const TimeGrid& grid,
                                                     SchemaErrors& err) {
    if (!j.is_object() || !j.contains("exercise")) return european_exercise_set(grid);
    const auto& v = j.at("exercise");
    const std::string p = path + "/exercise";
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "european") return european_exercise_set(grid);
        if (s == "bermudan") {
            if (grid.n % 4 != 0) {
                err.add(p, "Bermudan exercise needs n divisible by 4 (n = " + std::to_string(grid.n) + ")");
                return std::nullopt;
            }
            return bermudan_exercise_set(grid);
        }
        err.add(p, "expected 'european', 'bermudan' or a list of steps");
        return std::nullopt;
    }
    if (v.is_array()) {
        std::vector<std::size_t> dates;
        for (const auto& e : v) {
            if (!e.is_number_integer() || e.get<long long>() < 0 || e.get<std::size_t>() > grid.n) {
                err.add(p, "exercise steps must be integers in [0, n]");
                return std::nullopt;
            }
            dates.push_back(e.get<std::size_t>());
        }
        return ExerciseSet(grid.n, dates);
    }
    err.add(p, "expected 'european', 'bermudan' or a list of steps");
    return std::nullopt;
}

inline std::optional<Payoff> payoff_from_json(const json& j, const std::string& path, const TimeGrid& grid,
                                              SchemaErrors& err) {
    const auto kind = read_string(j, path, "kind", "call_spread_max", err, {"call_spread_max", "min_asset"});
    if (kind == "min_asset") {
        allow_keys(j, path, {"kind"}, err);
        return Payoff::min_asset(grid.n);
    }
    allow_keys(j, path, {"kind", "K1", "K2", "exercise"}, err);
    const double K1 = read_number(j, path, "K1", 95.0, err);
    const double K2 = read_number(j, path, "K2", 115.0, err);
    auto ex = exercise_from_json(j, path, grid, err);
    if (!ex) return std::nullopt;
    return Payoff::call_spread_max(K1, K2, *ex);
}

}  // namespace pdbsde
