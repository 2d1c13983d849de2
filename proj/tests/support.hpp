#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "vpv/backends.hpp"
#include "vpv/dsl.hpp"
#include "vpv/random.hpp"
#include "vpv/runtime.hpp"

namespace vpv::fixtures {

inline std::string source_path(const std::string &rel) { return std::string(VPV_SOURCE_DIR) + "/" + rel; }

/// Transport whose replies come from a function; counts calls.
class ScriptedTransport final : public Transport {
  public:
    explicit ScriptedTransport(std::function<json(const Request &)> fn) : fn_(std::move(fn)) {}
    json call(const Request &r) override {
        ++calls;
        return fn_(r);
    }
    bool healthy() override { return true; }
    [[nodiscard]] std::string describe() const override { return "scripted"; }

    int calls = 0;

  private:
    std::function<json(const Request &)> fn_;
};

/// Replies that make every built-in executor succeed.
inline json generic_reply(const Request &r) {
    if (r.task == "detect") {
        return json::array({{{"box", {1, 2, 30, 40}}, {"score", 0.9}}, {{"box", {5, 5, 20, 20}}, {"score", 0.4}}});
    }
    if (r.task == "vqa") {
        return json::array({{{"answer", "yes"}, {"p", 0.6}}, {{"answer", "no"}, {"p", 0.4}}});
    }
    if (r.task == "segment") {
        return json::array({{{"mask", "m1"}, {"label", "cat"}, {"score", 0.8}}});
    }
    if (r.task == "embed") {
        return json::array({1.0, 0.5, 0.0, 0.0});
    }
    if (r.task == "edit") {
        return json::array({{{"image", "edited"}, {"score", 0.7}}});
    }
    if (r.task == "caption") {
        return "a cat on a mat";
    }
    if (r.task == "rank") {
        return "1";
    }
    return "";
}

// ---- program generation ----

inline std::string random_text(rnd::Engine &g) {
    static const std::string alphabet = "abcxyz XYZ019_,()=.'\\\"{}?#";
    const std::size_t n = rnd::below(g, 12);
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
        s.push_back(alphabet[rnd::below(g, alphabet.size())]);
    }
    return s;
}

/// Well-typed program over the signatures of config/modules.json: every variable is bound
/// before use and the last statement is RESULT.
inline std::string generate_program(rnd::Engine &g) {
    struct Var {
        std::string name;
        ValueType type;
    };
    std::vector<Var> vars{{"IMAGE", ValueType::Image}};
    auto pick = [&](ValueType t) -> const Var * {
        std::vector<const Var *> ok;
        for (const auto &v : vars) {
            if (v.type == t) {
                ok.push_back(&v);
            }
        }
        return ok.empty() ? nullptr : ok[rnd::below(g, ok.size())];
    };
    auto lit = [&](const std::string &s) { return serialize(ArgValue(s)); };

    std::vector<std::string> lines;
    const std::size_t n = 1 + rnd::below(g, 7);
    int counter = 0;
    while (lines.size() < n) {
        const std::string out = "V" + std::to_string(counter++);
        const std::string image = pick(ValueType::Image)->name;
        std::string line;
        ValueType type = ValueType::Any;
        switch (rnd::below(g, 9)) {
        case 0:
            line = out + "=LOC(image=" + image + ",object=" + lit(random_text(g)) + ")";
            type = ValueType::Box;
            break;
        case 1:
            line = out + "=VQA(image=" + image + ",question=" + lit(random_text(g)) + ")";
            type = ValueType::Text;
            break;
        case 2:
            line = out + "=SEG(image=" + image + ")";
            type = ValueType::Mask;
            break;
        case 3:
            line = out + "=SELECT(image=" + image + ",query=" + lit(random_text(g)) + ")";
            type = ValueType::Mask;
            break;
        case 4:
            if (const Var *box = pick(ValueType::Box)) {
                line = out + "=CLASSIFY(image=" + image + ",box=" + box->name + ",categories='cat,dog')";
                type = ValueType::Text;
            }
            break;
        case 5:
            if (const Var *mask = pick(ValueType::Mask)) {
                line = out + "=REPLACE(image=" + image + ",object=" + mask->name + ",prompt=" +
                       lit(random_text(g)) + ")";
                type = ValueType::Image;
            }
            break;
        case 6:
            line = out + "=ALIGN(image=" + image + ",parts='head;tail')";
            type = ValueType::Number;
            break;
        case 7:
            line = out + "=COUNT(var=" + vars[rnd::below(g, vars.size())].name + ")";
            type = ValueType::Number;
            break;
        default:
            if (const Var *num = pick(ValueType::Number)) {
                line = out + "=EVAL(expr='\"many\" if {" + num->name + "} > 1 else \"few\"')";
            } else {
                line = out + "=EVAL(expr='1 + 2 * 3')";
            }
            type = ValueType::Any;
            break;
        }
        if (!line.empty()) {
            lines.push_back(line);
            vars.push_back({out, type});
        }
    }
    std::string text;
    for (const auto &l : lines) {
        text += l + "\n";
    }
    text += "FINAL=RESULT(var=" + vars.back().name + ")\n";
    return text;
}

/// Structurally random program (ops, argument kinds, literals) with no typing discipline.
inline Program generate_wild_program(rnd::Engine &g) {
    static const std::vector<std::string> ops{"LOC", "VQA", "EVAL", "RESULT", "FOO_BAR", "X1"};
    std::vector<Step> steps;
    const std::size_t n = 1 + rnd::below(g, 6);
    for (std::size_t i = 0; i < n; ++i) {
        Step s;
        s.op = ops[rnd::below(g, ops.size())];
        s.out_var = "OUT" + std::to_string(i);
        s.line = static_cast<int>(i + 1);
        const std::size_t nargs = rnd::below(g, 4);
        for (std::size_t a = 0; a < nargs; ++a) {
            const std::string key = "k" + std::to_string(a);
            switch (rnd::below(g, 5)) {
            case 0:
                s.args.emplace_back(key, VarRef{"VAR" + std::to_string(rnd::below(g, 5))});
                break;
            case 1:
                s.args.emplace_back(key, random_text(g));
                break;
            case 2:
                s.args.emplace_back(key, rnd::uniform(g, -1000.0, 1000.0));
                break;
            case 3:
                s.args.emplace_back(key, static_cast<double>(static_cast<long long>(rnd::below(g, 100)) - 50));
                break;
            default:
                s.args.emplace_back(key, rnd::bernoulli(g, 0.5));
                break;
            }
        }
        steps.push_back(std::move(s));
    }
    return Program(std::move(steps));
}

// ---- oracles ----

/// Every interval, score = length * min; ties to the earliest start, then the shortest.
inline TemporalSegment brute_temporal(const std::vector<double> &h) {
    TemporalSegment best{0, 0, -std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i < h.size(); ++i) {
        double m = h[i];
        for (std::size_t j = i; j < h.size(); ++j) {
            m = std::min(m, h[j]);
            const double area = static_cast<double>(j - i + 1) * m;
            if (area > best.score) {
                best = {i, j, area};
            }
        }
    }
    return best;
}

/// Maximum total similarity over all injections of the smaller side into the larger.
inline double brute_assignment_total(const std::vector<std::vector<double>> &w) {
    const std::size_t rows = w.size(), cols = w[0].size();
    const bool t = rows > cols;
    const std::size_t n = t ? cols : rows, m = t ? rows : cols;
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    double best = -std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s += t ? w[perm[i]][i] : w[i][perm[i]];
        }
        best = std::max(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

inline std::vector<double> random_unit(rnd::Engine &g, std::size_t dim) {
    std::vector<double> v(dim);
    double n = 0.0;
    for (auto &x : v) {
        x = rnd::uniform(g, -1.0, 1.0);
        n += x * x;
    }
    n = std::sqrt(n);
    for (auto &x : v) {
        x /= n;
    }
    return v;
}

} // namespace vpv::fixtures
