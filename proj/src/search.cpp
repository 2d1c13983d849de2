#include "vpv/search.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "vpv/error.hpp"

namespace vpv {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

nlohmann::json opt(const std::optional<double> &v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

} // namespace

void SearchParams::check() const {
    if (K == 0 || B == 0 || top_m == 0) {
        throw std::invalid_argument("K, B and top_m must be at least 1");
    }
    if (psc_enabled && (P == 0 || P > K)) {
        throw std::invalid_argument("P must lie in [1, K]");
    }
    if (max_depth < 1) {
        throw std::invalid_argument("max_depth must be at least 1");
    }
}

std::vector<NodePtr> path_to(const NodePtr &node) {
    std::vector<NodePtr> out;
    for (NodePtr n = node; n && n->step; n = n->parent) {
        out.push_back(n);
    }
    std::reverse(out.begin(), out.end());
    return out;
}

std::string render_trace(const NodePtr &node) {
    std::string out;
    for (const auto &n : path_to(node)) {
        out += serialize(*n->step) + " -> " + summary(n->chosen.value) + "\n";
    }
    return out;
}

std::vector<Proposal> ProgramTrieProposer::propose(const TraceNode &node, std::size_t limit) {
    std::vector<Proposal> out;
    for (const auto &c : node.continuations) {
        if (c.done()) {
            continue;
        }
        const Step &s = c.step();
        auto it = std::find_if(out.begin(), out.end(), [&](const Proposal &p) { return same_statement(p.step, s); });
        if (it == out.end()) {
            if (out.size() >= limit) {
                continue;
            }
            out.push_back({s, {}});
            it = std::prev(out.end());
        }
        it->continuations.push_back({c.program, c.next + 1});
    }
    return out;
}

NodePtr make_root(const Environment &inputs, const std::vector<std::shared_ptr<const Program>> &programs) {
    auto root = std::make_shared<TraceNode>();
    root->env = inputs;
    for (const auto &p : programs) {
        root->continuations.push_back({p, 0});
    }
    return root;
}

nlohmann::json node_record(const TraceNode &n) {
    nlohmann::json rec = nlohmann::json::object();
    rec["type"] = "node";
    rec["id"] = n.id;
    rec["parent"] = n.parent ? nlohmann::json(n.parent->id) : nlohmann::json(nullptr);
    rec["depth"] = n.depth;
    rec["step"] = n.step ? serialize(*n.step) : std::string();
    rec["value"] = summary(n.chosen.value);
    rec["p"] = n.chosen.p;
    rec["p_cal"] = opt(n.chosen.p_cal);
    rec["w"] = opt(n.chosen.w);
    if (const auto &r = n.chosen.report) {
        rec["scores"] = {{"itm", opt(r->s_itm)}, {"caption", opt(r->s_cap)}, {"vqa", opt(r->s_vqa)}};
        rec["negative"] = r->negative;
        rec["negative_scores"] = {{"itm", opt(r->n_itm)}, {"caption", opt(r->n_cap)}, {"vqa", opt(r->n_vqa)}};
        rec["s_final"] = r->s_final;
    } else {
        rec["s_final"] = nullptr;
    }
    rec["cum_score"] = n.cum_score;
    rec["goal"] = n.goal;
    return rec;
}

std::vector<NodePtr> expand(const NodePtr &node, SearchContext &ctx, const SearchParams &params, int &next_id,
                            SearchStats &stats) {
    ProgramTrieProposer fallback;
    StepProposer &proposer = ctx.proposer ? *ctx.proposer : fallback;
    const auto proposals = proposer.propose(*node, params.B);
    ++stats.expansions;
    if (proposals.empty()) {
        throw AllBranchesPruned();
    }

    std::vector<NodePtr> children;
    for (const auto &prop : proposals) {
        ++stats.step_executions;
        const ModuleSpec &module = ctx.registry->at(prop.step.op);
        CandidateSet cs;
        try {
            const auto t0 = Clock::now();
            cs = execute_step(prop.step, node->env, *ctx.registry, ctx.exec);
            stats.exec_ms += ms_since(t0);
            if (ctx.scorer && module.verifiable) {
                const auto t1 = Clock::now();
                ctx.scorer->score(cs, module);
                stats.verify_ms += ms_since(t1);
                if (ctx.calibrate) {
                    cs = calibrate(std::move(cs), module.tau);
                }
            }
        } catch (const ExecutorFailure &e) {
            ++stats.pruned;
            spdlog::debug("pruned '{}': {}", serialize(prop.step), e.what());
            if (ctx.sink) {
                ctx.sink->record({{"type", "pruned"}, {"parent", node->id}, {"step", serialize(prop.step)},
                                  {"error", e.what()}});
            }
            continue;
        } catch (const BackendFailure &e) {
            ++stats.pruned;
            spdlog::debug("pruned '{}' during verification: {}", serialize(prop.step), e.what());
            if (ctx.sink) {
                ctx.sink->record({{"type", "pruned"}, {"parent", node->id}, {"step", serialize(prop.step)},
                                  {"error", e.what()}});
            }
            continue;
        }

        const std::size_t keep = std::min(params.top_m, cs.candidates.size());
        for (std::size_t i = 0; i < keep; ++i) {
            const Candidate &c = cs.candidates[i];
            auto child = std::make_shared<TraceNode>();
            child->parent = node;
            child->id = next_id++;
            child->depth = node->depth + 1;
            child->step = prop.step;
            child->chosen = c;
            child->env = bind_candidate(node->env, prop.step, c, static_cast<int>(i));
            child->scored = c.report.has_value();
            child->score = c.report ? c.report->s_final : 0.0;
            child->score_sum = node->score_sum + (child->scored ? child->score : 0.0);
            child->scored_count = node->scored_count + (child->scored ? 1 : 0);
            child->cum_score = child->scored_count == 0 ? 0.0 : child->score_sum / child->scored_count;
            child->goal = prop.step.op == ctx.registry->signatures().terminal_op;
            child->continuations = prop.continuations;
            if (ctx.sink) {
                ctx.sink->record(node_record(*child));
            }
            children.push_back(std::move(child));
        }
    }
    if (children.empty()) {
        throw AllBranchesPruned();
    }
    return children;
}

std::vector<NodePtr> trs_select(const std::vector<NodePtr> &open, std::size_t K) {
    std::vector<NodePtr> sorted = open;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const NodePtr &a, const NodePtr &b) { return a->cum_score > b->cum_score; });
    if (sorted.size() > K) {
        sorted.resize(K);
    }
    return sorted;
}

std::vector<NodePtr> psc_rank(const std::vector<NodePtr> &nodes, std::size_t P, Ranker *ranker,
                              const std::string &instruction_template, const std::string &query, bool *fell_back) {
    if (fell_back) {
        *fell_back = false;
    }
    std::vector<NodePtr> out;
    if (ranker && nodes.size() >= 2) {
        std::vector<std::string> traces;
        traces.reserve(nodes.size());
        for (const auto &n : nodes) {
            traces.push_back(render_trace(n));
        }
        try {
            const auto order = ranker->rank(traces, render_rank_prompt(instruction_template, query, traces));
            std::set<std::size_t> seen(order.begin(), order.end());
            if (order.size() != nodes.size() || seen.size() != nodes.size() || *seen.rbegin() >= nodes.size()) {
                throw RankUnavailable("ranker returned an invalid permutation");
            }
            for (std::size_t i : order) {
                out.push_back(nodes[i]);
            }
        } catch (const RankUnavailable &e) {
            spdlog::warn("self-correction ranking unavailable, using verification order: {}", e.what());
        } catch (const BackendFailure &e) {
            spdlog::warn("self-correction ranker failed, using verification order: {}", e.what());
        }
    }
    if (out.empty()) {
        if (fell_back && nodes.size() >= 2) {
            *fell_back = true;
        }
        out = trs_select(nodes, nodes.size());
    }
    if (out.size() > P) {
        out.resize(P);
    }
    return out;
}

SearchResult search(const NodePtr &root, SearchContext &ctx, const SearchParams &params) {
    params.check();
    if (!ctx.registry) {
        throw std::invalid_argument("search needs a module registry");
    }
    SearchResult result;
    SearchStats &stats = result.stats;
    int next_id = root->id + 1;
    bool depth_hit = false;

    std::vector<NodePtr> open{root};
    while (!open.empty()) {
        ++stats.iterations;
        std::vector<NodePtr> closed = trs_select(open, params.K);
        open.clear();

        if (params.psc_enabled && closed.size() >= 2) {
            double lo = closed.front()->cum_score, hi = lo;
            for (const auto &n : closed) {
                lo = std::min(lo, n->cum_score);
                hi = std::max(hi, n->cum_score);
            }
            if (!params.psc_gate || hi - lo <= *params.psc_gate) {
                bool fell_back = false;
                ++stats.psc_calls;
                std::vector<int> before;
                for (const auto &n : closed) {
                    before.push_back(n->id);
                }
                closed = psc_rank(closed, params.P, ctx.ranker, ctx.rank_template, ctx.query, &fell_back);
                stats.psc_fallbacks += fell_back ? 1 : 0;
                if (ctx.sink) {
                    std::vector<int> after;
                    for (const auto &n : closed) {
                        after.push_back(n->id);
                    }
                    ctx.sink->record({{"type", "psc"}, {"input", before}, {"output", after}, {"fallback", fell_back}});
                }
            }
        }

        for (const auto &e : closed) {
            if (e->goal) {
                result.path = path_to(e);
                result.answer = e->chosen.value;
                return result;
            }
            if (e->depth >= params.max_depth) {
                depth_hit = true;
                continue;
            }
            try {
                auto children = expand(e, ctx, params, next_id, stats);
                open.insert(open.end(), children.begin(), children.end());
            } catch (const AllBranchesPruned &) {
                spdlog::debug("node {} has no surviving continuation", e->id);
            }
        }
    }
    if (depth_hit) {
        throw DepthExceeded(params.max_depth);
    }
    throw NoTraceFound();
}

// ---- planning ----

PlanOutcome plan_programs(Planner &planner, const PlannerRequest &request, const SignatureTable &table) {
    PlanOutcome out;
    const auto t0 = Clock::now();
    const auto texts = planner.plan(request);
    out.planning_ms = ms_since(t0);
    out.outputs = static_cast<int>(texts.size());
    for (const auto &text : texts) {
        try {
            auto program = std::make_shared<const Program>(parse_program(text));
            const auto report = validate(*program, table);
            if (!report.ok()) {
                ++out.unexecutable;
                out.errors.push_back(report.to_string());
                continue;
            }
            out.programs.push_back(std::move(program));
        } catch (const SyntaxError &e) {
            ++out.unexecutable;
            out.errors.push_back(e.what());
        } catch (const EmptyProgram &e) {
            ++out.unexecutable;
            out.errors.push_back(e.what());
        }
    }
    return out;
}

// ---- flags ----

Flags Flags::preset(const std::string &name) {
    if (name == "row0") {
        return {false, false, false, false};
    }
    if (name == "row1") {
        return {false, true, false, false};
    }
    if (name == "row2") {
        return {true, true, false, false};
    }
    if (name == "row3") {
        return {true, true, true, false};
    }
    if (name == "row4") {
        return {false, false, false, true};
    }
    if (name == "row5" || name == "full") {
        return {true, true, true, true};
    }
    throw ConfigError("unknown flag preset '" + name + "'");
}

nlohmann::json Flags::to_json() const {
    return {{"negative_sampling", negative_sampling}, {"calibration", calibration}, {"trs", trs}, {"psc", psc}};
}

Flags Flags::from_json(const nlohmann::json &j) {
    if (j.is_string()) {
        return preset(j.get<std::string>());
    }
    if (!j.is_object()) {
        throw ConfigError("flags must be a preset name or an object");
    }
    Flags f;
    f.negative_sampling = j.value("negative_sampling", f.negative_sampling);
    f.calibration = j.value("calibration", f.calibration);
    f.trs = j.value("trs", f.trs);
    f.psc = j.value("psc", f.psc);
    return f;
}

// ---- pipeline ----

Pipeline::Pipeline(const ModuleRegistry &registry, BackendSuite &backends, const NegativeVocabulary &vocab,
                   PipelineConfig cfg)
    : registry_(registry), backends_(backends), vocab_(vocab), cfg_(std::move(cfg)) {
    cfg_.verification.negative_sampling = cfg_.flags.negative_sampling;
    cfg_.search.check();
}

SolveOutcome Pipeline::solve(const std::string &query, const Environment &inputs, TraceSink *sink) {
    SolveOutcome out;
    const Flags &f = cfg_.flags;
    if (!backends_.planner) {
        throw ConfigError("no planner backend configured");
    }

    PlannerRequest req;
    req.query = query;
    req.in_context_examples = cfg_.examples;
    req.n_programs = f.searching() ? static_cast<int>(cfg_.search.B) : 1;
    req.perturbation_seed = cfg_.plan_seed;

    try {
        out.plan = plan_programs(*backends_.planner, req, registry_.signatures());
        if (sink) {
            sink->record({{"type", "plan"},
                          {"outputs", out.plan.outputs},
                          {"unexecutable", out.plan.unexecutable},
                          {"errors", out.plan.errors}});
        }
        if (out.plan.programs.empty()) {
            out.error = "no executable program";
            return out;
        }

        SearchParams params = cfg_.search;
        if (!f.searching()) {
            params.K = 1;
            params.psc_enabled = false;
        } else {
            params.psc_enabled = f.psc;
        }

        std::optional<VerifierScorer> scorer;
        if (f.verification()) {
            scorer.emplace(vocab_, backends_, cfg_.verification);
        }
        ProgramTrieProposer proposer;
        SearchContext ctx;
        ctx.registry = &registry_;
        ctx.exec = ExecContext{&backends_, registry_.top_k()};
        ctx.proposer = &proposer;
        ctx.scorer = scorer ? &*scorer : nullptr;
        ctx.calibrate = f.calibration;
        ctx.ranker = f.psc ? backends_.ranker.get() : nullptr;
        ctx.rank_template = cfg_.rank_template;
        ctx.query = query;
        ctx.sink = sink;

        out.result = search(make_root(inputs, out.plan.programs), ctx, params);
    } catch (const FixtureMiss &e) {
        out.error = std::string("fixture miss: ") + e.what();
    } catch (const Error &e) {
        out.error = e.what();
    }
    return out;
}

} // namespace vpv
