#include "vpv/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "vpv/error.hpp"

namespace vpv {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

const std::vector<std::pair<TaskKind, std::string>> &kind_names() {
    static const std::vector<std::pair<TaskKind, std::string>> names{
        {TaskKind::Qa, "qa"},           {TaskKind::Grounding, "grounding"}, {TaskKind::Nlvr, "nlvr"},
        {TaskKind::Abstract, "abstract"}, {TaskKind::Editing, "editing-mock"}, {TaskKind::VideoQa, "video-qa"},
    };
    return names;
}

std::string normalize(const std::string &s) {
    std::string out;
    for (unsigned char c : s) {
        if (!std::isspace(c) || (!out.empty() && out.back() != ' ')) {
            out.push_back(std::isspace(c) ? ' ' : static_cast<char>(std::tolower(c)));
        }
    }
    while (!out.empty() && (out.back() == ' ' || out.back() == '.')) {
        out.pop_back();
    }
    return out;
}

std::string number_text(double d) {
    if (std::floor(d) == d && std::fabs(d) < 1e15) {
        return std::to_string(static_cast<long long>(d));
    }
    std::ostringstream os;
    os << d;
    return os.str();
}

/// Unwraps single-element lists so list-valued answers score by their best candidate.
const json &unwrap(const json &p) {
    if (p.is_object() && p.contains("list") && !p.at("list").empty()) {
        return unwrap(p.at("list").at(0));
    }
    return p;
}

bool is_box(const json &g) {
    return g.is_array() && g.size() == 4 && std::all_of(g.begin(), g.end(), [](const json &x) { return x.is_number(); });
}

Box box_from(const json &g) {
    return make_box(g.at(0).get<double>(), g.at(1).get<double>(), g.at(2).get<double>(), g.at(3).get<double>());
}

std::string safe_name(const std::string &id) {
    std::string out;
    for (unsigned char c : id) {
        out.push_back(std::isalnum(c) || c == '-' || c == '_' || c == '.' ? static_cast<char>(c) : '_');
    }
    return out.empty() ? "_" : out;
}

std::filesystem::path resolve(const std::filesystem::path &base, const std::string &p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::string read_text(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open " + path.string());
    }
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

json read_json(const std::filesystem::path &path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error &e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

} // namespace

std::string to_string(TaskKind k) {
    for (const auto &[kind, name] : kind_names()) {
        if (kind == k) {
            return name;
        }
    }
    return "?";
}

TaskKind task_kind_from_string(const std::string &s) {
    for (const auto &[kind, name] : kind_names()) {
        if (name == s) {
            return kind;
        }
    }
    throw ConfigError("unknown task kind '" + s + "'");
}

// ---- corpus ----

TaskInstance TaskInstance::from_json(const json &j) {
    TaskInstance t;
    try {
        t.id = j.at("id").get<std::string>();
        t.kind = task_kind_from_string(j.at("kind").get<std::string>());
        t.query = j.value("query", std::string());
        if (j.contains("images")) {
            for (const auto &im : j.at("images")) {
                InputImage in;
                if (im.is_string()) {
                    in.image = ImageRef{im.get<std::string>(), 0, 0};
                    t.images.push_back(std::move(in));
                    continue;
                }
                in.name = im.value("name", std::string());
                in.image = ImageRef{im.at("handle").get<std::string>(), im.value("width", 0), im.value("height", 0)};
                t.images.push_back(std::move(in));
            }
        }
        if (j.contains("frame_scores")) {
            t.frame_scores = j.at("frame_scores").get<std::vector<double>>();
        }
        t.gold = j.at("gold");
    } catch (const json::exception &e) {
        throw ConfigError("task instance: " + std::string(e.what()));
    }

    const auto bad = [&](const std::string &why) { return ConfigError("instance " + t.id + ": " + why); };
    if (t.kind == TaskKind::VideoQa) {
        if (t.frame_scores.empty()) {
            throw bad("video-qa needs frame_scores");
        }
        if (!t.gold.is_array() || t.gold.size() != 2 || !t.gold[0].is_number_unsigned() ||
            !t.gold[1].is_number_unsigned() || t.gold[0].get<std::size_t>() > t.gold[1].get<std::size_t>()) {
            throw bad("video-qa gold must be [start, end] frame indices");
        }
        return t;
    }
    if (t.images.empty()) {
        throw bad("needs at least one image");
    }
    if (t.query.empty()) {
        throw bad("empty query");
    }
    switch (t.kind) {
    case TaskKind::Qa:
    case TaskKind::Editing:
        if (!t.gold.is_string()) {
            throw bad("gold must be a string");
        }
        break;
    case TaskKind::Grounding:
        if (!is_box(t.gold)) {
            throw bad("gold must be a box [x0,y0,x1,y1]");
        }
        box_from(t.gold);
        break;
    case TaskKind::Nlvr:
        if (!t.gold.is_boolean()) {
            throw bad("gold must be a boolean");
        }
        break;
    case TaskKind::Abstract:
        if (!t.gold.is_number_unsigned() || t.gold.get<std::size_t>() >= t.images.size()) {
            throw bad("gold must index one of the images");
        }
        break;
    case TaskKind::VideoQa:
        break;
    }
    return t;
}

json TaskInstance::to_json() const {
    ordered_json j;
    j["id"] = id;
    j["kind"] = vpv::to_string(kind);
    if (!query.empty()) {
        j["query"] = query;
    }
    if (!images.empty()) {
        json arr = json::array();
        for (const auto &im : images) {
            json o = {{"handle", im.image.handle}, {"width", im.image.width}, {"height", im.image.height}};
            if (!im.name.empty()) {
                o["name"] = im.name;
            }
            arr.push_back(std::move(o));
        }
        j["images"] = arr;
    }
    if (!frame_scores.empty()) {
        j["frame_scores"] = frame_scores;
    }
    j["gold"] = gold;
    return json::parse(j.dump());
}

std::vector<TaskInstance> parse_corpus(std::istream &in, const std::string &origin) {
    std::vector<TaskInstance> out;
    std::set<std::string> ids;
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error &e) {
            throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
        }
        auto t = TaskInstance::from_json(j);
        if (!ids.insert(t.id).second) {
            throw ConfigError(origin + ":" + std::to_string(n) + ": duplicate id " + t.id);
        }
        out.push_back(std::move(t));
    }
    if (out.empty()) {
        throw ConfigError(origin + ": empty corpus");
    }
    return out;
}

std::vector<TaskInstance> load_corpus(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open corpus " + path.string());
    }
    return parse_corpus(in, path.string());
}

void save_corpus(const std::vector<TaskInstance> &corpus, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write " + path.string());
    }
    for (const auto &t : corpus) {
        out << t.to_json().dump() << '\n';
    }
}

// ---- metrics helpers ----

double iou(const Box &a, const Box &b) {
    const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) {
        return a == b ? 1.0 : 0.0;
    }
    return std::clamp(inter / uni, 0.0, 1.0);
}

double interval_iou(std::size_t a0, std::size_t a1, std::size_t b0, std::size_t b1) {
    const std::size_t lo = std::max(a0, b0), hi = std::min(a1, b1);
    const double inter = hi >= lo ? static_cast<double>(hi - lo + 1) : 0.0;
    const double uni = static_cast<double>(a1 - a0 + 1) + static_cast<double>(b1 - b0 + 1) - inter;
    return inter / uni;
}

namespace {

std::vector<double> average_ranks(const std::vector<double> &v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) {
            ++j;
        }
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    return r;
}

} // namespace

double spearman(const std::vector<double> &x, const std::vector<double> &y) {
    if (x.size() != y.size()) {
        throw DimensionMismatch("spearman needs paired samples");
    }
    if (x.size() < 2) {
        return 0.0;
    }
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        return 0.0;
    }
    return sxy / std::sqrt(sxx * syy);
}

InstanceScore score_prediction(TaskKind kind, const json &prediction, const json &gold) {
    InstanceScore s;
    const bool overlap_kind = kind == TaskKind::Grounding || kind == TaskKind::VideoQa;
    if (overlap_kind) {
        s.overlap = 0.0;
    }
    if (prediction.is_null()) {
        return s;
    }
    const json &p = unwrap(prediction);
    switch (kind) {
    case TaskKind::Qa:
        if (p.contains("text")) {
            s.correct = normalize(p.at("text").get<std::string>()) == normalize(gold.get<std::string>());
        } else if (p.contains("number")) {
            s.correct = number_text(p.at("number").get<double>()) == normalize(gold.get<std::string>());
        } else if (p.contains("bool")) {
            s.correct = (p.at("bool").get<bool>() ? "yes" : "no") == normalize(gold.get<std::string>());
        }
        break;
    case TaskKind::Grounding:
        if (p.contains("box")) {
            s.overlap = iou(box_from(p.at("box")), box_from(gold));
            s.correct = *s.overlap >= 0.5;
        }
        break;
    case TaskKind::Nlvr:
        if (p.contains("bool")) {
            s.correct = p.at("bool").get<bool>() == gold.get<bool>();
        } else if (p.contains("text")) {
            const std::string t = normalize(p.at("text").get<std::string>());
            const bool yes = t == "yes" || t == "true";
            const bool no = t == "no" || t == "false";
            s.correct = (yes || no) && yes == gold.get<bool>();
        }
        break;
    case TaskKind::Abstract:
        if (p.contains("index")) {
            s.correct = p.at("index").get<long long>() == gold.get<long long>();
        }
        break;
    case TaskKind::Editing:
        if (p.contains("image")) {
            s.correct = p.at("image").get<std::string>() == gold.get<std::string>();
        }
        break;
    case TaskKind::VideoQa:
        if (p.contains("interval")) {
            const auto &iv = p.at("interval");
            s.overlap = interval_iou(iv.at(0).get<std::size_t>(), iv.at(1).get<std::size_t>(),
                                     gold.at(0).get<std::size_t>(), gold.at(1).get<std::size_t>());
            s.correct = *s.overlap >= 0.5;
        }
        break;
    }
    return s;
}

json InstanceRecord::to_json() const {
    ordered_json j;
    j["type"] = "result";
    j["id"] = id;
    j["kind"] = vpv::to_string(kind);
    j["prediction"] = prediction;
    j["gold"] = gold;
    j["error"] = error;
    j["plan"] = {{"outputs", plan_outputs}, {"unexecutable", plan_unexecutable}, {"steps", plan_steps}};
    j["path"] = path;
    j["mean_score"] = mean_score ? json(*mean_score) : json(nullptr);
    return json::parse(j.dump());
}

InstanceRecord InstanceRecord::from_json(const json &j) {
    InstanceRecord r;
    try {
        r.id = j.at("id").get<std::string>();
        r.kind = task_kind_from_string(j.at("kind").get<std::string>());
        r.prediction = j.at("prediction");
        r.gold = j.at("gold");
        r.error = j.value("error", std::string());
        const auto &plan = j.at("plan");
        r.plan_outputs = plan.at("outputs").get<int>();
        r.plan_unexecutable = plan.at("unexecutable").get<int>();
        r.plan_steps = plan.at("steps").get<std::vector<int>>();
        r.path = j.value("path", std::vector<int>{});
        if (j.contains("mean_score") && !j.at("mean_score").is_null()) {
            r.mean_score = j.at("mean_score").get<double>();
        }
    } catch (const json::exception &e) {
        throw ConfigError("result record: " + std::string(e.what()));
    }
    return r;
}

ordered_json compute_metrics(const std::vector<InstanceRecord> &records_in) {
    std::vector<const InstanceRecord *> records;
    for (const auto &r : records_in) {
        records.push_back(&r);
    }
    std::sort(records.begin(), records.end(), [](const auto *a, const auto *b) { return a->id < b->id; });

    struct Acc {
        int n = 0, correct = 0, overlaps = 0;
        double overlap_sum = 0.0;
    };
    std::map<TaskKind, Acc> by_kind;
    Acc all;
    int answered = 0, errors = 0;
    long outputs = 0, unexecutable = 0, programs = 0, steps = 0;
    for (const auto *r : records) {
        const auto s = score_prediction(r->kind, r->prediction, r->gold);
        for (Acc *a : {&all, &by_kind[r->kind]}) {
            ++a->n;
            a->correct += s.correct ? 1 : 0;
            if (s.overlap) {
                ++a->overlaps;
                a->overlap_sum += *s.overlap;
            }
        }
        answered += r->prediction.is_null() ? 0 : 1;
        errors += r->error.empty() ? 0 : 1;
        outputs += r->plan_outputs;
        unexecutable += r->plan_unexecutable;
        programs += static_cast<long>(r->plan_steps.size());
        steps += std::accumulate(r->plan_steps.begin(), r->plan_steps.end(), 0L);
    }

    ordered_json m;
    m["instances"] = all.n;
    m["answered"] = answered;
    m["errors"] = errors;
    m["accuracy"] = all.n ? static_cast<double>(all.correct) / all.n : 0.0;
    ordered_json kinds = ordered_json::object();
    for (const auto &[kind, a] : by_kind) {
        ordered_json k;
        k["instances"] = a.n;
        k["correct"] = a.correct;
        k["accuracy"] = static_cast<double>(a.correct) / a.n;
        if (a.overlaps) {
            k["mean_iou"] = a.overlap_sum / a.overlaps;
        }
        kinds[to_string(kind)] = std::move(k);
    }
    m["by_kind"] = std::move(kinds);
    ordered_json plan;
    plan["outputs"] = outputs;
    plan["unexecutable"] = unexecutable;
    plan["unexecutable_rate"] = outputs ? static_cast<double>(unexecutable) / static_cast<double>(outputs) : 0.0;
    plan["mean_steps"] = programs ? static_cast<double>(steps) / static_cast<double>(programs) : 0.0;
    m["plan"] = std::move(plan);
    return m;
}

// ---- configuration ----

RunConfig RunConfig::from_json(const json &j, const std::filesystem::path &base_dir) {
    RunConfig c;
    c.base_dir = base_dir;
    try {
        c.pipeline.flags = Flags::from_json(j.value("flags", json("row5")));

        const json s = j.value("search", json::object());
        auto &sp = c.pipeline.search;
        sp.K = s.value("K", sp.K);
        sp.P = s.value("P", sp.P);
        sp.B = s.value("B", sp.B);
        sp.top_m = s.value("top_m", sp.top_m);
        sp.max_depth = s.value("max_depth", sp.max_depth);
        if (s.contains("psc_gate") && !s.at("psc_gate").is_null()) {
            sp.psc_gate = s.at("psc_gate").get<double>();
        }
        sp.psc_enabled = c.pipeline.flags.psc;
        sp.check();

        c.pipeline.verification.seed = j.value("seed", std::uint64_t{0});
        const std::string policy = j.value("negative_policy", std::string("sampled"));
        if (policy == "sampled") {
            c.pipeline.verification.policy = NegativePolicy::Sampled;
        } else if (policy == "lowest") {
            c.pipeline.verification.policy = NegativePolicy::Lowest;
        } else {
            throw ConfigError("negative_policy must be 'sampled' or 'lowest'");
        }
        c.pipeline.plan_seed = j.value("plan_seed", std::uint64_t{0});

        c.registry = resolve(base_dir, j.at("registry").get<std::string>());
        c.backends = j.at("backends");
        if (j.contains("negatives")) {
            c.negatives = resolve(base_dir, j.at("negatives").get<std::string>());
        }

        if (j.contains("planner_examples")) {
            const json ex = j.at("planner_examples").is_string()
                                ? read_json(resolve(base_dir, j.at("planner_examples").get<std::string>()))
                                : j.at("planner_examples");
            for (const auto &e : ex) {
                c.pipeline.examples.push_back({e.at("query").get<std::string>(), e.at("program").get<std::string>()});
            }
        }

        if (j.contains("rank_prompts")) {
            for (const auto &[kind, path] : j.at("rank_prompts").items()) {
                c.rank_templates[task_kind_from_string(kind)] = read_text(resolve(base_dir, path.get<std::string>()));
            }
        }
        c.workers = std::max(1, j.value("workers", 1));
    } catch (const json::exception &e) {
        throw ConfigError("run config: " + std::string(e.what()));
    } catch (const std::invalid_argument &e) {
        throw ConfigError("run config: " + std::string(e.what()));
    }
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path &path) {
    return from_json(read_json(path), path.parent_path());
}

RunResources RunResources::build(const RunConfig &cfg) {
    RunResources r{ModuleRegistry::load(cfg.registry.string()), BackendSuite::from_config(cfg.backends, cfg.base_dir),
                   NegativeVocabulary()};
    if (cfg.negatives) {
        r.vocab = NegativeVocabulary::load(*cfg.negatives);
    }
    return r;
}

// ---- running ----

namespace {

Environment bind_inputs(const std::vector<InputImage> &images) {
    Environment env;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const std::string name =
            !images[i].name.empty() ? images[i].name : (i == 0 ? std::string("IMAGE") : "IMAGE" + std::to_string(i));
        env = env.bind(name, images[i].image);
    }
    return env;
}

void absorb_plan(InstanceRecord &rec, const PlanOutcome &plan) {
    rec.plan_outputs += plan.outputs;
    rec.plan_unexecutable += plan.unexecutable;
    for (const auto &p : plan.programs) {
        rec.plan_steps.push_back(static_cast<int>(p->size()));
    }
}

std::optional<double> path_mean(const SearchResult &r) {
    if (r.path.empty() || r.path.back()->scored_count == 0) {
        return std::nullopt;
    }
    return r.path.back()->cum_score;
}

} // namespace

InstanceRecord run_instance(const TaskInstance &inst, const RunConfig &cfg, RunResources &res, TraceSink &sink,
                            InstanceTiming *timing) {
    const auto t0 = Clock::now();
    InstanceRecord rec;
    rec.id = inst.id;
    rec.kind = inst.kind;
    rec.gold = inst.gold;
    rec.prediction = nullptr;
    double planning_ms = 0.0, module_ms = 0.0;

    if (inst.kind == TaskKind::VideoQa) {
        const auto seg = locate_temporal_segment(inst.frame_scores);
        rec.prediction = {{"interval", {seg.start, seg.end}}};
    } else {
        PipelineConfig pc = cfg.pipeline;
        if (const auto it = cfg.rank_templates.find(inst.kind); it != cfg.rank_templates.end()) {
            pc.rank_template = it->second;
        }
        Pipeline pipeline(res.registry, res.backends, res.vocab, pc);

        auto account = [&](const SolveOutcome &o) {
            absorb_plan(rec, o.plan);
            planning_ms += o.plan.planning_ms;
            if (o.result) {
                module_ms += o.result->stats.exec_ms + o.result->stats.verify_ms;
            }
        };

        if (inst.kind == TaskKind::Abstract) {
            // One pass per candidate image; the prediction is the image with the highest score.
            std::optional<std::size_t> best;
            double best_score = 0.0, score_sum = 0.0;
            int scored = 0;
            std::vector<std::string> errs;
            for (std::size_t i = 0; i < inst.images.size(); ++i) {
                sink.record({{"type", "image"}, {"index", i}});
                const auto o = pipeline.solve(inst.query, bind_inputs({{"IMAGE", inst.images[i].image}}), &sink);
                account(o);
                if (!o.result) {
                    errs.push_back("image " + std::to_string(i) + ": " + o.error);
                    continue;
                }
                const double *num = o.result->answer.get_if<double>();
                if (!num) {
                    errs.push_back("image " + std::to_string(i) + ": answer is not a number");
                    continue;
                }
                if (!best || *num > best_score) {
                    best = i;
                    best_score = *num;
                    rec.path.clear();
                    for (const auto &n : o.result->path) {
                        rec.path.push_back(n->id);
                    }
                }
                if (const auto m = path_mean(*o.result)) {
                    score_sum += *m;
                    ++scored;
                }
            }
            if (best) {
                rec.prediction = {{"index", *best}};
            }
            if (scored) {
                rec.mean_score = score_sum / scored;
            }
            for (const auto &e : errs) {
                rec.error += (rec.error.empty() ? "" : "; ") + e;
            }
        } else {
            const auto o = pipeline.solve(inst.query, bind_inputs(inst.images), &sink);
            account(o);
            if (o.result) {
                rec.prediction = to_json(o.result->answer);
                for (const auto &n : o.result->path) {
                    rec.path.push_back(n->id);
                }
                rec.mean_score = path_mean(*o.result);
            } else {
                rec.error = o.error;
            }
        }
    }
    sink.record(rec.to_json());
    if (timing) {
        timing->id = inst.id;
        timing->total_ms = ms_since(t0);
        timing->planning_ms = planning_ms;
        timing->module_ms = module_ms;
    }
    return rec;
}

RunOutput run_benchmark(const std::vector<TaskInstance> &corpus, const RunConfig &cfg, RunResources &res) {
    if (corpus.empty()) {
        throw ConfigError("empty corpus");
    }
    if (!res.backends.healthy()) {
        throw ConfigError("backend health check failed");
    }
    RunOutput out;
    out.records.resize(corpus.size());
    out.traces.resize(corpus.size());
    out.timings.resize(corpus.size());

    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (std::size_t i = next++; i < corpus.size(); i = next++) {
            try {
                std::ostringstream buf;
                JsonlTraceSink sink(buf);
                out.records[i] = run_instance(corpus[i], cfg, res, sink, &out.timings[i]);
                out.traces[i] = buf.str();
                if (!out.records[i].error.empty()) {
                    spdlog::warn("instance {}: {}", corpus[i].id, out.records[i].error);
                }
            } catch (...) {
                std::lock_guard lock(err_mu);
                if (!first_error) {
                    first_error = std::current_exception();
                }
                next = corpus.size();
            }
        }
    };
    const int n = std::min<int>(cfg.workers, static_cast<int>(corpus.size()));
    if (n <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n; ++i) {
            pool.emplace_back(worker);
        }
        for (auto &t : pool) {
            t.join();
        }
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
    out.metrics = compute_metrics(out.records);
    return out;
}

void write_run(const RunOutput &out, const std::filesystem::path &dir) {
    std::filesystem::create_directories(dir / "traces");
    for (std::size_t i = 0; i < out.records.size(); ++i) {
        std::ofstream f(dir / "traces" / (safe_name(out.records[i].id) + ".jsonl"), std::ios::binary);
        f << out.traces[i];
    }
    {
        std::ofstream f(dir / "metrics.json", std::ios::binary);
        f << out.metrics.dump(2) << '\n';
    }
    ordered_json t;
    double total = 0.0, planning = 0.0, module = 0.0;
    ordered_json per = ordered_json::array();
    for (const auto &x : out.timings) {
        total += x.total_ms;
        planning += x.planning_ms;
        module += x.module_ms;
        per.push_back({{"id", x.id}, {"total_ms", x.total_ms}, {"planning_ms", x.planning_ms},
                       {"module_ms", x.module_ms}});
    }
    t["total_ms"] = total;
    t["planning_ms"] = planning;
    t["module_ms"] = module;
    t["instances"] = std::move(per);
    std::ofstream f(dir / "timings.json", std::ios::binary);
    f << t.dump(2) << '\n';
}

std::vector<InstanceRecord> read_trace_records(const std::filesystem::path &dir) {
    const auto root = std::filesystem::is_directory(dir / "traces") ? dir / "traces" : dir;
    if (!std::filesystem::is_directory(root)) {
        throw ConfigError("no trace directory at " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto &e : std::filesystem::directory_iterator(root)) {
        if (e.is_regular_file() && e.path().extension() == ".jsonl") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<InstanceRecord> out;
    for (const auto &f : files) {
        std::ifstream in(f);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) {
                continue;
            }
            const json j = json::parse(line);
            if (j.value("type", std::string()) == "result") {
                out.push_back(InstanceRecord::from_json(j));
            }
        }
    }
    if (out.empty()) {
        throw ConfigError("no result records under " + root.string());
    }
    std::sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.id < b.id; });
    return out;
}

// ---- score distributions ----

namespace {

std::pair<double, double> mean_var(const std::vector<double> &v) {
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) {
        ss += (x - mean) * (x - mean);
    }
    return {mean, ss / n};
}

long bin_of(double x, double w) { return static_cast<long>(std::floor(x / w + 1e-9)); }

} // namespace

ScoreDistribution score_distribution_report(const std::vector<double> &with_trs, const std::vector<double> &without_trs,
                                            double bin_width) {
    if (with_trs.empty() || without_trs.empty()) {
        throw EmptyInput("score distribution needs traces for both conditions");
    }
    if (!(bin_width > 0.0)) {
        throw std::invalid_argument("bin width must be positive");
    }
    ScoreDistribution d;
    d.bin_width = bin_width;
    long lo = bin_of(with_trs.front(), bin_width), hi = lo;
    for (const auto *side : {&with_trs, &without_trs}) {
        for (double x : *side) {
            lo = std::min(lo, bin_of(x, bin_width));
            hi = std::max(hi, bin_of(x, bin_width));
        }
    }
    for (long b = lo; b <= hi; ++b) {
        d.bins.push_back({static_cast<double>(b) * bin_width, static_cast<double>(b + 1) * bin_width, 0, 0});
    }
    for (double x : with_trs) {
        ++d.bins[static_cast<std::size_t>(bin_of(x, bin_width) - lo)].with_trs;
    }
    for (double x : without_trs) {
        ++d.bins[static_cast<std::size_t>(bin_of(x, bin_width) - lo)].without_trs;
    }
    std::tie(d.mean_with, d.var_with) = mean_var(with_trs);
    std::tie(d.mean_without, d.var_without) = mean_var(without_trs);
    return d;
}

ordered_json ScoreDistribution::to_json() const {
    ordered_json j;
    j["bin_width"] = bin_width;
    ordered_json arr = ordered_json::array();
    for (const auto &b : bins) {
        arr.push_back({{"lo", b.lo}, {"hi", b.hi}, {"with_trs", b.with_trs}, {"without_trs", b.without_trs}});
    }
    j["bins"] = std::move(arr);
    j["with_trs"] = {{"mean", mean_with}, {"variance", var_with}};
    j["without_trs"] = {{"mean", mean_without}, {"variance", var_without}};
    return j;
}

std::string ScoreDistribution::table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "bin               with_trs  without_trs\n";
    for (const auto &b : bins) {
        os << "[" << std::setw(5) << b.lo << ", " << std::setw(5) << b.hi << ")    " << std::setw(8) << b.with_trs
           << "  " << std::setw(11) << b.without_trs << "\n";
    }
    os << std::setprecision(4);
    os << "mean              " << std::setw(8) << mean_with << "  " << std::setw(11) << mean_without << "\n";
    os << "variance          " << std::setw(8) << var_with << "  " << std::setw(11) << var_without << "\n";
    return os.str();
}

} // namespace vpv
