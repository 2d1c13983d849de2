#include "vpv/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "vpv/error.hpp"
#include "vpv/random.hpp"

namespace vpv {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const char *const kItm = "a photo of {object}";
const char *const kCaption = "the image describe {object}";
const char *const kVqa = "Is there any {object} in the image?";

std::string padded(std::size_t i, int width) {
    std::ostringstream os;
    os << std::setw(width) << std::setfill('0') << i;
    return os.str();
}

json unit_vec(double s) {
    std::vector<double> v(kSimulationEmbeddingDim, 0.0);
    v[0] = s;
    v[1] = std::sqrt(std::max(0.0, 1.0 - s * s));
    return v;
}

json yes_no_reply(double s) { return json::array({{{"answer", "yes"}, {"p", (1.0 + s) / 2.0}}, {{"answer", "no"}, {"p", (1.0 - s) / 2.0}}}); }

json sim_registry(double tau) {
    return {{"inputs", {{"IMAGE", "Image"}}},
            {"terminal", "RESULT"},
            {"top_k", 4},
            {"default_tau", tau},
            {"modules",
             json::array({{{"name", "VQA"},
                           {"args", json::array({{{"name", "image"}, {"type", "Image"}},
                                                 {{"name", "question"}, {"type", "Text"}}})},
                           {"output", "Text"},
                           {"tau", tau},
                           {"verifiers", {{"itm", kItm}, {"caption", kCaption}, {"vqa", kVqa}}}},
                          {{"name", "RESULT"},
                           {"args", json::array({{{"name", "var"}, {"type", "Any"}}})},
                           {"output", "Any"},
                           {"verifiable", false}}})}};
}

std::string last_line(const std::string &trace) {
    std::string t = trace;
    while (!t.empty() && t.back() == '\n') {
        t.pop_back();
    }
    const auto nl = t.rfind('\n');
    return nl == std::string::npos ? t : t.substr(nl + 1);
}

bool ends_with(const std::string &s, const std::string &suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

SyntheticBenchmark generate_benchmark(const SimulationConfig &cfg) {
    if (cfg.instances == 0 || cfg.programs == 0 || cfg.candidates == 0) {
        throw ConfigError("simulation needs instances, programs and candidates");
    }
    if (cfg.vocabulary < cfg.candidates + 1) {
        throw ConfigError("simulation vocabulary must exceed the candidate count");
    }
    if (!(cfg.strength >= 0.0 && cfg.strength <= 1.0)) {
        throw ConfigError("strength must lie in [0,1]");
    }

    SyntheticBenchmark b;
    b.config = cfg;
    b.fixtures = std::make_shared<FixtureTable>();
    b.registry = sim_registry(cfg.tau);
    b.vocab = NegativeVocabulary(0.5);

    std::vector<std::string> words;
    for (std::size_t w = 0; w < cfg.vocabulary; ++w) {
        words.push_back("obj" + padded(w, 3));
        b.vocab.add(words.back(), "not" + padded(w, 3), 0.1);
    }
    auto opposite = [&](const std::string &w) { return "not" + w.substr(3); };

    const std::set<std::size_t> malformed(cfg.malformed.begin(), cfg.malformed.end());
    auto &fx = *b.fixtures;
    for (std::size_t i = 0; i < cfg.instances; ++i) {
        rnd::Engine g(rnd::mix(cfg.seed, i));
        const std::string id = "sim" + padded(i, 5);
        const std::string image = "img" + padded(i, 5);
        const std::string query = "which object is shown in scene " + std::to_string(i) + "?";
        const std::string gold = words[rnd::below(g, words.size())];

        TaskInstance t;
        t.id = id;
        t.kind = TaskKind::Qa;
        t.query = query;
        t.images.push_back({"", ImageRef{image, 64, 64}});
        t.gold = gold;
        b.corpus.push_back(t);
        b.gold_by_query[query] = gold;

        fx.add("embed", {{"kind", "image"}, {"image", image}}, unit_vec(1.0));
        fx.add("caption", {{"image", image}}, "scene " + std::to_string(i));
        fx.add("embed", {{"kind", "text"}, {"text", "scene " + std::to_string(i)}}, unit_vec(1.0));

        // Planted verifier scores per (instance, answer), shared by every program.
        struct Planted {
            double itm, cap, vqa, n_itm, n_cap, n_vqa;
        };
        std::map<std::string, Planted> planted;
        auto planted_for = [&](const std::string &answer) -> const Planted & {
            auto it = planted.find(answer);
            if (it == planted.end()) {
                const double truth = answer == gold ? 1.0 : 0.0;
                auto s = [&] { return cfg.strength * truth + (1.0 - cfg.strength) * rnd::unit(g); };
                auto n = [&] { return rnd::uniform(g, 0.0, cfg.negative_max); };
                Planted p;
                p.itm = s();
                p.cap = s();
                p.vqa = s();
                p.n_itm = n();
                p.n_cap = n();
                p.n_vqa = n();
                it = planted.emplace(answer, p).first;
            }
            return it->second;
        };

        std::vector<bool> correct_flags;
        for (std::size_t j = 0; j < cfg.programs; ++j) {
            const std::string question = "which object appears in scene " + std::to_string(i) + " view " +
                                         std::to_string(j) + "?";
            std::string program = "ANS0=VQA(image=IMAGE,question='" + question + "')\nFINAL=RESULT(var=ANS0)\n";
            if (j == 0 && malformed.contains(i)) {
                program = "ANS0=VQA(image=IMAGE,question='" + question + "'\nFINAL=RESULT(var=ANS0)\n";
            }
            fx.add("plan", {{"query", query}, {"seed", static_cast<std::uint64_t>(j)}}, program);

            const bool correct = rnd::bernoulli(g, cfg.plan_correct);
            correct_flags.push_back(correct && !(j == 0 && malformed.contains(i)));

            std::vector<std::string> answers;
            std::vector<std::string> pool;
            for (const auto &w : words) {
                if (w != gold) {
                    pool.push_back(w);
                }
            }
            rnd::shuffle(pool, g);
            for (std::size_t k = 0; k < cfg.candidates; ++k) {
                answers.push_back(pool[k]);
            }
            std::vector<double> p(cfg.candidates);
            for (auto &x : p) {
                x = rnd::uniform(g, 0.05, 1.0);
            }
            const double total = std::accumulate(p.begin(), p.end(), 0.0);
            for (auto &x : p) {
                x /= total;
            }
            std::sort(p.begin(), p.end(), std::greater<>());
            if (correct) {
                const std::size_t slot =
                    rnd::bernoulli(g, cfg.top_correct) || cfg.candidates == 1 ? 0 : 1 + rnd::below(g, cfg.candidates - 1);
                answers[slot] = gold;
            }

            json reply = json::array();
            for (std::size_t k = 0; k < cfg.candidates; ++k) {
                reply.push_back({{"answer", answers[k]}, {"p", p[k]}});
                const Planted &s = planted_for(answers[k]);
                const std::string pos = qa_to_sentence(question, answers[k]);
                const std::string neg = qa_to_sentence(question, opposite(answers[k]));
                fx.add("embed", {{"kind", "text"}, {"text", fill_template(kItm, pos)}}, unit_vec(s.itm));
                fx.add("embed", {{"kind", "text"}, {"text", fill_template(kItm, neg)}}, unit_vec(s.n_itm));
                fx.add("embed", {{"kind", "text"}, {"text", fill_template(kCaption, pos)}}, unit_vec(s.cap));
                fx.add("embed", {{"kind", "text"}, {"text", fill_template(kCaption, neg)}}, unit_vec(s.n_cap));
                fx.add("vqa", {{"image", image}, {"question", fill_template(kVqa, pos)}}, yes_no_reply(s.vqa));
                fx.add("vqa", {{"image", image}, {"question", fill_template(kVqa, neg)}}, yes_no_reply(s.n_vqa));
            }
            fx.add("vqa", {{"image", image}, {"question", question}}, reply);
        }
        b.plan_correct.push_back(std::move(correct_flags));
    }
    return b;
}

std::vector<std::size_t> OracleRanker::rank(const std::vector<std::string> &traces, const std::string &instruction) {
    const auto it = gold_.find(instruction);
    if (it == gold_.end()) {
        throw RankUnavailable("oracle has no gold answer for the instruction");
    }
    std::vector<std::size_t> order(traces.size());
    std::iota(order.begin(), order.end(), 0);
    std::uint64_t h = rnd::fnv1a(instruction);
    for (const auto &t : traces) {
        h = rnd::fnv1a(t, h);
    }
    rnd::Engine g(h);
    if (!rnd::bernoulli(g, bias_)) {
        return order;
    }
    const std::string suffix = "-> '" + it->second + "'";
    std::stable_partition(order.begin(), order.end(),
                          [&](std::size_t i) { return ends_with(last_line(traces[i]), suffix); });
    return order;
}

std::vector<std::size_t> RecordingRanker::rank(const std::vector<std::string> &traces, const std::string &instruction) {
    auto order = inner_->rank(traces, instruction);
    std::string reply;
    for (std::size_t i = 0; i < order.size(); ++i) {
        reply += (i ? "," : "") + std::to_string(order[i] + 1);
    }
    std::lock_guard lock(mu_);
    sink_->add("rank", {{"traces", traces}, {"instruction", instruction}}, reply);
    return order;
}

RunResources simulation_resources(const SyntheticBenchmark &bench, bool oracle) {
    RunResources r{ModuleRegistry::from_json(bench.registry),
                   BackendSuite::over(std::make_shared<FixtureTransport>(bench.fixtures, "simulation"),
                                      kSimulationEmbeddingDim),
                   bench.vocab};
    if (oracle) {
        r.backends.ranker = std::make_shared<OracleRanker>(bench.gold_by_query);
    }
    return r;
}

RunConfig simulation_run_config(const Flags &flags, const SearchParams &search, std::uint64_t seed) {
    RunConfig c;
    c.pipeline.flags = flags;
    c.pipeline.search = search;
    c.pipeline.search.psc_enabled = flags.psc;
    c.pipeline.verification.seed = seed;
    c.pipeline.verification.policy = NegativePolicy::Lowest;
    c.pipeline.rank_template = "{query}";
    c.rank_templates[TaskKind::Qa] = "{query}";
    c.workers = 1;
    return c;
}

RunOutput run_simulation(const SyntheticBenchmark &bench, const Flags &flags, const SearchParams &search) {
    auto res = simulation_resources(bench);
    SearchParams sp = search;
    sp.B = std::min(sp.B, bench.config.programs);
    return run_benchmark(bench.corpus, simulation_run_config(flags, sp), res);
}

namespace {

struct Observed {
    std::vector<double> scores;
    std::vector<double> correct;
    double accuracy = 0.0;
};

Observed observe(const SimulationConfig &cfg) {
    SimulationConfig c = cfg;
    c.tau = 1.0;
    const auto bench = generate_benchmark(c);
    const auto out = run_simulation(bench, Flags::preset("row2"));
    Observed o;
    int right = 0;
    for (const auto &r : out.records) {
        const bool ok = score_prediction(r.kind, r.prediction, r.gold).correct;
        right += ok ? 1 : 0;
        if (r.mean_score) {
            o.scores.push_back(*r.mean_score);
            o.correct.push_back(ok ? 1.0 : 0.0);
        }
    }
    o.accuracy = out.records.empty() ? 0.0 : static_cast<double>(right) / static_cast<double>(out.records.size());
    return o;
}

double mean(const std::vector<double> &v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace

CorrelationReport correlation_study(const SimulationConfig &base, const std::vector<double> &plan_probabilities) {
    CorrelationReport rep;
    rep.strength = base.strength;
    rep.instances = base.instances;
    const auto main = observe(base);
    rep.rho_instances = spearman(main.scores, main.correct);

    std::vector<double> xs, ys;
    for (double p : plan_probabilities) {
        SimulationConfig c = base;
        c.plan_correct = p;
        const auto o = observe(c);
        rep.settings.push_back({p, mean(o.scores), o.accuracy, o.scores.size()});
        xs.push_back(rep.settings.back().mean_score);
        ys.push_back(o.accuracy);
    }
    rep.rho_settings = spearman(xs, ys);
    return rep;
}

ordered_json CorrelationReport::to_json() const {
    ordered_json j;
    j["strength"] = strength;
    j["instances"] = instances;
    j["rho_instances"] = rho_instances;
    ordered_json arr = ordered_json::array();
    for (const auto &s : settings) {
        arr.push_back({{"plan_correct", s.plan_correct}, {"mean_score", s.mean_score}, {"accuracy", s.accuracy},
                       {"n", s.n}});
    }
    j["settings"] = std::move(arr);
    j["rho_settings"] = rho_settings;
    return j;
}

std::string CorrelationReport::table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "plan_correct  mean_score  accuracy     n\n";
    for (const auto &s : settings) {
        os << std::setw(12) << s.plan_correct << "  " << std::setw(10) << s.mean_score << "  " << std::setw(8)
           << s.accuracy << "  " << std::setw(4) << s.n << "\n";
    }
    os << "spearman (per trace, strength " << strength << ", n=" << instances << "): " << rho_instances << "\n";
    os << "spearman (across settings): " << rho_settings << "\n";
    return os.str();
}

ScoreDistribution simulated_score_distribution(const SimulationConfig &cfg) {
    const auto bench = generate_benchmark(cfg);
    auto collect = [&](const Flags &f) {
        std::vector<double> v;
        for (const auto &r : run_simulation(bench, f).records) {
            if (r.mean_score) {
                v.push_back(*r.mean_score);
            }
        }
        return v;
    };
    return score_distribution_report(collect(Flags::preset("row3")), collect(Flags::preset("row2")));
}

void emit_benchmark(const SyntheticBenchmark &bench, const std::filesystem::path &dir, const Flags &flags) {
    std::filesystem::create_directories(dir / "prompts");
    auto recorded = std::make_shared<FixtureTable>();
    {
        auto res = simulation_resources(bench);
        res.backends.ranker =
            std::make_shared<RecordingRanker>(std::make_shared<OracleRanker>(bench.gold_by_query), recorded);
        run_benchmark(bench.corpus, simulation_run_config(flags), res);
    }
    FixtureTable all = *bench.fixtures;
    all.merge(*recorded);
    all.save(dir / "fixtures.json");

    save_corpus(bench.corpus, dir / "corpus.jsonl");
    auto write = [&](const std::string &name, const std::string &text) {
        std::ofstream f(dir / name, std::ios::binary);
        f << text;
    };
    write("modules.json", bench.registry.dump(2) + "\n");
    write("negatives.json", bench.vocab.to_json().dump(2) + "\n");
    write("prompts/qa.txt", "{query}");
    const json examples = json::array(
        {{{"query", "which object is on the shelf?"},
          {"program", "ANS0=VQA(image=IMAGE,question='which object is on the shelf?')\nFINAL=RESULT(var=ANS0)"}},
         {{"query", "what is left of the door?"},
          {"program", "ANS0=VQA(image=IMAGE,question='what is left of the door?')\nFINAL=RESULT(var=ANS0)"}}});
    write("planner_examples.json", examples.dump(2) + "\n");

    ordered_json cfg;
    cfg["flags"] = flags.to_json();
    cfg["search"] = {{"K", 4}, {"P", 2}, {"B", std::min<std::size_t>(3, bench.config.programs)}, {"top_m", 1}, {"max_depth", 32}};
    cfg["seed"] = 0;
    cfg["plan_seed"] = 0;
    cfg["negative_policy"] = "lowest";
    cfg["registry"] = "modules.json";
    cfg["negatives"] = "negatives.json";
    cfg["planner_examples"] = "planner_examples.json";
    cfg["rank_prompts"] = {{"qa", "prompts/qa.txt"}};
    cfg["backends"] = {{"embedding_dim", kSimulationEmbeddingDim}, {"default", {{"mock", "fixtures.json"}}}};
    cfg["workers"] = 1;
    write("config.json", cfg.dump(2) + "\n");
}

} // namespace vpv
