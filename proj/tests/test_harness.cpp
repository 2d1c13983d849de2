#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "vpv/error.hpp"
#include "vpv/harness.hpp"
#include "vpv/simulate.hpp"

using namespace vpv;
using fixtures::ScriptedTransport;

namespace {

std::filesystem::path fresh_dir(const std::string &name) {
    const auto d = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

std::string slurp(const std::filesystem::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

SimulationConfig small(std::size_t n = 10) {
    SimulationConfig c;
    c.instances = n;
    return c;
}

} // namespace

TEST(Iou, Examples) {
    EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
    EXPECT_DOUBLE_EQ(iou({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
    EXPECT_NEAR(iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0, 1e-12);
    EXPECT_DOUBLE_EQ(iou({0, 0, 1, 1}, {1, 0, 2, 1}), 0.0); // touching edges
}

TEST(Iou, Properties) {
    rnd::Engine g(4);
    auto box = [&] {
        const double x = rnd::uniform(g, 0, 50), y = rnd::uniform(g, 0, 50);
        return Box{x, y, x + rnd::uniform(g, 0.5, 30), y + rnd::uniform(g, 0.5, 30)};
    };
    for (int i = 0; i < 2000; ++i) {
        const Box a = box(), b = box();
        const double v = iou(a, b);
        EXPECT_DOUBLE_EQ(v, iou(b, a));
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
        if (!(a == b)) {
            EXPECT_LT(v, 1.0);
        }
    }
}

TEST(Metrics, IntervalIouAndSpearman) {
    EXPECT_DOUBLE_EQ(interval_iou(2, 3, 2, 3), 1.0);
    EXPECT_DOUBLE_EQ(interval_iou(0, 1, 2, 3), 0.0);
    EXPECT_DOUBLE_EQ(interval_iou(0, 3, 2, 5), 2.0 / 6.0);
    EXPECT_NEAR(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0, 1e-12);
    EXPECT_NEAR(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0, 1e-12);
    EXPECT_DOUBLE_EQ(spearman({1, 1, 1}, {1, 2, 3}), 0.0);
    // ties take average ranks: x ranks (1, 2.5, 2.5, 4), y ranks (1, 2, 3, 4)
    EXPECT_NEAR(spearman({1, 2, 2, 3}, {1, 2, 3, 4}), 4.5 / std::sqrt(4.5 * 5.0), 1e-12);
}

TEST(Metrics, ScorePredictionPerKind) {
    EXPECT_TRUE(score_prediction(TaskKind::Qa, {{"text", " Lamp "}}, "lamp").correct);
    EXPECT_TRUE(score_prediction(TaskKind::Qa, {{"number", 2.0}}, "2").correct);
    EXPECT_TRUE(score_prediction(TaskKind::Qa, {{"bool", true}}, "yes").correct);
    EXPECT_TRUE(score_prediction(TaskKind::Qa, {{"list", json::array({{{"text", "lamp"}}})}}, "lamp").correct);
    EXPECT_FALSE(score_prediction(TaskKind::Qa, nullptr, "lamp").correct);

    const auto g = score_prediction(TaskKind::Grounding, {{"box", {0, 0, 2, 2}}}, json::array({1, 1, 3, 3}));
    EXPECT_FALSE(g.correct);
    EXPECT_NEAR(*g.overlap, 1.0 / 7.0, 1e-12);
    EXPECT_TRUE(score_prediction(TaskKind::Grounding, {{"box", {0, 0, 2, 2}}}, json::array({0, 0, 2, 2})).correct);
    EXPECT_DOUBLE_EQ(*score_prediction(TaskKind::Grounding, nullptr, json::array({0, 0, 2, 2})).overlap, 0.0);

    EXPECT_TRUE(score_prediction(TaskKind::Nlvr, {{"bool", false}}, false).correct);
    EXPECT_TRUE(score_prediction(TaskKind::Nlvr, {{"text", "Yes"}}, true).correct);
    EXPECT_FALSE(score_prediction(TaskKind::Nlvr, {{"text", "maybe"}}, false).correct);
    EXPECT_TRUE(score_prediction(TaskKind::Abstract, {{"index", 2}}, 2).correct);
    EXPECT_TRUE(score_prediction(TaskKind::Editing, {{"image", "out1"}, {"width", 1}, {"height", 1}}, "out1").correct);
    EXPECT_TRUE(score_prediction(TaskKind::VideoQa, {{"interval", {2, 3}}}, json::array({2, 4})).correct);
    EXPECT_FALSE(score_prediction(TaskKind::VideoQa, {{"interval", {0, 0}}}, json::array({2, 4})).correct);
}

TEST(Corpus, ParseAndValidate) {
    std::istringstream ok(R"({"id":"a","kind":"qa","query":"q?","images":["img1"],"gold":"lamp"}
{"id":"b","kind":"grounding","query":"the cup","images":[{"handle":"img2","width":10,"height":10}],"gold":[0,0,2,2]}

{"id":"c","kind":"video-qa","query":"when?","frame_scores":[1,2,3],"gold":[1,2]}
)");
    const auto corpus = parse_corpus(ok);
    ASSERT_EQ(corpus.size(), 3u);
    EXPECT_EQ(corpus[1].kind, TaskKind::Grounding);
    EXPECT_EQ(corpus[2].frame_scores.size(), 3u);
    EXPECT_EQ(TaskInstance::from_json(corpus[0].to_json()).to_json(), corpus[0].to_json());

    auto bad = [](const std::string &text) {
        std::istringstream in(text);
        return parse_corpus(in);
    };
    EXPECT_THROW(bad(""), ConfigError);
    EXPECT_THROW(bad("{not json}\n"), ConfigError);
    EXPECT_THROW(bad(R"({"id":"a","kind":"qa","query":"q","images":["i"],"gold":3})"), ConfigError);
    EXPECT_THROW(bad(R"({"id":"a","kind":"nlvr","query":"q","images":["i"],"gold":"yes"})"), ConfigError);
    EXPECT_THROW(bad(R"({"id":"a","kind":"sing","query":"q","images":["i"],"gold":"x"})"), ConfigError);
    EXPECT_THROW(bad("{\"id\":\"a\",\"kind\":\"qa\",\"query\":\"q\",\"images\":[\"i\"],\"gold\":\"x\"}\n"
                     "{\"id\":\"a\",\"kind\":\"qa\",\"query\":\"q\",\"images\":[\"i\"],\"gold\":\"y\"}\n"),
                 ConfigError);
    EXPECT_THROW(task_kind_from_string("nope"), ConfigError);
    EXPECT_EQ(to_string(TaskKind::Editing), "editing-mock");
    EXPECT_EQ(task_kind_from_string("video-qa"), TaskKind::VideoQa);
}

TEST(Metrics, HandComputedReport) {
    std::vector<InstanceRecord> rs(4);
    rs[0] = {"b", TaskKind::Qa, {{"text", "lamp"}}, "lamp", "", 3, 1, {2, 2}, {}, 0.5};
    rs[1] = {"a", TaskKind::Qa, nullptr, "lamp", "no executable program", 1, 1, {}, {}, std::nullopt};
    rs[2] = {"c", TaskKind::Grounding, {{"box", {0, 0, 2, 2}}}, json::array({1, 1, 3, 3}), "", 2, 0, {3, 5}, {}, 0.1};
    rs[3] = {"d", TaskKind::Grounding, {{"box", {0, 0, 2, 2}}}, json::array({0, 0, 2, 2}), "", 4, 0, {4}, {}, 0.2};
    const auto m = compute_metrics(rs);
    EXPECT_EQ(m["instances"], 4);
    EXPECT_EQ(m["answered"], 3);
    EXPECT_EQ(m["errors"], 1);
    EXPECT_DOUBLE_EQ(m["accuracy"].get<double>(), 0.5);
    EXPECT_DOUBLE_EQ(m["by_kind"]["qa"]["accuracy"].get<double>(), 0.5);
    EXPECT_NEAR(m["by_kind"]["grounding"]["mean_iou"].get<double>(), (1.0 / 7.0 + 1.0) / 2.0, 1e-12);
    EXPECT_FALSE(m["by_kind"]["qa"].contains("mean_iou"));
    EXPECT_EQ(m["plan"]["outputs"], 10);
    EXPECT_EQ(m["plan"]["unexecutable"], 2);
    EXPECT_DOUBLE_EQ(m["plan"]["unexecutable_rate"].get<double>(), 0.2);
    EXPECT_DOUBLE_EQ(m["plan"]["mean_steps"].get<double>(), 16.0 / 5.0);

    // field order is stable
    std::vector<std::string> keys;
    for (const auto &[k, v] : m.items()) {
        keys.push_back(k);
    }
    EXPECT_EQ(keys, (std::vector<std::string>{"instances", "answered", "errors", "accuracy", "by_kind", "plan"}));

    // record order does not matter
    std::reverse(rs.begin(), rs.end());
    EXPECT_EQ(compute_metrics(rs).dump(), m.dump());
    for (const auto &r : rs) {
        EXPECT_EQ(InstanceRecord::from_json(r.to_json()).to_json(), r.to_json());
    }
}

TEST(Histogram, SingleTrace) {
    const auto d = score_distribution_report({0.5}, {0.5});
    ASSERT_EQ(d.bins.size(), 1u);
    EXPECT_EQ(d.bins[0].with_trs, 1);
    EXPECT_EQ(d.bins[0].without_trs, 1);
    EXPECT_NEAR(d.bins[0].lo, 0.5, 1e-12);
    EXPECT_DOUBLE_EQ(d.mean_with, d.mean_without);
    EXPECT_DOUBLE_EQ(d.var_with, 0.0);
}

TEST(Histogram, HandBinned) {
    // width 0.25: with -> [0,.25):1 [.25,.5):0 [.5,.75):2 [.75,1):1 ; without -> [0,.25):2 [.25,.5):1
    const auto d = score_distribution_report({0.1, 0.5, 0.7, 0.8}, {0.0, 0.2, 0.3}, 0.25);
    ASSERT_EQ(d.bins.size(), 4u);
    const std::vector<int> with{1, 0, 2, 1}, without{2, 1, 0, 0};
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(d.bins[i].lo, 0.25 * static_cast<double>(i), 1e-12);
        EXPECT_EQ(d.bins[i].with_trs, with[i]);
        EXPECT_EQ(d.bins[i].without_trs, without[i]);
    }
    EXPECT_NEAR(d.mean_with, 0.525, 1e-12);
    EXPECT_NEAR(d.var_with, (0.180625 + 0.000625 + 0.030625 + 0.075625) / 4.0, 1e-12);
    EXPECT_NEAR(d.mean_without, 0.5 / 3.0, 1e-12);
    EXPECT_THROW(score_distribution_report({}, {0.1}), EmptyInput);
    EXPECT_NE(d.table().find("mean"), std::string::npos);
    EXPECT_EQ(d.to_json()["bins"].size(), 4u);

    // negative scores land on aligned bins below zero
    const auto neg = score_distribution_report({-0.05}, {0.05});
    ASSERT_EQ(neg.bins.size(), 2u);
    EXPECT_NEAR(neg.bins[0].lo, -0.1, 1e-12);
}

TEST(Benchmark, EmptyCorpusIsConfigError) {
    const auto bench = generate_benchmark(small(2));
    auto res = simulation_resources(bench);
    EXPECT_THROW(run_benchmark({}, simulation_run_config(Flags::preset("row5")), res), ConfigError);
}

TEST(Benchmark, SeededRunsAreReproducible) {
    const auto bench = generate_benchmark(small());
    const auto a = run_simulation(bench, Flags::preset("row5"));
    const auto b = run_simulation(bench, Flags::preset("row5"));
    EXPECT_EQ(a.metrics.dump(), b.metrics.dump());
    EXPECT_EQ(a.traces, b.traces);
    EXPECT_EQ(a.records.size(), 10u);
}

TEST(Benchmark, AllFlagsOffIsPlainTopOneExecution) {
    auto cfg = small(40);
    cfg.malformed = {3};
    const auto bench = generate_benchmark(cfg);
    const auto out = run_simulation(bench, Flags::preset("row0"));
    int expected_correct = 0;
    for (std::size_t i = 0; i < bench.corpus.size(); ++i) {
        const auto &inst = bench.corpus[i];
        const std::string text =
            bench.fixtures->lookup({"plan", {{"query", inst.query}, {"seed", std::uint64_t{0}}}}).get<std::string>();
        std::optional<Value> answer;
        try {
            const Program p = parse_program(text);
            auto suite = BackendSuite::over(std::make_shared<FixtureTransport>(bench.fixtures), kSimulationEmbeddingDim);
            const auto reg = ModuleRegistry::from_json(bench.registry);
            Environment env = Environment().bind("IMAGE", Value(inst.images[0].image));
            for (const auto &s : p.steps()) {
                const auto cs = execute_step(s, env, reg, {&suite, reg.top_k()});
                env = bind_candidate(env, s, cs.candidates[0]);
                answer = cs.candidates[0].value;
            }
        } catch (const SyntaxError &) {
        }
        const bool ok = answer && *answer == Value(inst.gold.get<std::string>());
        expected_correct += ok ? 1 : 0;
        EXPECT_EQ(out.records[i].prediction.is_null(), !answer.has_value()) << inst.id;
        if (answer) {
            EXPECT_EQ(out.records[i].prediction, to_json(*answer)) << inst.id;
        }
    }
    EXPECT_DOUBLE_EQ(out.metrics["accuracy"].get<double>(), expected_correct / 40.0);
}

TEST(Benchmark, SingletonCandidateSetsIgnoreFlags) {
    auto cfg = small(20);
    cfg.candidates = 1;
    cfg.programs = 1;
    const auto bench = generate_benchmark(cfg);
    const auto base = run_simulation(bench, Flags::preset("row0"));
    for (const char *row : {"row1", "row2", "row3", "row4", "row5"}) {
        const auto other = run_simulation(bench, Flags::preset(row));
        for (std::size_t i = 0; i < base.records.size(); ++i) {
            EXPECT_EQ(other.records[i].prediction, base.records[i].prediction) << row;
        }
        EXPECT_EQ(other.metrics["accuracy"], base.metrics["accuracy"]) << row;
    }
}

TEST(Benchmark, MetricsRecomputeFromTraceLogs) {
    const auto bench = generate_benchmark(small());
    const auto out = run_simulation(bench, Flags::preset("row5"));
    const auto dir = fresh_dir("vpv_purity");
    write_run(out, dir);
    EXPECT_TRUE(std::filesystem::exists(dir / "timings.json"));
    const auto records = read_trace_records(dir);
    ASSERT_EQ(records.size(), 10u);
    EXPECT_EQ(compute_metrics(records).dump(2) + "\n", slurp(dir / "metrics.json"));
    EXPECT_EQ(compute_metrics(records).dump(), out.metrics.dump());

    // every trace ends with its result record, and nodes carry the logged fields
    std::istringstream lines(out.traces[0]);
    std::string line, last;
    bool saw_node = false;
    while (std::getline(lines, line)) {
        const json j = json::parse(line);
        if (j["type"] == "node") {
            saw_node = true;
            for (const char *k : {"id", "parent", "depth", "step", "value", "p", "p_cal", "w", "s_final", "cum_score", "goal"}) {
                EXPECT_TRUE(j.contains(k)) << k;
            }
        }
        last = line;
    }
    EXPECT_TRUE(saw_node);
    EXPECT_EQ(json::parse(last)["type"], "result");
    std::filesystem::remove_all(dir);
}

TEST(Benchmark, PlanStatisticsCountMalformedOutputs) {
    auto cfg = small();
    cfg.malformed = {2, 7};
    const auto bench = generate_benchmark(cfg);
    const auto out = run_simulation(bench, Flags::preset("row0"));
    EXPECT_EQ(out.metrics["plan"]["outputs"], 10);
    EXPECT_EQ(out.metrics["plan"]["unexecutable"], 2);
    EXPECT_DOUBLE_EQ(out.metrics["plan"]["unexecutable_rate"].get<double>(), 0.2);
    EXPECT_DOUBLE_EQ(out.metrics["plan"]["mean_steps"].get<double>(), 2.0);
    EXPECT_EQ(out.metrics["errors"], 2);
}

TEST(Benchmark, VideoAndAbstractInstances) {
    ScriptedTransport t([](const Request &r) -> json {
        if (r.task == "plan") {
            return "A=ALIGN(image=IMAGE,parts='head;tail')\nF=RESULT(var=A)";
        }
        if (r.task == "segment") {
            return json::array({{{"mask", r.inputs["image"].get<std::string>() + "-m"}, {"label", "part"}, {"score", 0.9}}});
        }
        if (r.task == "embed" && r.inputs["kind"] == "image") {
            return r.inputs["image"] == "card2-m" ? json::array({1.0, 0.0, 0.0, 0.0}) : json::array({0.0, 0.0, 1.0, 0.0});
        }
        if (r.task == "embed") {
            return json::array({1.0, 0.1, 0.0, 0.0});
        }
        return fixtures::generic_reply(r);
    });
    RunResources res{ModuleRegistry::load(fixtures::source_path("config/modules.json")),
                     BackendSuite::over(std::shared_ptr<Transport>(&t, [](Transport *) {}), 4), NegativeVocabulary()};
    res.vocab.set_fallback({"nothing"});
    RunConfig cfg;
    cfg.pipeline.flags = Flags::preset("row0");

    TaskInstance video;
    video.id = "v1";
    video.kind = TaskKind::VideoQa;
    video.query = "when does the dog jump?";
    video.frame_scores = {2, 1, 5, 6, 2, 3};
    video.gold = json::array({2, 3});

    TaskInstance abstract;
    abstract.id = "k1";
    abstract.kind = TaskKind::Abstract;
    abstract.query = "a bird with wings";
    for (int i = 0; i < 4; ++i) {
        abstract.images.push_back({"", ImageRef{"card" + std::to_string(i), 32, 32}});
    }
    abstract.gold = 2;

    const auto out = run_benchmark({video, abstract}, cfg, res);
    EXPECT_EQ(out.records[0].prediction, (json{{"interval", {2, 3}}}));
    EXPECT_EQ(out.records[1].prediction, (json{{"index", 2}}));
    EXPECT_DOUBLE_EQ(out.metrics["accuracy"].get<double>(), 1.0);
    EXPECT_EQ(out.metrics["by_kind"]["abstract"]["instances"], 1);
    EXPECT_NE(out.traces[1].find("\"type\":\"image\""), std::string::npos);
}

TEST(RunConfigFile, LoadsEmittedBenchmark) {
    const auto dir = fresh_dir("vpv_emit");
    const auto bench = generate_benchmark(small(6));
    emit_benchmark(bench, dir, Flags::preset("row5"));
    for (const char *f : {"fixtures.json", "corpus.jsonl", "modules.json", "negatives.json", "config.json", "prompts/qa.txt"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    }
    const auto cfg = RunConfig::load(dir / "config.json");
    EXPECT_TRUE(cfg.pipeline.flags.psc);
    EXPECT_EQ(cfg.rank_templates.at(TaskKind::Qa), "{query}");
    auto res = RunResources::build(cfg);
    const auto from_files = run_benchmark(load_corpus(dir / "corpus.jsonl"), cfg, res);
    const auto in_memory = run_simulation(bench, Flags::preset("row5"));
    EXPECT_EQ(from_files.metrics.dump(), in_memory.metrics.dump());
    EXPECT_EQ(from_files.traces, in_memory.traces);

    EXPECT_THROW(RunConfig::from_json({{"registry", "m.json"}, {"backends", json::object()}, {"negative_policy", "x"}}, dir),
                 ConfigError);
    EXPECT_THROW(RunConfig::from_json({{"backends", json::object()}}, dir), ConfigError);
    EXPECT_THROW(RunConfig::from_json({{"registry", "m.json"}, {"backends", json::object()}, {"search", {{"K", 0}}}}, dir),
                 ConfigError);
    std::filesystem::remove_all(dir);
}

TEST(Simulation, CorrelationSigns) {
    auto cfg = small(200);
    const auto strong = correlation_study(cfg, {0.3, 0.9});
    EXPECT_GT(strong.rho_instances, 0.3);
    EXPECT_EQ(strong.settings.size(), 2u);
    cfg.strength = 1.0;
    const auto perfect = correlation_study(cfg, {0.3, 0.6, 0.9});
    EXPECT_NEAR(perfect.rho_settings, 1.0, 1e-12);
    EXPECT_NE(perfect.table().find("spearman"), std::string::npos);
}

TEST(Simulation, TraceSearchRaisesMeanScore) {
    const auto d = simulated_score_distribution(small(200));
    EXPECT_GE(d.mean_with, d.mean_without);
}

TEST(RunConfigFile, ShippedRemoteExampleParses) {
    const auto cfg = RunConfig::load(fixtures::source_path("config/remote.example.json"));
    EXPECT_EQ(cfg.rank_templates.size(), 6u);
    for (const auto &[kind, text] : cfg.rank_templates) {
        EXPECT_NE(text.find("{traces}"), std::string::npos) << to_string(kind);
    }
    EXPECT_EQ(cfg.workers, 4);
    EXPECT_EQ(cfg.backends.at("embedding_dim"), 512);
}
