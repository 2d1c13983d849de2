#include <gtest/gtest.h>

#include "support.hpp"
#include "vpv/error.hpp"
#include "vpv/runtime.hpp"

using namespace vpv;
using fixtures::ScriptedTransport;

namespace {

const ImageRef kImage{"img1", 100, 100};

const ModuleRegistry &shipped() {
    static const ModuleRegistry reg = ModuleRegistry::load(fixtures::source_path("config/modules.json"));
    return reg;
}

Step step_of(const std::string &text) { return parse_program(text).steps()[0]; }

} // namespace

TEST(Environment, BindAndRead) {
    const Environment e0;
    const Environment e1 = e0.bind("BOX0", Value(Box{1, 2, 3, 4}), {3, 1});
    EXPECT_EQ(e1.at("BOX0"), Value(Box{1, 2, 3, 4}));
    EXPECT_EQ(e1.provenance("BOX0")->line, 3);
    EXPECT_EQ(e1.provenance("BOX0")->candidate, 1);
    EXPECT_FALSE(e0.contains("BOX0"));
    EXPECT_THROW((void)e0.at("BOX0"), UnknownVariable);
}

TEST(Environment, RebindIsRejected) {
    const Environment e = Environment().bind("BOX0", Value(1.0));
    EXPECT_THROW((void)e.bind("BOX0", Value(2.0)), RebindError);
}

TEST(Environment, SiblingsAreIsolated) {
    rnd::Engine g(3);
    for (int trial = 0; trial < 200; ++trial) {
        // random tree of bindings; every node must see exactly its own root path
        struct NodeState {
            Environment env;
            std::map<std::string, double> expect;
        };
        std::vector<NodeState> nodes{{Environment(), {}}};
        for (int i = 0; i < 30; ++i) {
            const std::size_t parent = rnd::below(g, nodes.size());
            NodeState child = nodes[parent];
            const std::string name = "V" + std::to_string(rnd::below(g, 6));
            if (child.expect.contains(name)) {
                EXPECT_THROW((void)child.env.bind(name, Value(0.0)), RebindError);
                continue;
            }
            const double v = static_cast<double>(i);
            child.env = child.env.bind(name, Value(v));
            child.expect[name] = v;
            nodes.push_back(std::move(child));
        }
        for (const auto &n : nodes) {
            for (int k = 0; k < 6; ++k) {
                const std::string name = "V" + std::to_string(k);
                const auto it = n.expect.find(name);
                if (it == n.expect.end()) {
                    EXPECT_FALSE(n.env.contains(name));
                } else {
                    EXPECT_EQ(n.env.at(name), Value(it->second));
                }
            }
            EXPECT_EQ(n.env.names().size(), n.expect.size());
        }
    }
}

TEST(ExecuteStep, DetectorFixtureOrderedByScore) {
    auto table = std::make_shared<FixtureTable>();
    table->add("detect", {{"image", "img1"}, {"object", "nightstand"}},
               json::array({{{"box", {5, 5, 15, 15}}, {"score", 0.6}}, {{"box", {10, 20, 50, 60}}, {"score", 0.9}}}));
    auto suite = BackendSuite::over(std::make_shared<FixtureTransport>(table), 4);
    const Environment env = Environment().bind("IMAGE", Value(kImage));
    const auto cs = execute_step(step_of("BOX0=LOC(image=IMAGE,object='nightstand')"), env, shipped(), {&suite, 4});
    ASSERT_EQ(cs.candidates.size(), 2u);
    EXPECT_DOUBLE_EQ(cs.candidates[0].p, 0.9);
    EXPECT_DOUBLE_EQ(cs.candidates[1].p, 0.6);
    EXPECT_EQ(cs.candidates[0].value, Value(Box{10, 20, 50, 60}));
    ASSERT_TRUE(cs.candidates[0].subject.has_value());
    EXPECT_EQ(cs.candidates[0].subject->answer, "nightstand");
    EXPECT_FALSE(env.contains("BOX0"));
}

TEST(ExecuteStep, VqaTiesKeepFixtureOrder) {
    auto table = std::make_shared<FixtureTable>();
    table->add("vqa", {{"image", "img1"}, {"question", "which side?"}},
               json::array({{{"answer", "left"}, {"p", 0.5}}, {{"answer", "right"}, {"p", 0.5}}}));
    auto suite = BackendSuite::over(std::make_shared<FixtureTransport>(table), 4);
    const Environment env = Environment().bind("IMAGE", Value(kImage));
    const auto cs = execute_step(step_of("ANS0=VQA(image=IMAGE,question='which side?')"), env, shipped(), {&suite, 4});
    ASSERT_EQ(cs.candidates.size(), 2u);
    EXPECT_EQ(cs.candidates[0].value, Value("left"));
    EXPECT_EQ(cs.candidates[1].value, Value("right"));
    EXPECT_EQ(cs.candidates[0].subject->question, "which side?");
}

TEST(ExecuteStep, ResultIsIdentity) {
    const Environment env = Environment().bind("IMAGE", Value(kImage)).bind("ANS0", Value("lamp"));
    const auto cs = execute_step(step_of("FINAL=RESULT(var=ANS0)"), env, shipped(), {nullptr, 4});
    ASSERT_EQ(cs.candidates.size(), 1u);
    EXPECT_DOUBLE_EQ(cs.candidates[0].p, 1.0);
    EXPECT_EQ(cs.candidates[0].value, Value("lamp"));
}

TEST(ExecuteStep, TopKTruncates) {
    ScriptedTransport t([](const Request &) {
        json out = json::array();
        for (int i = 0; i < 6; ++i) {
            out.push_back({{"answer", "a" + std::to_string(i)}, {"p", 0.1 * i}});
        }
        return out;
    });
    auto suite = BackendSuite::over(std::shared_ptr<Transport>(&t, [](Transport *) {}), 4);
    const Environment env = Environment().bind("IMAGE", Value(kImage));
    const auto cs = execute_step(step_of("A=VQA(image=IMAGE,question='q')"), env, shipped(), {&suite, 3});
    ASSERT_EQ(cs.candidates.size(), 3u);
    EXPECT_EQ(cs.candidates[0].value, Value("a5"));
    EXPECT_EQ(cs.candidates[2].value, Value("a3"));
}

TEST(ExecuteStep, EvalAndCount) {
    const Environment env = Environment().bind("IMAGE", Value(kImage)).bind("N", Value(3.0));
    const auto cs = execute_step(step_of("A=EVAL(expr='\"many\" if {N} > 1 else \"few\"')"), env, shipped(), {});
    EXPECT_EQ(cs.candidates[0].value, Value("many"));
    const auto c2 = execute_step(step_of("C=COUNT(var=N)"), env, shipped(), {});
    EXPECT_EQ(c2.candidates[0].value, Value(1.0));
}

TEST(ExecuteStep, Errors) {
    auto suite = BackendSuite::over(std::make_shared<FixtureTransport>(std::make_shared<FixtureTable>()), 4);
    const Environment env = Environment().bind("IMAGE", Value(kImage));
    EXPECT_THROW(execute_step(step_of("A=NOPE(image=IMAGE)"), env, shipped(), {&suite, 4}), UnknownOp);
    EXPECT_THROW(execute_step(step_of("A=SEG(image=IMG9)"), env, shipped(), {&suite, 4}), UnknownVariable);
    EXPECT_THROW(execute_step(step_of("A=SEG(image=IMAGE)"), env, shipped(), {&suite, 4}), FixtureMiss);
    EXPECT_THROW(execute_step(step_of("A=EVAL(expr='1 / 0')"), env, shipped(), {&suite, 4}), ExecutorFailure);
    EXPECT_THROW(execute_step(step_of("A=SEG(image='not an image')"), env, shipped(), {&suite, 4}), ExecutorFailure);

    ScriptedTransport empty([](const Request &) { return json::array(); });
    auto s2 = BackendSuite::over(std::shared_ptr<Transport>(&empty, [](Transport *) {}), 4);
    EXPECT_THROW(execute_step(step_of("A=SEG(image=IMAGE)"), env, shipped(), {&s2, 4}), EmptyCandidates);

    ScriptedTransport bad([](const Request &) { return json::array({{{"mask", "m"}, {"score", 1.5}}}); });
    auto s3 = BackendSuite::over(std::shared_ptr<Transport>(&bad, [](Transport *) {}), 4);
    EXPECT_THROW(execute_step(step_of("A=SEG(image=IMAGE)"), env, shipped(), {&s3, 4}), ExecutorFailure);
}

TEST(BindCandidate, RecordsProvenance) {
    const Step s = step_of("BOX0=LOC(image=IMAGE,object='x')");
    Candidate c{Value(Box{0, 0, 1, 1}), 0.5};
    const Environment e = bind_candidate(Environment(), s, c, 2);
    EXPECT_EQ(e.at("BOX0"), c.value);
    EXPECT_EQ(e.provenance("BOX0"), (Provenance{1, 2}));
    EXPECT_THROW(bind_candidate(e, s, c), RebindError);
}

TEST(Registry, ShippedTable) {
    const auto &reg = shipped();
    EXPECT_DOUBLE_EQ(reg.at("LOC").tau, 2.0);
    EXPECT_DOUBLE_EQ(reg.at("SELECT").tau, 1.5);
    EXPECT_DOUBLE_EQ(reg.at("ALIGN").tau, 1.5);
    EXPECT_DOUBLE_EQ(reg.at("VQA").tau, 1.2);
    EXPECT_TRUE(reg.at("LOC").verifiable);
    EXPECT_EQ(reg.at("LOC").templates.enabled(), 3);
    EXPECT_FALSE(reg.at("RESULT").verifiable);
    EXPECT_FALSE(reg.at("COUNT").verifiable);
    EXPECT_EQ(reg.signatures().terminal_op, "RESULT");
    EXPECT_THROW((void)reg.at("NOPE"), UnknownOp);
}

TEST(Registry, RejectsBadTables) {
    const json ok_result = {{"name", "RESULT"}, {"args", {{{"name", "var"}, {"type", "Any"}}}}, {"output", "Any"}};
    auto doc = [&](json m) { return json{{"modules", json::array({ok_result, m})}}; };
    EXPECT_NO_THROW(ModuleRegistry::from_json(json{{"modules", json::array({ok_result})}}));
    EXPECT_THROW(ModuleRegistry::from_json(doc({{"name", "X"}, {"output", "Box"}, {"executor", "NOPE"}})), ConfigError);
    EXPECT_THROW(ModuleRegistry::from_json(doc({{"name", "LOC"}, {"output", "Text"}})), ConfigError);
    EXPECT_THROW(ModuleRegistry::from_json(doc({{"name", "LOC"}, {"output", "Box"}, {"tau", 0.5}})), ConfigError);
    EXPECT_THROW(ModuleRegistry::from_json(doc({{"name", "LOC"}, {"output", "Box"}, {"verifiers", {{"itm", "none"}}}})),
                 ConfigError);
    EXPECT_THROW(ModuleRegistry::from_json(doc({{"name", "LOC"}, {"output", "Box"}, {"verifiable", true}})),
                 ConfigError);
    EXPECT_THROW(ModuleRegistry::from_json(json{{"modules", json::array()}}), ConfigError);
    EXPECT_THROW(ModuleRegistry::from_json(json{{"nothing", 1}}), ConfigError);
    EXPECT_THROW(ModuleRegistry::load("/nonexistent/modules.json"), ConfigError);
}

TEST(Values, JsonRoundTrip) {
    const std::vector<Value> vs{Value(kImage), Value(Box{1, 2, 3, 4}), Value(Mask{"m", "cat"}), Value("t"), Value(2.5),
                                Value(true), Value(List{{Value(1.0), Value(2.0)}})};
    for (const auto &v : vs) {
        EXPECT_EQ(value_from_json(to_json(v)), v) << to_json(v).dump();
    }
    EXPECT_THROW(Value(List{{Value(1.0), Value("x")}}), std::invalid_argument);
    EXPECT_THROW(make_box(5, 5, 5, 6), std::invalid_argument);
    EXPECT_THROW(make_box(0, 0, 200, 10, &kImage), std::invalid_argument);
    EXPECT_EQ(summary(Value("lamp")), "'lamp'");
}
