#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vpv/harness.hpp"

namespace vpv {

/// Synthetic question-answering benchmark. Every query has `programs` planner outputs, each a
/// VQA step followed by RESULT. A correct plan's VQA step proposes the gold answer among
/// `candidates` answers; a wrong plan proposes distractors only. Each sub-verifier scores an
/// answer as strength * [answer is gold] + (1 - strength) * U(0,1); negatives score U(0, negative_max).
struct SimulationConfig {
    std::size_t instances = 500;
    double strength = 0.7;
    double plan_correct = 0.6; // probability that one planner output can reach the gold answer
    double top_correct = 0.6;  // probability that a correct plan ranks gold first by p
    std::size_t programs = 3;
    std::size_t candidates = 4;
    std::size_t vocabulary = 40;
    double negative_max = 0.2;
    double tau = 1.2;
    std::uint64_t seed = 7;
    /// Instances whose first planner output is malformed.
    std::vector<std::size_t> malformed;
};

struct SyntheticBenchmark {
    SimulationConfig config;
    std::vector<TaskInstance> corpus;
    std::shared_ptr<FixtureTable> fixtures;
    NegativeVocabulary vocab;
    nlohmann::json registry;
    std::map<std::string, std::string> gold_by_query;
    std::vector<std::vector<bool>> plan_correct; // [instance][program]
};

inline constexpr int kSimulationEmbeddingDim = 4;

SyntheticBenchmark generate_benchmark(const SimulationConfig &cfg);

/// Ranks traces whose final value is the gold answer first. The instruction must be the bare
/// query (rank template "{query}"). With bias < 1 the ranker keeps the given order with
/// probability 1 - bias, drawn deterministically from the request.
class OracleRanker final : public Ranker {
  public:
    explicit OracleRanker(std::map<std::string, std::string> gold_by_query, double bias = 1.0)
        : gold_(std::move(gold_by_query)), bias_(bias) {}
    std::vector<std::size_t> rank(const std::vector<std::string> &traces, const std::string &instruction) override;

  private:
    std::map<std::string, std::string> gold_;
    double bias_;
};

/// Forwards to another ranker and stores each request/reply pair as a fixture.
class RecordingRanker final : public Ranker {
  public:
    RecordingRanker(std::shared_ptr<Ranker> inner, std::shared_ptr<FixtureTable> sink)
        : inner_(std::move(inner)), sink_(std::move(sink)) {}
    std::vector<std::size_t> rank(const std::vector<std::string> &traces, const std::string &instruction) override;

  private:
    std::shared_ptr<Ranker> inner_;
    std::shared_ptr<FixtureTable> sink_;
    std::mutex mu_;
};

/// In-memory resources over the benchmark fixtures, with the oracle ranker when `oracle` is set.
RunResources simulation_resources(const SyntheticBenchmark &bench, bool oracle = true);

/// Run configuration for the synthetic benchmark under the given flags.
RunConfig simulation_run_config(const Flags &flags, const SearchParams &search = {}, std::uint64_t seed = 0);

RunOutput run_simulation(const SyntheticBenchmark &bench, const Flags &flags, const SearchParams &search = {});

struct CorrelationPoint {
    double plan_correct = 0.0;
    double mean_score = 0.0;
    double accuracy = 0.0;
    std::size_t n = 0;
};

struct CorrelationReport {
    double strength = 0.0;
    std::size_t instances = 0;
    double rho_instances = 0.0; // per-trace mean score vs correctness, base setting
    std::vector<CorrelationPoint> settings;
    double rho_settings = 0.0; // mean score vs accuracy across settings

    [[nodiscard]] nlohmann::ordered_json to_json() const;
    [[nodiscard]] std::string table() const;
};

/// Scores every answered trace with verification as a passive observer (tau = 1, so scores do not
/// change the choice), then correlates per-trace mean score with correctness. Settings vary the
/// plan-correctness probability.
CorrelationReport correlation_study(const SimulationConfig &base,
                                    const std::vector<double> &plan_probabilities = {0.45, 0.6, 0.75, 0.9});

/// Mean-score histogram of the synthetic benchmark with and without trace search.
ScoreDistribution simulated_score_distribution(const SimulationConfig &cfg);

/// Writes corpus.jsonl, fixtures.json (ranker replies included), negatives.json, modules.json,
/// planner_examples.json and config.json so `vpv run` reproduces the simulated benchmark.
void emit_benchmark(const SyntheticBenchmark &bench, const std::filesystem::path &dir, const Flags &flags);

} // namespace vpv
