#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vpv/backends.hpp"
#include "vpv/runtime.hpp"
#include "vpv/verification.hpp"

namespace vpv {

struct SearchParams {
    std::size_t K = 4;     // beam (verification) width
    std::size_t P = 2;     // post-rank width
    std::size_t B = 3;     // proposals per node
    std::size_t top_m = 1; // candidates kept per executed step
    int max_depth = 32;
    bool psc_enabled = true;
    /// When set, PSC only runs if the beam's cum_score spread is at most this value.
    std::optional<double> psc_gate;

    /// Throws std::invalid_argument unless K, B, top_m >= 1 and (with PSC) 1 <= P <= K.
    void check() const;
};

/// A remaining program suffix: `program->steps()[next..]`.
struct Continuation {
    std::shared_ptr<const Program> program;
    std::size_t next = 0;

    [[nodiscard]] bool done() const { return next >= program->size(); }
    [[nodiscard]] const Step &step() const { return program->steps()[next]; }
};

struct TraceNode;
using NodePtr = std::shared_ptr<const TraceNode>;

struct TraceNode {
    NodePtr parent;
    int id = 0;
    int depth = 0;
    std::optional<Step> step; // empty at the root
    Candidate chosen;
    Environment env;
    double score = 0.0;  // chosen candidate's s_final; 0 for unverified steps
    bool scored = false; // whether `score` enters the path mean
    double score_sum = 0.0;
    int scored_count = 0;
    double cum_score = 0.0; // mean of the scored steps on the root path
    bool goal = false;
    std::vector<Continuation> continuations;
};

/// Root-to-node path, root excluded.
std::vector<NodePtr> path_to(const NodePtr &node);

/// One line per step: "<statement> -> <value>".
std::string render_trace(const NodePtr &node);

struct Proposal {
    Step step;
    std::vector<Continuation> continuations; // of the child, already advanced past `step`
};

class StepProposer {
  public:
    virtual ~StepProposer() = default;
    virtual std::vector<Proposal> propose(const TraceNode &node, std::size_t limit) = 0;
};

/// Treats the node's continuations as a trie: one proposal per distinct next statement,
/// in first-appearance order.
class ProgramTrieProposer final : public StepProposer {
  public:
    std::vector<Proposal> propose(const TraceNode &node, std::size_t limit) override;
};

class CandidateScorer {
  public:
    virtual ~CandidateScorer() = default;
    virtual void score(CandidateSet &cs, const ModuleSpec &module) = 0;
};

class VerifierScorer final : public CandidateScorer {
  public:
    VerifierScorer(const NegativeVocabulary &vocab, BackendSuite &backends, VerificationConfig cfg)
        : vocab_(vocab), backends_(backends), cfg_(cfg) {}
    void score(CandidateSet &cs, const ModuleSpec &module) override {
        verify_candidates(cs, module, vocab_, backends_, cfg_);
    }

  private:
    const NegativeVocabulary &vocab_;
    BackendSuite &backends_;
    VerificationConfig cfg_;
};

class TraceSink {
  public:
    virtual ~TraceSink() = default;
    virtual void record(const nlohmann::json &rec) = 0;
};

/// One JSON object per line.
class JsonlTraceSink final : public TraceSink {
  public:
    explicit JsonlTraceSink(std::ostream &out) : out_(out) {}
    void record(const nlohmann::json &rec) override { out_ << rec.dump() << '\n'; }

  private:
    std::ostream &out_;
};

struct SearchStats {
    int iterations = 0;
    int expansions = 0;      // nodes expanded
    int step_executions = 0; // proposals executed
    int pruned = 0;
    int psc_calls = 0;
    int psc_fallbacks = 0;
    double exec_ms = 0.0;   // module inference wall-clock
    double verify_ms = 0.0; // verification wall-clock
};

struct SearchContext {
    const ModuleRegistry *registry = nullptr;
    ExecContext exec;
    StepProposer *proposer = nullptr;
    CandidateScorer *scorer = nullptr; // null: verification off, every score is 0
    bool calibrate = false;
    Ranker *ranker = nullptr; // null: PSC falls back to score order
    std::string rank_template = "{traces}";
    std::string query;
    TraceSink *sink = nullptr;
};

struct SearchResult {
    std::vector<NodePtr> path;
    Value answer;
    SearchStats stats;

    /// Mean verification score along the path (the goal node's cum_score).
    [[nodiscard]] double mean_score() const { return path.empty() ? 0.0 : path.back()->cum_score; }
};

/// Root node with `inputs` bound (IMAGE must be among them) and the given programs as continuations.
NodePtr make_root(const Environment &inputs, const std::vector<std::shared_ptr<const Program>> &programs);

/// Executes, scores and calibrates every proposal of `node`, keeping the top_m candidates of each
/// as children. Failed proposals are pruned; throws AllBranchesPruned when all of them fail.
std::vector<NodePtr> expand(const NodePtr &node, SearchContext &ctx, const SearchParams &params, int &next_id,
                            SearchStats &stats);

/// The K highest cum_score nodes, insertion order on ties.
std::vector<NodePtr> trs_select(const std::vector<NodePtr> &open, std::size_t K);

/// Top P under the ranker's order over rendered traces; on ranker failure, top P by cum_score.
std::vector<NodePtr> psc_rank(const std::vector<NodePtr> &nodes, std::size_t P, Ranker *ranker,
                              const std::string &instruction_template, const std::string &query,
                              bool *fell_back = nullptr);

/// Beam search over the reasoning-trace tree rooted at `root`. Returns the first goal reached.
/// Throws NoTraceFound or DepthExceeded.
SearchResult search(const NodePtr &root, SearchContext &ctx, const SearchParams &params);

nlohmann::json node_record(const TraceNode &node);

// ---- planning + flags ----

struct PlanOutcome {
    std::vector<std::shared_ptr<const Program>> programs; // parsed and validated
    int outputs = 0;                                      // planner outputs after de-duplication
    int unexecutable = 0;                                 // outputs that failed to parse or validate
    std::vector<std::string> errors;
    double planning_ms = 0.0;
};

PlanOutcome plan_programs(Planner &planner, const PlannerRequest &request, const SignatureTable &table);

/// Ablation switches. Verification runs when calibration or TRS needs it; the trace tree is
/// searched (several programs, beam of K) when TRS or PSC is on.
struct Flags {
    bool negative_sampling = true;
    bool calibration = true;
    bool trs = true;
    bool psc = true;

    [[nodiscard]] bool verification() const { return calibration || trs; }
    [[nodiscard]] bool searching() const { return trs || psc; }

    /// Presets "row0" .. "row5": plain execution; verification without negatives; + negative
    /// sampling; + TRS; PSC alone; everything.
    static Flags preset(const std::string &name);
    [[nodiscard]] nlohmann::json to_json() const;
    static Flags from_json(const nlohmann::json &j);
};

struct PipelineConfig {
    Flags flags;
    SearchParams search;
    VerificationConfig verification; // negative_sampling is taken from flags
    std::vector<PlannerExample> examples;
    std::uint64_t plan_seed = 0;
    std::string rank_template = "{traces}";
};

struct SolveOutcome {
    PlanOutcome plan;
    std::optional<SearchResult> result;
    std::string error; // set when no answer was produced
};

/// Plans, searches and answers one query with the given flags.
class Pipeline {
  public:
    Pipeline(const ModuleRegistry &registry, BackendSuite &backends, const NegativeVocabulary &vocab,
             PipelineConfig cfg);

    SolveOutcome solve(const std::string &query, const Environment &inputs, TraceSink *sink = nullptr);

    [[nodiscard]] const PipelineConfig &config() const noexcept { return cfg_; }

  private:
    const ModuleRegistry &registry_;
    BackendSuite &backends_;
    const NegativeVocabulary &vocab_;
    PipelineConfig cfg_;
};

} // namespace vpv
