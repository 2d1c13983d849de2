#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vpv/backends.hpp"
#include "vpv/dsl.hpp"
#include "vpv/value.hpp"

namespace vpv {

// ---- environment ----

struct Provenance {
    int line = 0;
    int candidate = 0;

    friend bool operator==(const Provenance &, const Provenance &) = default;
};

/// Persistent, write-once variable bindings. Binding returns a new environment that shares
/// its parent's frames, so sibling branches never observe each other's bindings.
class Environment {
  public:
    Environment() = default;

    [[nodiscard]] const Value *find(const std::string &name) const;
    [[nodiscard]] const Value &at(const std::string &name) const; // throws UnknownVariable
    [[nodiscard]] bool contains(const std::string &name) const { return find(name) != nullptr; }
    [[nodiscard]] std::optional<Provenance> provenance(const std::string &name) const;

    /// Throws RebindError when `name` is already bound anywhere in this environment.
    [[nodiscard]] Environment bind(const std::string &name, Value value, Provenance prov = {}) const;

    /// Bound names, most recent first.
    [[nodiscard]] std::vector<std::string> names() const;

  private:
    struct Frame {
        std::shared_ptr<const Frame> parent;
        std::string name;
        Value value;
        Provenance prov;
    };
    const Frame *lookup(const std::string &name) const;

    std::shared_ptr<const Frame> head_;
};

// ---- candidates ----

/// What a sub-verifier looks at: an image region and the words the candidate claims about it.
/// `question` is set for question-answer candidates, which are turned into a sentence first.
struct VerifySubject {
    ImageRef region;
    std::string answer;
    std::string question;
};

struct VerifierReport {
    std::optional<double> s_itm, s_cap, s_vqa;
    std::string negative; // empty when negative sampling is off
    std::optional<double> n_itm, n_cap, n_vqa;
    double s_final = 0.0;
};

struct Candidate {
    Value value;
    double p = 0.0;
    std::optional<VerifySubject> subject;
    std::optional<VerifierReport> report;
    std::optional<double> w;
    std::optional<double> p_cal;

    /// Verification score; throws MissingScores when the candidate was never verified.
    [[nodiscard]] double s() const;
    /// p_cal once calibrated, p before.
    [[nodiscard]] double rank_score() const { return p_cal.value_or(p); }
};

struct CandidateSet {
    Step step;
    std::vector<Candidate> candidates;
};

// ---- registry ----

struct VerifierTemplates {
    std::optional<std::string> itm;
    std::optional<std::string> caption;
    std::optional<std::string> vqa;

    [[nodiscard]] int enabled() const { return int(itm.has_value()) + int(caption.has_value()) + int(vqa.has_value()); }
};

struct ExecContext {
    BackendSuite *backends = nullptr;
    std::size_t top_k = 4;
};

using ResolvedArgs = std::map<std::string, Value>;

/// Produces the raw (unsorted, untruncated) candidates of one step.
using ExecutorFn =
    std::function<std::vector<Candidate>(const ExecContext &, const Step &, const ResolvedArgs &, const Environment &)>;

struct Executor {
    ExecutorFn fn;
    ValueType output = ValueType::Any;
};

using ExecutorTable = std::map<std::string, Executor>;

/// LOC, SELECT, VQA, SEG, CLASSIFY, REPLACE, COUNT, EVAL, RESULT, ALIGN.
const ExecutorTable &builtin_executors();

struct ModuleSpec {
    std::string name;
    Signature signature;
    Executor executor;
    double tau = 1.2;
    bool verifiable = false;
    VerifierTemplates templates;
};

class ModuleRegistry {
  public:
    /// Document shape: see config/modules.json. Throws ConfigError on a malformed table,
    /// tau < 1, an unknown executor, or an executor whose output type differs from the signature.
    static ModuleRegistry from_json(const nlohmann::json &doc, const ExecutorTable &executors = builtin_executors());
    static ModuleRegistry load(const std::string &path, const ExecutorTable &executors = builtin_executors());

    [[nodiscard]] const ModuleSpec *find(const std::string &op) const;
    [[nodiscard]] const ModuleSpec &at(const std::string &op) const; // throws UnknownOp
    [[nodiscard]] const SignatureTable &signatures() const noexcept { return table_; }
    [[nodiscard]] std::size_t top_k() const noexcept { return top_k_; }
    [[nodiscard]] const std::map<std::string, ModuleSpec> &modules() const noexcept { return modules_; }

  private:
    std::map<std::string, ModuleSpec> modules_;
    SignatureTable table_;
    std::size_t top_k_ = 4;
};

/// Runs one step against `env` and returns its candidates sorted by p (stable), cut to top_k.
/// Backend errors surface as ExecutorFailure; unknown ops / unbound variables as UnknownOp /
/// UnknownVariable. `env` is not modified.
CandidateSet execute_step(const Step &step, const Environment &env, const ModuleRegistry &registry,
                          const ExecContext &ctx);

/// Binds the candidate's value to step.out_var. Throws RebindError.
Environment bind_candidate(const Environment &env, const Step &step, const Candidate &c, int candidate_index = 0);

/// Handle of the crop of `image` under `box`, as passed to backends.
ImageRef crop_region(const ImageRef &image, const Box &box);

// ---- symbolic algorithms ----

struct TemporalSegment {
    std::size_t start = 0;
    std::size_t end = 0; // inclusive
    double score = 0.0;  // (end - start + 1) * min(scores[start..end])

    friend bool operator==(const TemporalSegment &, const TemporalSegment &) = default;
};

/// Contiguous interval maximizing length x minimum score, by a monotonic-stack pass.
/// Ties go to the earliest start, then the shortest interval. Throws EmptyInput.
TemporalSegment locate_temporal_segment(const std::vector<double> &frame_scores);

/// Maximum-weight assignment on a rows x cols weight matrix, every row or every column matched
/// (whichever side is smaller). Returns (row, col) pairs sorted by row.
std::vector<std::pair<std::size_t, std::size_t>> max_weight_assignment(const std::vector<std::vector<double>> &weights);

struct PartAlignment {
    double score = 0.0; // mean similarity over matched pairs
    std::vector<std::pair<std::size_t, std::size_t>> matching; // (text part, visual part)
};

/// Optimal matching between text and visual part embeddings under inner-product similarity.
/// Throws EmptyInput or DimensionMismatch.
PartAlignment part_alignment_score(const std::vector<std::vector<double>> &text_parts,
                                   const std::vector<std::vector<double>> &visual_parts);

} // namespace vpv
