#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vpv/backends.hpp"
#include "vpv/runtime.hpp"

namespace vpv {

// ---- negative sampling ----

struct ScoredToken {
    std::string token;
    double sim = 0.0;
};

/// answer -> opposites whose embedding similarity to the answer is below `threshold`.
class NegativeVocabulary {
  public:
    explicit NegativeVocabulary(double threshold = 0.5) : threshold_(threshold) {}

    /// Entries at or above the threshold are dropped. Returns whether the entry was kept.
    bool add(const std::string &answer, const std::string &opposite, double sim);

    /// Tokens used for answers without an entry of their own.
    void set_fallback(std::vector<std::string> tokens) { fallback_ = std::move(tokens); }

    [[nodiscard]] const std::vector<ScoredToken> *opposites(const std::string &answer) const;
    [[nodiscard]] const std::vector<std::string> &fallback() const noexcept { return fallback_; }
    [[nodiscard]] double threshold() const noexcept { return threshold_; }
    [[nodiscard]] bool empty() const noexcept { return entries_.empty() && fallback_.empty(); }

    /// Scores every pool word against every answer with the embedder and keeps those below threshold.
    static NegativeVocabulary build(const std::vector<std::string> &answers, const std::vector<std::string> &pool,
                                    Embedder &embedder, double threshold = 0.5);

    /// {"threshold": 0.5, "entries": {"nightstand": {"stocking": 0.1, ...}}, "fallback": ["..."]}
    static NegativeVocabulary from_json(const nlohmann::json &doc);
    static NegativeVocabulary load(const std::filesystem::path &path);
    [[nodiscard]] nlohmann::json to_json() const;

  private:
    double threshold_;
    std::map<std::string, std::vector<ScoredToken>> entries_;
    std::vector<std::string> fallback_;
};

enum class NegativePolicy { Lowest, Sampled };

/// `Lowest`: minimum-similarity opposite, ties by token order. `Sampled`: uniform draw from the
/// sub-threshold list, reproducible for a given (seed, answer). Answers without an entry draw
/// from the fallback list (lowest = first in token order). Throws NoOppositeAvailable.
std::string semantic_opposite(const std::string &answer, const NegativeVocabulary &vocab, NegativePolicy policy,
                              std::uint64_t seed = 0);

// ---- sub-verifiers ----

/// "what is on the table?" + "lamp" -> "on the table is lamp": drop the wh-word and a following
/// auxiliary, then append "is <answer>".
std::string qa_to_sentence(const std::string &question, const std::string &answer);

/// Replaces the single {placeholder} in `tmpl` with `text`.
std::string fill_template(const std::string &tmpl, const std::string &text);

/// The words a subject (or its negative) contributes to the templates.
std::string subject_text(const VerifySubject &subject, const std::string &answer);

/// Inner product of the image embedding and the embedding of the filled template.
double verify_itm(const std::string &text, const ImageRef &image, const std::string &tmpl, Embedder &embedder);

/// Similarity between the image caption and the filled template, both sentence-embedded.
double verify_caption(const std::string &text, const ImageRef &image, const std::string &tmpl, Captioner &captioner,
                      Embedder &embedder);

/// p(yes) - p(no) for the filled yes/no question.
double verify_vqa(const std::string &text, const ImageRef &image, const std::string &tmpl, VqaModel &vqa);

// ---- mixture + calibration ----

struct VerificationConfig {
    bool negative_sampling = true;
    NegativePolicy policy = NegativePolicy::Sampled;
    std::uint64_t seed = 0;
};

/// Average of per-verifier (candidate - negative) differences over the enabled verifiers.
double mixture_of_differences(const VerifierReport &r);
/// Average candidate score minus average negative score; equal to the above up to rounding.
double difference_of_means(const VerifierReport &r);

/// Scores one candidate with the module's enabled sub-verifiers. Propagates backend failures.
VerifierReport verification_score(const Candidate &candidate, const ModuleSpec &module,
                                  const NegativeVocabulary &vocab, BackendSuite &backends,
                                  const VerificationConfig &cfg);

/// Fills `report` for every candidate of a verifiable module; no-op for symbolic modules.
void verify_candidates(CandidateSet &cs, const ModuleSpec &module, const NegativeVocabulary &vocab,
                       BackendSuite &backends, const VerificationConfig &cfg);

/// Rescales s into [1/tau, tau]; 1 when s_max == s_min.
double calibration_weight(double s, double s_min, double s_max, double tau);

/// p_cal = w * p for every candidate, then a stable re-sort by p_cal. Throws MissingScores.
CandidateSet calibrate(CandidateSet cs, double tau);

} // namespace vpv
