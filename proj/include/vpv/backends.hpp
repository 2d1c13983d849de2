#pragma once

// Model-facing interfaces. Every role (detector, VQA, captioner, embedder, segmenter, editor,
// planner, ranker) is an abstract class; the shipped implementations talk to a Transport,
// which is either a fixture table (mock) or an HTTP endpoint (remote). Both see the same
// request shape:
//
//   {"task": "<role task>", "inputs": {...key material...}, "context": {...non-key payload...}}
//
// and answer with {"outputs": ...}. Mock lookups key on the canonical dump of task + inputs.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vpv/value.hpp"

namespace vpv {

using nlohmann::json;

struct Request {
    std::string task;
    json inputs = json::object();
    json context = json::object();
};

/// Canonical serialization of the key part of a request (task + inputs, keys sorted).
std::string canonical_key(const Request &r);
std::string canonical_key(const std::string &task, const json &inputs);

class Transport {
  public:
    virtual ~Transport() = default;
    /// Returns the response's `outputs` field.
    virtual json call(const Request &request) = 0;
    virtual bool healthy() = 0;
    [[nodiscard]] virtual std::string describe() const = 0;
};

/// Canonical-key -> response table. Read-only once handed to a FixtureTransport.
class FixtureTable {
  public:
    void add(const std::string &task, const json &inputs, json outputs);
    void merge(const FixtureTable &other);
    [[nodiscard]] const json &lookup(const Request &request) const; // throws FixtureMiss
    [[nodiscard]] bool contains(const Request &request) const;
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

    /// File format: {"records": [{"task": ..., "inputs": {...}, "outputs": ...}, ...]}
    static FixtureTable load(const std::filesystem::path &path);
    static FixtureTable from_json(const json &doc);
    [[nodiscard]] json to_json() const;
    void save(const std::filesystem::path &path) const;

  private:
    struct Entry {
        std::string task;
        json inputs;
        json outputs;
    };
    std::map<std::string, Entry> entries_;
};

class FixtureTransport final : public Transport {
  public:
    explicit FixtureTransport(std::shared_ptr<const FixtureTable> table, std::string origin = "in-memory");

    json call(const Request &request) override;
    bool healthy() override { return table_ != nullptr; }
    [[nodiscard]] std::string describe() const override { return "mock(" + origin_ + ")"; }

  private:
    std::shared_ptr<const FixtureTable> table_;
    std::string origin_;
};

struct RemoteEndpoint {
    std::string url; // http://host:port[/base]
    int timeout_ms = 5000;
    int retries = 0;
    int backoff_ms = 50; // doubled after each failed attempt
    std::string credential_env; // name of an environment variable holding a bearer token
};

class HttpTransport final : public Transport {
  public:
    explicit HttpTransport(RemoteEndpoint endpoint);
    ~HttpTransport() override;

    json call(const Request &request) override;
    bool healthy() override;
    [[nodiscard]] std::string describe() const override { return "remote(" + endpoint_.url + ")"; }

    /// Attempts used by the most recent call on any thread.
    [[nodiscard]] int last_attempts() const noexcept { return last_attempts_.load(); }

  private:
    struct Pool;
    RemoteEndpoint endpoint_;
    std::unique_ptr<Pool> pool_;
    std::atomic<int> last_attempts_{0};
};

// ---- roles ----

struct Detection {
    Box box;
    double score = 0;
};

class Detector {
  public:
    virtual ~Detector() = default;
    virtual std::vector<Detection> detect(const ImageRef &image, const std::string &object) = 0;
};

struct AnswerProb {
    std::string answer;
    double p = 0;
};

class VqaModel {
  public:
    virtual ~VqaModel() = default;
    virtual std::vector<AnswerProb> answer(const ImageRef &image, const std::string &question) = 0;
};

struct YesNo {
    double p_yes = 0;
    double p_no = 0;
};

/// Probabilities of the answers "yes" and "no" (case-insensitive; missing answers count as 0).
YesNo yes_no(const std::vector<AnswerProb> &dist);

class Captioner {
  public:
    virtual ~Captioner() = default;
    virtual std::string caption(const ImageRef &image) = 0;
};

/// Unit-normalized embeddings of a declared dimension; similarity is the inner product.
class Embedder {
  public:
    virtual ~Embedder() = default;
    virtual std::vector<double> embed_text(const std::string &text) = 0;
    virtual std::vector<double> embed_image(const ImageRef &image) = 0;
    [[nodiscard]] virtual int dimension() const = 0;
};

double inner_product(const std::vector<double> &a, const std::vector<double> &b);

struct Segment {
    Mask mask;
    double score = 0;
};

class Segmenter {
  public:
    virtual ~Segmenter() = default;
    virtual std::vector<Segment> segment(const ImageRef &image) = 0;
};

struct EditResult {
    ImageRef image;
    double score = 0;
};

class Editor {
  public:
    virtual ~Editor() = default;
    virtual std::vector<EditResult> edit(const ImageRef &image, const Mask &region, const std::string &prompt) = 0;
};

struct PlannerExample {
    std::string query;
    std::string program;
};

struct PlannerRequest {
    std::string query;
    std::vector<PlannerExample> in_context_examples;
    int n_programs = 1;
    std::uint64_t perturbation_seed = 0;
    json decoding = json::object(); // passed through to the backend untouched
};

/// Seed 0 keeps the examples as given; any other seed shuffles them and keeps a subset of
/// at least half. Pure function of (examples, seed).
std::vector<PlannerExample> perturb_examples(const std::vector<PlannerExample> &examples, std::uint64_t seed);

/// Fills {examples} and {query} in a planner prompt template.
std::string render_planner_prompt(const std::string &tmpl, const std::vector<PlannerExample> &examples,
                                  const std::string &query);

class Planner {
  public:
    virtual ~Planner() = default;
    /// Up to n_programs distinct program texts. Call i (0-based) uses perturbation seed
    /// perturbation_seed + i; exact duplicates are dropped.
    virtual std::vector<std::string> plan(const PlannerRequest &request) = 0;
};

class Ranker {
  public:
    virtual ~Ranker() = default;
    /// Permutation of trace indices, best first. Throws RankUnavailable on an unusable reply.
    virtual std::vector<std::size_t> rank(const std::vector<std::string> &traces, const std::string &instruction) = 0;
};

/// Parses replies such as "2,1" or "3 1 2" (1-based) into a 0-based permutation of n items.
std::vector<std::size_t> parse_rank_reply(const std::string &reply, std::size_t n);

/// Fills {query}, {n} and {traces} in a self-correction prompt template.
std::string render_rank_prompt(const std::string &tmpl, const std::string &query,
                               const std::vector<std::string> &traces);

// ---- transport-backed implementations ----

class TransportDetector final : public Detector {
  public:
    explicit TransportDetector(std::shared_ptr<Transport> t) : t_(std::move(t)) {}
    std::vector<Detection> detect(const ImageRef &image, const std::string &object) override;

  private:
    std::shared_ptr<Transport> t_;
};

class TransportVqa final : public VqaModel {
  public:
    explicit TransportVqa(std::shared_ptr<Transport> t) : t_(std::move(t)) {}
    std::vector<AnswerProb> answer(const ImageRef &image, const std::string &question) override;

  private:
    std::shared_ptr<Transport> t_;
};

class TransportCaptioner final : public Captioner {
  public:
    explicit TransportCaptioner(std::shared_ptr<Transport> t) : t_(std::move(t)) {}
    std::string caption(const ImageRef &image) override;

  private:
    std::shared_ptr<Transport> t_;
};

class TransportEmbedder final : public Embedder {
  public:
    TransportEmbedder(std::shared_ptr<Transport> t, int dimension) : t_(std::move(t)), dim_(dimension) {}
    std::vector<double> embed_text(const std::string &text) override;
    std::vector<double> embed_image(const ImageRef &image) override;
    [[nodiscard]] int dimension() const override { return dim_; }

  private:
    std::vector<double> normalized(const json &out) const;
    std::shared_ptr<Transport> t_;
    int dim_;
};

class TransportSegmenter final : public Segmenter {
  public:
    explicit TransportSegmenter(std::shared_ptr<Transport> t) : t_(std::move(t)) {}
    std::vector<Segment> segment(const ImageRef &image) override;

  private:
    std::shared_ptr<Transport> t_;
};

class TransportEditor final : public Editor {
  public:
    explicit TransportEditor(std::shared_ptr<Transport> t) : t_(std::move(t)) {}
    std::vector<EditResult> edit(const ImageRef &image, const Mask &region, const std::string &prompt) override;

  private:
    std::shared_ptr<Transport> t_;
};

class TransportPlanner final : public Planner {
  public:
    TransportPlanner(std::shared_ptr<Transport> t, std::string prompt_template)
        : t_(std::move(t)), template_(std::move(prompt_template)) {}
    std::vector<std::string> plan(const PlannerRequest &request) override;

  private:
    std::shared_ptr<Transport> t_;
    std::string template_;
};

class TransportRanker final : public Ranker {
  public:
    explicit TransportRanker(std::shared_ptr<Transport> t) : t_(std::move(t)) {}
    std::vector<std::size_t> rank(const std::vector<std::string> &traces, const std::string &instruction) override;

  private:
    std::shared_ptr<Transport> t_;
};

/// The set of model handles a run uses. Any handle may be null when no module needs it.
struct BackendSuite {
    std::shared_ptr<Detector> detector;
    std::shared_ptr<VqaModel> vqa;
    std::shared_ptr<Captioner> captioner;
    std::shared_ptr<Embedder> embedder;
    std::shared_ptr<Segmenter> segmenter;
    std::shared_ptr<Editor> editor;
    std::shared_ptr<Planner> planner;
    std::shared_ptr<Ranker> ranker;

    /// Transports behind the handles, probed by healthy().
    std::vector<std::shared_ptr<Transport>> transports;

    [[nodiscard]] bool healthy() const;

    /// Builds every role over one transport.
    static BackendSuite over(std::shared_ptr<Transport> transport, int embedding_dim,
                             std::string planner_template = "{examples}{query}");

    /// Config shape: {"embedding_dim": 4, "planner_template": "<text>",
    ///   "default": {"mock": "fixtures.json"} | {"remote": {"url": ..., "timeout_ms": ..., "retries": ...}},
    ///   "<role>": {...same shape, overrides default...}}
    /// Relative fixture paths resolve against `base_dir`.
    static BackendSuite from_config(const json &cfg, const std::filesystem::path &base_dir);
};

} // namespace vpv
