#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vpv/search.hpp"

namespace vpv {

enum class TaskKind { Qa, Grounding, Nlvr, Abstract, Editing, VideoQa };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string &s); // throws ConfigError

struct InputImage {
    std::string name; // variable it is bound to; empty means IMAGE, IMAGE1, ... by position
    ImageRef image;
};

/// Gold shapes: qa -> "token"; grounding -> [x0,y0,x1,y1]; nlvr -> true/false;
/// abstract -> candidate image index; editing-mock -> image handle; video-qa -> [start,end] frames.
struct TaskInstance {
    std::string id;
    TaskKind kind = TaskKind::Qa;
    std::string query;
    std::vector<InputImage> images;
    std::vector<double> frame_scores;
    nlohmann::json gold;

    /// Throws ConfigError when a field is missing or gold does not fit the kind.
    static TaskInstance from_json(const nlohmann::json &j);
    [[nodiscard]] nlohmann::json to_json() const;
};

/// One instance per line. Throws ConfigError on an empty corpus, a malformed line or a duplicate id.
std::vector<TaskInstance> load_corpus(const std::filesystem::path &path);
std::vector<TaskInstance> parse_corpus(std::istream &in, const std::string &origin = "corpus");
void save_corpus(const std::vector<TaskInstance> &corpus, const std::filesystem::path &path);

/// Intersection over union of two boxes, in [0,1].
double iou(const Box &a, const Box &b);

/// IoU of two inclusive frame intervals.
double interval_iou(std::size_t a0, std::size_t a1, std::size_t b0, std::size_t b1);

/// Spearman rank correlation with average ranks for ties; 0 when either side is constant.
double spearman(const std::vector<double> &x, const std::vector<double> &y);

// ---- scoring ----

struct InstanceScore {
    bool correct = false;
    std::optional<double> overlap; // IoU for grounding and video-qa
};

/// Compares a prediction record (as written in trace logs) against gold.
/// A null prediction scores as wrong with zero overlap.
InstanceScore score_prediction(TaskKind kind, const nlohmann::json &prediction, const nlohmann::json &gold);

/// Everything metrics need about one instance; also the "result" record of its trace log.
struct InstanceRecord {
    std::string id;
    TaskKind kind = TaskKind::Qa;
    nlohmann::json prediction; // null when no answer
    nlohmann::json gold;
    std::string error;
    int plan_outputs = 0;
    int plan_unexecutable = 0;
    std::vector<int> plan_steps; // step count of each executable program
    std::vector<int> path;       // node ids of the answering trace
    std::optional<double> mean_score;

    [[nodiscard]] nlohmann::json to_json() const;
    static InstanceRecord from_json(const nlohmann::json &j);
};

/// Aggregate metrics as a stable-order document; a pure function of the records.
nlohmann::ordered_json compute_metrics(const std::vector<InstanceRecord> &records);

// ---- configuration ----

struct RunConfig {
    PipelineConfig pipeline;
    std::filesystem::path registry;
    nlohmann::json backends;
    std::optional<std::filesystem::path> negatives;
    std::map<TaskKind, std::string> rank_templates; // loaded prompt text per kind
    int workers = 1;
    std::filesystem::path base_dir;

    /// Relative paths resolve against `base_dir`. Throws ConfigError.
    static RunConfig from_json(const nlohmann::json &j, const std::filesystem::path &base_dir);
    static RunConfig load(const std::filesystem::path &path);
};

/// Registry, backends and negative vocabulary built from a RunConfig.
struct RunResources {
    ModuleRegistry registry;
    BackendSuite backends;
    NegativeVocabulary vocab;

    static RunResources build(const RunConfig &cfg);
};

struct InstanceTiming {
    std::string id;
    double total_ms = 0.0;
    double planning_ms = 0.0;
    double module_ms = 0.0;
};

struct RunOutput {
    std::vector<InstanceRecord> records;
    std::vector<std::string> traces; // JSONL per instance, corpus order
    nlohmann::ordered_json metrics;
    std::vector<InstanceTiming> timings;
};

/// Runs one instance to completion. Answers go through the pipeline except video-qa, which is
/// localized directly from its frame scores. FixtureMiss and search failures become record errors.
InstanceRecord run_instance(const TaskInstance &inst, const RunConfig &cfg, RunResources &res, TraceSink &sink,
                            InstanceTiming *timing = nullptr);

/// Throws ConfigError on an empty corpus or unhealthy backends.
RunOutput run_benchmark(const std::vector<TaskInstance> &corpus, const RunConfig &cfg, RunResources &res);

/// Writes traces/<id>.jsonl, metrics.json and timings.json under `dir`.
void write_run(const RunOutput &out, const std::filesystem::path &dir);

/// Reads the result records of every traces/*.jsonl under `dir` (or `dir` itself), sorted by id.
std::vector<InstanceRecord> read_trace_records(const std::filesystem::path &dir);

// ---- score distributions ----

struct HistogramBin {
    double lo = 0.0;
    double hi = 0.0;
    int with_trs = 0;
    int without_trs = 0;
};

struct ScoreDistribution {
    double bin_width = 0.1;
    std::vector<HistogramBin> bins;
    double mean_with = 0.0, var_with = 0.0;
    double mean_without = 0.0, var_without = 0.0;

    [[nodiscard]] nlohmann::ordered_json to_json() const;
    [[nodiscard]] std::string table() const;
};

/// Bins per-trace mean scores of both conditions on one shared grid aligned to multiples of
/// `bin_width`. Variances are population variances. Throws EmptyInput when a side is empty.
ScoreDistribution score_distribution_report(const std::vector<double> &with_trs, const std::vector<double> &without_trs,
                                            double bin_width = 0.1);

} // namespace vpv
