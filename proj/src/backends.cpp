#include "vpv/backends.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "vpv/error.hpp"
#include "vpv/random.hpp"

namespace vpv {

std::string canonical_key(const std::string &task, const json &inputs) {
    // nlohmann::json objects are std::map-backed, so dump() emits keys in sorted order.
    return json{{"task", task}, {"inputs", inputs}}.dump();
}

std::string canonical_key(const Request &r) { return canonical_key(r.task, r.inputs); }

// ---- fixtures ----

void FixtureTable::add(const std::string &task, const json &inputs, json outputs) {
    entries_[canonical_key(task, inputs)] = Entry{task, inputs, std::move(outputs)};
}

void FixtureTable::merge(const FixtureTable &other) {
    for (const auto &[k, e] : other.entries_) {
        entries_[k] = e;
    }
}

const json &FixtureTable::lookup(const Request &request) const {
    const std::string key = canonical_key(request);
    const auto it = entries_.find(key);
    if (it == entries_.end()) {
        throw FixtureMiss(key);
    }
    return it->second.outputs;
}

bool FixtureTable::contains(const Request &request) const { return entries_.contains(canonical_key(request)); }

FixtureTable FixtureTable::from_json(const json &doc) {
    FixtureTable t;
    for (const auto &rec : doc.at("records")) {
        t.add(rec.at("task").get<std::string>(), rec.value("inputs", json::object()), rec.at("outputs"));
    }
    return t;
}

FixtureTable FixtureTable::load(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open fixture file " + path.string());
    }
    try {
        return from_json(json::parse(in));
    } catch (const json::exception &e) {
        throw ConfigError("fixture file " + path.string() + ": " + e.what());
    }
}

json FixtureTable::to_json() const {
    json records = json::array();
    for (const auto &[k, e] : entries_) {
        records.push_back({{"task", e.task}, {"inputs", e.inputs}, {"outputs", e.outputs}});
    }
    return {{"records", records}};
}

void FixtureTable::save(const std::filesystem::path &path) const {
    std::ofstream out(path);
    out << to_json().dump(1) << '\n';
}

FixtureTransport::FixtureTransport(std::shared_ptr<const FixtureTable> table, std::string origin)
    : table_(std::move(table)), origin_(std::move(origin)) {}

json FixtureTransport::call(const Request &request) { return table_->lookup(request); }

// ---- remote ----

struct HttpTransport::Pool {
    std::string origin; // scheme://host:port
    std::string base;   // path prefix, no trailing slash
    std::mutex mu;
    std::vector<std::unique_ptr<httplib::Client>> idle;
};

namespace {

std::pair<std::string, std::string> split_url(const std::string &url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) {
        throw ConfigError("endpoint url needs a scheme: " + url);
    }
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) {
        return {url, ""};
    }
    std::string base = url.substr(slash);
    while (!base.empty() && base.back() == '/') {
        base.pop_back();
    }
    return {url.substr(0, slash), base};
}

} // namespace

HttpTransport::HttpTransport(RemoteEndpoint endpoint) : endpoint_(std::move(endpoint)), pool_(std::make_unique<Pool>()) {
    auto [origin, base] = split_url(endpoint_.url);
    pool_->origin = std::move(origin);
    pool_->base = std::move(base);
}

HttpTransport::~HttpTransport() = default;

json HttpTransport::call(const Request &request) {
    using Kind = BackendFailure::Kind;
    const std::string body = json{{"task", request.task}, {"inputs", request.inputs}, {"context", request.context}}.dump();

    httplib::Headers headers;
    if (!endpoint_.credential_env.empty()) {
        if (const char *tok = std::getenv(endpoint_.credential_env.c_str())) {
            headers.emplace("Authorization", std::string("Bearer ") + tok);
        }
    }

    auto acquire = [&] {
        std::lock_guard lock(pool_->mu);
        if (!pool_->idle.empty()) {
            auto c = std::move(pool_->idle.back());
            pool_->idle.pop_back();
            return c;
        }
        auto c = std::make_unique<httplib::Client>(pool_->origin);
        const auto sec = endpoint_.timeout_ms / 1000;
        const auto usec = (endpoint_.timeout_ms % 1000) * 1000;
        c->set_connection_timeout(sec, usec);
        c->set_read_timeout(sec, usec);
        c->set_write_timeout(sec, usec);
        c->set_keep_alive(true);
        return c;
    };
    auto release = [&](std::unique_ptr<httplib::Client> c) {
        std::lock_guard lock(pool_->mu);
        pool_->idle.push_back(std::move(c));
    };

    const int max_attempts = 1 + std::max(0, endpoint_.retries);
    int backoff = endpoint_.backoff_ms;
    for (int attempt = 1;; ++attempt) {
        last_attempts_.store(attempt);
        const auto t0 = std::chrono::steady_clock::now();
        auto client = acquire();
        auto res = client->Post(pool_->base + "/infer", headers, body, "application/json");
        const double latency =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

        Kind kind = Kind::Server;
        std::string what;
        bool retryable = true;
        if (!res) {
            kind = Kind::Timeout;
            what = httplib::to_string(res.error());
            client.reset(); // drop a possibly broken connection
        } else {
            release(std::move(client));
            if (res->status == 200) {
                try {
                    json doc = json::parse(res->body);
                    if (!doc.is_object() || !doc.contains("outputs")) {
                        throw BackendFailure(Kind::Protocol, "response has no 'outputs' field", latency);
                    }
                    if (attempt > 1) {
                        spdlog::info("{} task={} succeeded after {} attempts", describe(), request.task, attempt);
                    }
                    return std::move(doc.at("outputs"));
                } catch (const json::exception &e) {
                    throw BackendFailure(Kind::Protocol, std::string("malformed response body: ") + e.what(), latency);
                }
            }
            if (res->status >= 500) {
                what = "HTTP " + std::to_string(res->status);
            } else {
                kind = Kind::Protocol;
                what = "HTTP " + std::to_string(res->status);
                retryable = false;
            }
        }

        spdlog::warn("{} task={} attempt {}/{} failed: {}", describe(), request.task, attempt, max_attempts, what);
        if (!retryable || attempt >= max_attempts) {
            throw BackendFailure(kind, what + " after " + std::to_string(attempt) + " attempt(s)", latency);
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
        backoff *= 2;
    }
}

bool HttpTransport::healthy() {
    httplib::Client c(pool_->origin);
    c.set_connection_timeout(endpoint_.timeout_ms / 1000, (endpoint_.timeout_ms % 1000) * 1000);
    c.set_read_timeout(endpoint_.timeout_ms / 1000, (endpoint_.timeout_ms % 1000) * 1000);
    auto res = c.Get(pool_->base + "/health");
    return res && res->status == 200;
}

// ---- helpers ----

YesNo yes_no(const std::vector<AnswerProb> &dist) {
    YesNo out;
    for (const auto &a : dist) {
        std::string lower = a.answer;
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (lower == "yes") {
            out.p_yes += a.p;
        } else if (lower == "no") {
            out.p_no += a.p;
        }
    }
    return out;
}

double inner_product(const std::vector<double> &a, const std::vector<double> &b) {
    if (a.size() != b.size()) {
        throw DimensionMismatch("inner product of " + std::to_string(a.size()) + "- and " + std::to_string(b.size()) +
                                "-dimensional vectors");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

std::vector<PlannerExample> perturb_examples(const std::vector<PlannerExample> &examples, std::uint64_t seed) {
    if (seed == 0 || examples.size() < 2) {
        return examples;
    }
    rnd::Engine g(seed);
    std::vector<PlannerExample> out = examples;
    rnd::shuffle(out, g);
    const std::size_t n = out.size();
    const std::size_t min_keep = (n + 1) / 2;
    const std::size_t keep = min_keep + rnd::below(g, n - min_keep + 1);
    out.resize(keep);
    return out;
}

namespace {

void replace_all(std::string &s, std::string_view from, const std::string &to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

} // namespace

std::string render_planner_prompt(const std::string &tmpl, const std::vector<PlannerExample> &examples,
                                  const std::string &query) {
    std::string block;
    for (const auto &ex : examples) {
        block += "Question: " + ex.query + "\nProgram:\n" + ex.program + "\n\n";
    }
    std::string out = tmpl;
    replace_all(out, "{examples}", block);
    replace_all(out, "{query}", query);
    return out;
}

std::vector<std::size_t> parse_rank_reply(const std::string &reply, std::size_t n) {
    std::vector<std::size_t> out;
    std::size_t i = 0;
    while (i < reply.size()) {
        const unsigned char c = static_cast<unsigned char>(reply[i]);
        if (std::isspace(c) || c == ',') {
            ++i;
            continue;
        }
        if (!std::isdigit(c)) {
            throw RankUnavailable("reply is not a list of trace numbers: '" + reply + "'");
        }
        std::size_t v = 0;
        while (i < reply.size() && std::isdigit(static_cast<unsigned char>(reply[i]))) {
            v = v * 10 + static_cast<std::size_t>(reply[i] - '0');
            if (v > n) {
                throw RankUnavailable("trace number out of range in '" + reply + "'");
            }
            ++i;
        }
        if (v == 0) {
            throw RankUnavailable("trace numbers are 1-based: '" + reply + "'");
        }
        out.push_back(v - 1);
    }
    std::set<std::size_t> seen(out.begin(), out.end());
    if (out.size() != n || seen.size() != n) {
        throw RankUnavailable("reply is not a permutation of " + std::to_string(n) + " traces: '" + reply + "'");
    }
    return out;
}

std::string render_rank_prompt(const std::string &tmpl, const std::string &query,
                               const std::vector<std::string> &traces) {
    std::string block;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        block += "Trace " + std::to_string(i + 1) + ":\n" + traces[i] + "\n\n";
    }
    std::string out = tmpl;
    replace_all(out, "{traces}", block);
    replace_all(out, "{query}", query);
    replace_all(out, "{n}", std::to_string(traces.size()));
    return out;
}

// ---- transport-backed roles ----

namespace {

using Kind = BackendFailure::Kind;

json image_json(const ImageRef &im) { return {{"image", im.handle}, {"width", im.width}, {"height", im.height}}; }

template <class F> auto decode(const std::string &task, F &&f) -> decltype(f()) {
    try {
        return f();
    } catch (const json::exception &e) {
        throw BackendFailure(Kind::Protocol, task + ": unexpected output shape: " + e.what());
    } catch (const std::invalid_argument &e) {
        throw BackendFailure(Kind::Protocol, task + ": " + e.what());
    }
}

double probability(const json &v, const std::string &task) {
    const double p = v.get<double>();
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
        throw BackendFailure(Kind::Protocol, task + ": score outside [0,1]");
    }
    return p;
}

} // namespace

std::vector<Detection> TransportDetector::detect(const ImageRef &image, const std::string &object) {
    const json out = t_->call({"detect", {{"image", image.handle}, {"object", object}}, {{"size", image_json(image)}}});
    return decode("detect", [&] {
        std::vector<Detection> v;
        for (const auto &d : out) {
            const auto &b = d.at("box");
            v.push_back({make_box(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                                  b.at(3).get<double>(), &image),
                         probability(d.at("score"), "detect")});
        }
        return v;
    });
}

std::vector<AnswerProb> TransportVqa::answer(const ImageRef &image, const std::string &question) {
    const json out = t_->call({"vqa", {{"image", image.handle}, {"question", question}}});
    return decode("vqa", [&] {
        std::vector<AnswerProb> v;
        for (const auto &a : out) {
            v.push_back({a.at("answer").get<std::string>(), probability(a.at("p"), "vqa")});
        }
        return v;
    });
}

std::string TransportCaptioner::caption(const ImageRef &image) {
    const json out = t_->call({"caption", {{"image", image.handle}}});
    return decode("caption", [&] { return out.get<std::string>(); });
}

std::vector<double> TransportEmbedder::normalized(const json &out) const {
    auto v = decode("embed", [&] { return out.get<std::vector<double>>(); });
    if (static_cast<int>(v.size()) != dim_) {
        throw BackendFailure(Kind::Protocol, "embed: expected dimension " + std::to_string(dim_) + ", got " +
                                                 std::to_string(v.size()));
    }
    double norm = 0.0;
    for (double x : v) {
        norm += x * x;
    }
    norm = std::sqrt(norm);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw BackendFailure(Kind::Protocol, "embed: zero or non-finite vector");
    }
    for (double &x : v) {
        x /= norm;
    }
    return v;
}

std::vector<double> TransportEmbedder::embed_text(const std::string &text) {
    return normalized(t_->call({"embed", {{"kind", "text"}, {"text", text}}}));
}

std::vector<double> TransportEmbedder::embed_image(const ImageRef &image) {
    return normalized(t_->call({"embed", {{"kind", "image"}, {"image", image.handle}}}));
}

std::vector<Segment> TransportSegmenter::segment(const ImageRef &image) {
    const json out = t_->call({"segment", {{"image", image.handle}}});
    return decode("segment", [&] {
        std::vector<Segment> v;
        for (const auto &s : out) {
            v.push_back({Mask{s.at("mask").get<std::string>(), s.value("label", std::string())},
                         probability(s.at("score"), "segment")});
        }
        return v;
    });
}

std::vector<EditResult> TransportEditor::edit(const ImageRef &image, const Mask &region, const std::string &prompt) {
    const json out = t_->call({"edit", {{"image", image.handle}, {"mask", region.handle}, {"prompt", prompt}}});
    return decode("edit", [&] {
        std::vector<EditResult> v;
        for (const auto &e : out) {
            v.push_back({ImageRef{e.at("image").get<std::string>(), e.value("width", image.width),
                                  e.value("height", image.height)},
                         probability(e.at("score"), "edit")});
        }
        return v;
    });
}

std::vector<std::string> TransportPlanner::plan(const PlannerRequest &request) {
    if (request.n_programs < 1) {
        throw std::invalid_argument("n_programs must be at least 1");
    }
    std::vector<std::string> programs;
    std::set<std::string> seen;
    for (int i = 0; i < request.n_programs && static_cast<int>(programs.size()) < request.n_programs; ++i) {
        const std::uint64_t seed = request.perturbation_seed + static_cast<std::uint64_t>(i);
        const auto examples = perturb_examples(request.in_context_examples, seed);
        Request r{"plan",
                  {{"query", request.query}, {"seed", seed}},
                  {{"prompt", render_planner_prompt(template_, examples, request.query)},
                   {"decoding", request.decoding}}};
        const json out = t_->call(r);
        const auto texts = decode("plan", [&] {
            return out.is_string() ? std::vector<std::string>{out.get<std::string>()}
                                   : out.get<std::vector<std::string>>();
        });
        for (const auto &t : texts) {
            if (static_cast<int>(programs.size()) < request.n_programs && seen.insert(t).second) {
                programs.push_back(t);
            }
        }
    }
    return programs;
}

std::vector<std::size_t> TransportRanker::rank(const std::vector<std::string> &traces, const std::string &instruction) {
    const json out = t_->call({"rank", {{"traces", traces}, {"instruction", instruction}}});
    if (!out.is_string()) {
        throw RankUnavailable("ranker reply is not text");
    }
    return parse_rank_reply(out.get<std::string>(), traces.size());
}

// ---- suite ----

bool BackendSuite::healthy() const {
    return std::all_of(transports.begin(), transports.end(), [](const auto &t) { return t && t->healthy(); });
}

BackendSuite BackendSuite::over(std::shared_ptr<Transport> transport, int embedding_dim, std::string planner_template) {
    BackendSuite s;
    s.detector = std::make_shared<TransportDetector>(transport);
    s.vqa = std::make_shared<TransportVqa>(transport);
    s.captioner = std::make_shared<TransportCaptioner>(transport);
    s.embedder = std::make_shared<TransportEmbedder>(transport, embedding_dim);
    s.segmenter = std::make_shared<TransportSegmenter>(transport);
    s.editor = std::make_shared<TransportEditor>(transport);
    s.planner = std::make_shared<TransportPlanner>(transport, std::move(planner_template));
    s.ranker = std::make_shared<TransportRanker>(transport);
    s.transports.push_back(std::move(transport));
    return s;
}

BackendSuite BackendSuite::from_config(const json &cfg, const std::filesystem::path &base_dir) {
    std::map<std::string, std::shared_ptr<const FixtureTable>> loaded;

    auto make_transport = [&](const json &spec) -> std::shared_ptr<Transport> {
        if (spec.contains("mock")) {
            std::filesystem::path p = spec.at("mock").get<std::string>();
            if (p.is_relative()) {
                p = base_dir / p;
            }
            auto &table = loaded[p.string()];
            if (!table) {
                table = std::make_shared<FixtureTable>(FixtureTable::load(p));
            }
            return std::make_shared<FixtureTransport>(table, p.filename().string());
        }
        if (spec.contains("remote")) {
            const json &r = spec.at("remote");
            RemoteEndpoint ep;
            ep.url = r.at("url").get<std::string>();
            ep.timeout_ms = r.value("timeout_ms", ep.timeout_ms);
            ep.retries = r.value("retries", ep.retries);
            ep.backoff_ms = r.value("backoff_ms", ep.backoff_ms);
            ep.credential_env = r.value("credential_env", std::string());
            return std::make_shared<HttpTransport>(ep);
        }
        throw ConfigError("backend spec needs 'mock' or 'remote': " + spec.dump());
    };

    const int dim = cfg.value("embedding_dim", 0);
    if (dim <= 0) {
        throw ConfigError("backends.embedding_dim must be positive");
    }
    std::string planner_template = cfg.value("planner_template", std::string("{examples}Question: {query}\nProgram:\n"));
    if (cfg.contains("planner_template_file")) {
        std::filesystem::path p = cfg.at("planner_template_file").get<std::string>();
        if (p.is_relative()) {
            p = base_dir / p;
        }
        std::ifstream in(p);
        if (!in) {
            throw ConfigError("cannot open planner template " + p.string());
        }
        planner_template.assign(std::istreambuf_iterator<char>(in), {});
    }

    std::shared_ptr<Transport> fallback;
    if (cfg.contains("default")) {
        fallback = make_transport(cfg.at("default"));
    }
    std::map<std::string, std::shared_ptr<Transport>> by_role;
    for (const char *role : {"detector", "vqa", "captioner", "embedder", "segmenter", "editor", "planner", "ranker"}) {
        if (cfg.contains(role)) {
            by_role[role] = make_transport(cfg.at(role));
        } else if (fallback) {
            by_role[role] = fallback;
        }
    }

    BackendSuite s;
    std::set<Transport *> seen;
    auto track = [&](const std::shared_ptr<Transport> &t) {
        if (t && seen.insert(t.get()).second) {
            s.transports.push_back(t);
        }
    };
    if (auto t = by_role["detector"]) {
        s.detector = std::make_shared<TransportDetector>(t);
        track(t);
    }
    if (auto t = by_role["vqa"]) {
        s.vqa = std::make_shared<TransportVqa>(t);
        track(t);
    }
    if (auto t = by_role["captioner"]) {
        s.captioner = std::make_shared<TransportCaptioner>(t);
        track(t);
    }
    if (auto t = by_role["embedder"]) {
        s.embedder = std::make_shared<TransportEmbedder>(t, dim);
        track(t);
    }
    if (auto t = by_role["segmenter"]) {
        s.segmenter = std::make_shared<TransportSegmenter>(t);
        track(t);
    }
    if (auto t = by_role["editor"]) {
        s.editor = std::make_shared<TransportEditor>(t);
        track(t);
    }
    if (auto t = by_role["planner"]) {
        s.planner = std::make_shared<TransportPlanner>(t, planner_template);
        track(t);
    }
    if (auto t = by_role["ranker"]) {
        s.ranker = std::make_shared<TransportRanker>(t);
        track(t);
    }
    return s;
}

} // namespace vpv
