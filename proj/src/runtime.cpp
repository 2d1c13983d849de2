#include "vpv/runtime.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include "vpv/error.hpp"
#include "vpv/expr.hpp"

namespace vpv {

// ---- environment ----

const Environment::Frame *Environment::lookup(const std::string &name) const {
    for (const Frame *f = head_.get(); f != nullptr; f = f->parent.get()) {
        if (f->name == name) {
            return f;
        }
    }
    return nullptr;
}

const Value *Environment::find(const std::string &name) const {
    const Frame *f = lookup(name);
    return f ? &f->value : nullptr;
}

const Value &Environment::at(const std::string &name) const {
    const Value *v = find(name);
    if (v == nullptr) {
        throw UnknownVariable(name);
    }
    return *v;
}

std::optional<Provenance> Environment::provenance(const std::string &name) const {
    const Frame *f = lookup(name);
    if (f == nullptr) {
        return std::nullopt;
    }
    return f->prov;
}

Environment Environment::bind(const std::string &name, Value value, Provenance prov) const {
    if (lookup(name) != nullptr) {
        throw RebindError(name);
    }
    Environment out;
    out.head_ = std::make_shared<const Frame>(Frame{head_, name, std::move(value), prov});
    return out;
}

std::vector<std::string> Environment::names() const {
    std::vector<std::string> out;
    for (const Frame *f = head_.get(); f != nullptr; f = f->parent.get()) {
        out.push_back(f->name);
    }
    return out;
}

double Candidate::s() const {
    if (!report) {
        throw MissingScores();
    }
    return report->s_final;
}

// ---- executors ----

namespace {

std::string num(double d) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, d);
    return std::string(buf, r.ptr);
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string &s, char sep) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        const auto next = s.find(sep, pos);
        std::string part = trim(std::string_view(s).substr(pos, next == std::string::npos ? std::string::npos : next - pos));
        if (!part.empty()) {
            out.push_back(std::move(part));
        }
        if (next == std::string::npos) {
            return out;
        }
        pos = next + 1;
    }
}

template <class T> const T &arg_as(const ResolvedArgs &args, const char *name) {
    const auto it = args.find(name);
    if (it == args.end()) {
        throw std::invalid_argument(std::string("missing argument '") + name + "'");
    }
    const T *v = it->second.get_if<T>();
    if (v == nullptr) {
        throw std::invalid_argument(std::string("argument '") + name + "' has type " +
                                    std::string(to_string(it->second.type())));
    }
    return *v;
}

template <class T> T &need(const std::shared_ptr<T> &p, const char *role) {
    if (!p) {
        throw ConfigError(std::string("no ") + role + " backend configured");
    }
    return *p;
}

ImageRef mask_region(const ImageRef &image, const Mask &m) { return ImageRef{m.handle, image.width, image.height}; }

/// Softmax over similarities with CLIP's logit scale.
std::vector<double> softmax_scaled(const std::vector<double> &sims) {
    constexpr double kLogitScale = 100.0;
    const double hi = *std::max_element(sims.begin(), sims.end());
    std::vector<double> out(sims.size());
    double z = 0.0;
    for (std::size_t i = 0; i < sims.size(); ++i) {
        out[i] = std::exp(kLogitScale * (sims[i] - hi));
        z += out[i];
    }
    for (double &x : out) {
        x /= z;
    }
    return out;
}

std::vector<Candidate> exec_loc(const ExecContext &ctx, const Step &, const ResolvedArgs &args, const Environment &) {
    const auto &image = arg_as<ImageRef>(args, "image");
    const auto &object = arg_as<std::string>(args, "object");
    std::vector<Candidate> out;
    for (const auto &d : need(ctx.backends->detector, "detector").detect(image, object)) {
        out.push_back({d.box, d.score, VerifySubject{crop_region(image, d.box), object, {}}});
    }
    return out;
}

std::vector<Candidate> exec_vqa(const ExecContext &ctx, const Step &, const ResolvedArgs &args, const Environment &) {
    const auto &image = arg_as<ImageRef>(args, "image");
    const auto &question = arg_as<std::string>(args, "question");
    std::vector<Candidate> out;
    for (const auto &a : need(ctx.backends->vqa, "vqa").answer(image, question)) {
        out.push_back({a.answer, a.p, VerifySubject{image, a.answer, question}});
    }
    return out;
}

std::vector<Candidate> exec_seg(const ExecContext &ctx, const Step &, const ResolvedArgs &args, const Environment &) {
    const auto &image = arg_as<ImageRef>(args, "image");
    std::vector<Candidate> out;
    for (const auto &s : need(ctx.backends->segmenter, "segmenter").segment(image)) {
        out.push_back({s.mask, s.score, VerifySubject{mask_region(image, s.mask), s.mask.label, {}}});
    }
    return out;
}

std::vector<Candidate> exec_select(const ExecContext &ctx, const Step &, const ResolvedArgs &args,
                                   const Environment &) {
    const auto &image = arg_as<ImageRef>(args, "image");
    const auto &query = arg_as<std::string>(args, "query");
    auto &embedder = need(ctx.backends->embedder, "embedder");
    const auto segments = need(ctx.backends->segmenter, "segmenter").segment(image);
    if (segments.empty()) {
        return {};
    }
    const auto q = embedder.embed_text(query);
    std::vector<double> sims;
    for (const auto &s : segments) {
        sims.push_back(inner_product(embedder.embed_image(mask_region(image, s.mask)), q));
    }
    const auto p = softmax_scaled(sims);
    std::vector<Candidate> out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        out.push_back({segments[i].mask, p[i], VerifySubject{mask_region(image, segments[i].mask), query, {}}});
    }
    return out;
}

std::vector<Candidate> exec_classify(const ExecContext &ctx, const Step &, const ResolvedArgs &args,
                                     const Environment &) {
    const auto &image = arg_as<ImageRef>(args, "image");
    const auto &box = arg_as<Box>(args, "box");
    const auto categories = split(arg_as<std::string>(args, "categories"), ',');
    if (categories.empty()) {
        return {};
    }
    auto &embedder = need(ctx.backends->embedder, "embedder");
    const ImageRef crop = crop_region(image, box);
    const auto v = embedder.embed_image(crop);
    std::vector<double> sims;
    for (const auto &c : categories) {
        sims.push_back(inner_product(v, embedder.embed_text(c)));
    }
    const auto p = softmax_scaled(sims);
    std::vector<Candidate> out;
    for (std::size_t i = 0; i < categories.size(); ++i) {
        out.push_back({categories[i], p[i], VerifySubject{crop, categories[i], {}}});
    }
    return out;
}

std::vector<Candidate> exec_replace(const ExecContext &ctx, const Step &, const ResolvedArgs &args,
                                    const Environment &) {
    const auto &image = arg_as<ImageRef>(args, "image");
    const auto &mask = arg_as<Mask>(args, "object");
    const auto &prompt = arg_as<std::string>(args, "prompt");
    std::vector<Candidate> out;
    for (const auto &e : need(ctx.backends->editor, "editor").edit(image, mask, prompt)) {
        out.push_back({e.image, e.score, VerifySubject{e.image, prompt, {}}});
    }
    return out;
}

std::vector<Candidate> exec_align(const ExecContext &ctx, const Step &, const ResolvedArgs &args,
                                  const Environment &) {
    const auto &image = arg_as<ImageRef>(args, "image");
    const auto parts = split(arg_as<std::string>(args, "parts"), ';');
    auto &embedder = need(ctx.backends->embedder, "embedder");
    const auto segments = need(ctx.backends->segmenter, "segmenter").segment(image);
    if (parts.empty() || segments.empty()) {
        return {};
    }
    std::vector<std::vector<double>> text, visual;
    for (const auto &p : parts) {
        text.push_back(embedder.embed_text(p));
    }
    for (const auto &s : segments) {
        visual.push_back(embedder.embed_image(mask_region(image, s.mask)));
    }
    const PartAlignment a = part_alignment_score(text, visual);
    std::string joined;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        joined += (i ? " and " : "") + parts[i];
    }
    const double p = std::clamp((a.score + 1.0) / 2.0, 0.0, 1.0);
    return {Candidate{a.score, p, VerifySubject{image, joined, {}}}};
}

std::vector<Candidate> exec_count(const ExecContext &, const Step &, const ResolvedArgs &args, const Environment &) {
    const auto it = args.find("var");
    if (it == args.end()) {
        throw std::invalid_argument("missing argument 'var'");
    }
    double n = 1.0;
    if (const auto *l = it->second.get_if<List>()) {
        n = static_cast<double>(l->items.size());
    }
    return {Candidate{n, 1.0}};
}

ExprValue to_expr_value(const Value &v, const std::string &name) {
    if (const auto *s = v.get_if<std::string>()) {
        return *s;
    }
    if (const auto *d = v.get_if<double>()) {
        return *d;
    }
    if (const auto *b = v.get_if<bool>()) {
        return *b;
    }
    if (const auto *l = v.get_if<List>()) {
        return static_cast<double>(l->items.size());
    }
    throw ExprError("variable " + name + " holds a " + std::string(to_string(v.type())) + ", not a scalar");
}

std::vector<Candidate> exec_eval(const ExecContext &, const Step &, const ResolvedArgs &args, const Environment &env) {
    const Expression e = Expression::parse(arg_as<std::string>(args, "expr"));
    const ExprValue r = e.evaluate([&](const std::string &name) { return to_expr_value(env.at(name), name); });
    Value v = std::visit([](const auto &x) { return Value(x); }, r);
    return {Candidate{std::move(v), 1.0}};
}

std::vector<Candidate> exec_result(const ExecContext &, const Step &, const ResolvedArgs &args, const Environment &) {
    const auto it = args.find("var");
    if (it == args.end()) {
        throw std::invalid_argument("missing argument 'var'");
    }
    return {Candidate{it->second, 1.0}};
}

} // namespace

ImageRef crop_region(const ImageRef &image, const Box &box) {
    return ImageRef{image.handle + "#box=" + num(box.x0) + "," + num(box.y0) + "," + num(box.x1) + "," + num(box.y1),
                    static_cast<int>(std::ceil(box.x1 - box.x0)), static_cast<int>(std::ceil(box.y1 - box.y0))};
}

const ExecutorTable &builtin_executors() {
    static const ExecutorTable table{
        {"LOC", {exec_loc, ValueType::Box}},           {"VQA", {exec_vqa, ValueType::Text}},
        {"SEG", {exec_seg, ValueType::Mask}},          {"SELECT", {exec_select, ValueType::Mask}},
        {"CLASSIFY", {exec_classify, ValueType::Text}}, {"REPLACE", {exec_replace, ValueType::Image}},
        {"ALIGN", {exec_align, ValueType::Number}},     {"COUNT", {exec_count, ValueType::Number}},
        {"EVAL", {exec_eval, ValueType::Any}},          {"RESULT", {exec_result, ValueType::Any}},
    };
    return table;
}

// ---- registry ----

ModuleRegistry ModuleRegistry::from_json(const nlohmann::json &doc, const ExecutorTable &executors) {
    ModuleRegistry reg;
    try {
        reg.top_k_ = doc.value("top_k", std::size_t{4});
        if (reg.top_k_ == 0) {
            throw ConfigError("top_k must be positive");
        }
        if (doc.contains("inputs")) {
            reg.table_.inputs.clear();
            for (const auto &[name, type] : doc.at("inputs").items()) {
                const auto t = value_type_from_string(type.get<std::string>());
                if (!t) {
                    throw ConfigError("input " + name + " has unknown type " + type.dump());
                }
                reg.table_.inputs[name] = *t;
            }
        }
        reg.table_.terminal_op = doc.value("terminal", std::string("RESULT"));
        const double default_tau = doc.value("default_tau", 1.2);

        for (const auto &m : doc.at("modules")) {
            ModuleSpec spec;
            spec.name = m.at("name").get<std::string>();
            for (const auto &a : m.value("args", nlohmann::json::array())) {
                const auto t = value_type_from_string(a.at("type").get<std::string>());
                if (!t) {
                    throw ConfigError(spec.name + ": unknown argument type " + a.at("type").dump());
                }
                spec.signature.args.push_back({a.at("name").get<std::string>(), *t});
            }
            const auto out = value_type_from_string(m.at("output").get<std::string>());
            if (!out) {
                throw ConfigError(spec.name + ": unknown output type " + m.at("output").dump());
            }
            spec.signature.output = *out;

            const std::string exec_name = m.value("executor", spec.name);
            const auto ex = executors.find(exec_name);
            if (ex == executors.end()) {
                throw ConfigError(spec.name + ": no executor named " + exec_name);
            }
            if (ex->second.output != spec.signature.output) {
                throw ConfigError(spec.name + ": executor produces " + std::string(to_string(ex->second.output)) +
                                  " but the signature declares " + std::string(to_string(spec.signature.output)));
            }
            spec.executor = ex->second;

            spec.tau = m.value("tau", default_tau);
            if (!(spec.tau >= 1.0) || !std::isfinite(spec.tau)) {
                throw ConfigError(spec.name + ": tau must be >= 1");
            }
            if (m.contains("verifiers")) {
                const auto &v = m.at("verifiers");
                auto tmpl = [&](const char *key) -> std::optional<std::string> {
                    if (!v.contains(key)) {
                        return std::nullopt;
                    }
                    std::string t = v.at(key).get<std::string>();
                    const auto open = t.find('{');
                    const auto close = t.find('}', open == std::string::npos ? 0 : open);
                    if (open == std::string::npos || close == std::string::npos ||
                        t.find('{', open + 1) != std::string::npos) {
                        throw ConfigError(spec.name + ": template '" + t + "' needs exactly one {placeholder}");
                    }
                    return t;
                };
                spec.templates.itm = tmpl("itm");
                spec.templates.caption = tmpl("caption");
                spec.templates.vqa = tmpl("vqa");
            }
            spec.verifiable = m.value("verifiable", spec.templates.enabled() > 0);
            if (spec.verifiable && spec.templates.enabled() == 0) {
                throw ConfigError(spec.name + ": verifiable module has no verifier templates");
            }
            reg.table_.ops[spec.name] = spec.signature;
            reg.modules_[spec.name] = std::move(spec);
        }
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError(std::string("module registry: ") + e.what());
    }
    if (!reg.modules_.contains(reg.table_.terminal_op)) {
        throw ConfigError("registry lacks the terminal operation " + reg.table_.terminal_op);
    }
    return reg;
}

ModuleRegistry ModuleRegistry::load(const std::string &path, const ExecutorTable &executors) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open registry " + path);
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError("registry " + path + ": " + e.what());
    }
    return from_json(doc, executors);
}

const ModuleSpec *ModuleRegistry::find(const std::string &op) const {
    const auto it = modules_.find(op);
    return it == modules_.end() ? nullptr : &it->second;
}

const ModuleSpec &ModuleRegistry::at(const std::string &op) const {
    const ModuleSpec *m = find(op);
    if (m == nullptr) {
        throw UnknownOp(op);
    }
    return *m;
}

// ---- execution ----

CandidateSet execute_step(const Step &step, const Environment &env, const ModuleRegistry &registry,
                          const ExecContext &ctx) {
    const ModuleSpec &module = registry.at(step.op);

    ResolvedArgs args;
    for (const auto &[name, value] : step.args) {
        if (const auto *ref = std::get_if<VarRef>(&value)) {
            args.emplace(name, env.at(ref->name));
        } else {
            args.emplace(name, std::visit(
                                   [](const auto &lit) -> Value {
                                       if constexpr (std::is_same_v<std::decay_t<decltype(lit)>, VarRef>) {
                                           return Value();
                                       } else {
                                           return Value(lit);
                                       }
                                   },
                                   value));
        }
    }

    std::vector<Candidate> raw;
    try {
        raw = module.executor.fn(ctx, step, args, env);
    } catch (const BackendFailure &e) {
        throw ExecutorFailure(step.line, e.what());
    } catch (const ExprError &e) {
        throw ExecutorFailure(step.line, e.what());
    } catch (const std::invalid_argument &e) {
        throw ExecutorFailure(step.line, e.what());
    } catch (const DimensionMismatch &e) {
        throw ExecutorFailure(step.line, e.what());
    } catch (const EmptyInput &e) {
        throw ExecutorFailure(step.line, e.what());
    }

    if (raw.empty()) {
        throw EmptyCandidates(step.line);
    }
    for (const auto &c : raw) {
        if (!std::isfinite(c.p) || c.p < 0.0 || c.p > 1.0) {
            throw ExecutorFailure(step.line, "candidate probability outside [0,1]");
        }
        if (module.signature.output != ValueType::Any && c.value.type() != module.signature.output) {
            throw ExecutorFailure(step.line, "executor returned " + std::string(to_string(c.value.type())) +
                                                 ", expected " + std::string(to_string(module.signature.output)));
        }
    }
    std::stable_sort(raw.begin(), raw.end(), [](const Candidate &a, const Candidate &b) { return a.p > b.p; });
    if (raw.size() > ctx.top_k) {
        raw.resize(ctx.top_k);
    }
    return CandidateSet{step, std::move(raw)};
}

Environment bind_candidate(const Environment &env, const Step &step, const Candidate &c, int candidate_index) {
    return env.bind(step.out_var, c.value, Provenance{step.line, candidate_index});
}

} // namespace vpv
