#include "vpv/verification.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "vpv/error.hpp"
#include "vpv/random.hpp"

namespace vpv {

// ---- vocabulary ----

bool NegativeVocabulary::add(const std::string &answer, const std::string &opposite, double sim) {
    if (!(sim < threshold_) || opposite == answer) {
        return false;
    }
    entries_[answer].push_back({opposite, sim});
    return true;
}

const std::vector<ScoredToken> *NegativeVocabulary::opposites(const std::string &answer) const {
    const auto it = entries_.find(answer);
    return it == entries_.end() || it->second.empty() ? nullptr : &it->second;
}

NegativeVocabulary NegativeVocabulary::build(const std::vector<std::string> &answers,
                                             const std::vector<std::string> &pool, Embedder &embedder,
                                             double threshold) {
    NegativeVocabulary v(threshold);
    std::map<std::string, std::vector<double>> cache;
    auto embed = [&](const std::string &w) -> const std::vector<double> & {
        auto it = cache.find(w);
        if (it == cache.end()) {
            it = cache.emplace(w, embedder.embed_text(w)).first;
        }
        return it->second;
    };
    for (const auto &a : answers) {
        for (const auto &w : pool) {
            if (w != a) {
                v.add(a, w, inner_product(embed(a), embed(w)));
            }
        }
    }
    return v;
}

NegativeVocabulary NegativeVocabulary::from_json(const nlohmann::json &doc) {
    try {
        NegativeVocabulary v(doc.value("threshold", 0.5));
        if (doc.contains("entries")) {
            for (const auto &[answer, opp] : doc.at("entries").items()) {
                // Objects iterate in key order; arrays of [token, sim] keep file order.
                if (opp.is_object()) {
                    for (const auto &[token, sim] : opp.items()) {
                        v.add(answer, token, sim.get<double>());
                    }
                } else {
                    for (const auto &pair : opp) {
                        v.add(answer, pair.at(0).get<std::string>(), pair.at(1).get<double>());
                    }
                }
            }
        }
        if (doc.contains("fallback")) {
            v.set_fallback(doc.at("fallback").get<std::vector<std::string>>());
        }
        return v;
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError(std::string("negative vocabulary: ") + e.what());
    }
}

NegativeVocabulary NegativeVocabulary::load(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open negative vocabulary " + path.string());
    }
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error &e) {
        throw ConfigError("negative vocabulary " + path.string() + ": " + e.what());
    }
}

nlohmann::json NegativeVocabulary::to_json() const {
    nlohmann::json entries = nlohmann::json::object();
    for (const auto &[answer, list] : entries_) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto &t : list) {
            arr.push_back({t.token, t.sim});
        }
        entries[answer] = std::move(arr);
    }
    return {{"threshold", threshold_}, {"entries", entries}, {"fallback", fallback_}};
}

std::string semantic_opposite(const std::string &answer, const NegativeVocabulary &vocab, NegativePolicy policy,
                              std::uint64_t seed) {
    rnd::Engine g(rnd::mix(seed, rnd::fnv1a(answer)));
    if (const auto *list = vocab.opposites(answer)) {
        if (policy == NegativePolicy::Lowest) {
            const auto it = std::min_element(list->begin(), list->end(), [](const ScoredToken &a, const ScoredToken &b) {
                return a.sim < b.sim || (a.sim == b.sim && a.token < b.token);
            });
            return it->token;
        }
        return (*list)[rnd::below(g, list->size())].token;
    }

    std::vector<std::string> pool;
    for (const auto &t : vocab.fallback()) {
        if (t != answer) {
            pool.push_back(t);
        }
    }
    if (pool.empty()) {
        throw NoOppositeAvailable(answer);
    }
    if (policy == NegativePolicy::Lowest) {
        return *std::min_element(pool.begin(), pool.end());
    }
    return pool[rnd::below(g, pool.size())];
}

// ---- templates ----

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

} // namespace

std::string qa_to_sentence(const std::string &question, const std::string &answer) {
    static const std::set<std::string> wh{"what", "which", "who", "whom", "whose", "where", "when", "why", "how"};
    static const std::set<std::string> aux{"is", "are", "was", "were", "do", "does", "did"};

    std::string q = question;
    while (!q.empty() && (q.back() == '?' || std::isspace(static_cast<unsigned char>(q.back())))) {
        q.pop_back();
    }
    std::istringstream is(q);
    std::vector<std::string> words;
    for (std::string w; is >> w;) {
        words.push_back(w);
    }
    std::size_t start = 0;
    if (start < words.size() && wh.contains(lower(words[start]))) {
        ++start;
        if (start < words.size() && aux.contains(lower(words[start]))) {
            ++start;
        }
    }
    std::string stem;
    for (std::size_t i = start; i < words.size(); ++i) {
        stem += (stem.empty() ? "" : " ") + words[i];
    }
    return stem.empty() ? answer : stem + " is " + answer;
}

std::string fill_template(const std::string &tmpl, const std::string &text) {
    const auto open = tmpl.find('{');
    const auto close = open == std::string::npos ? std::string::npos : tmpl.find('}', open);
    if (close == std::string::npos) {
        throw ConfigError("template '" + tmpl + "' has no {placeholder}");
    }
    return tmpl.substr(0, open) + text + tmpl.substr(close + 1);
}

std::string subject_text(const VerifySubject &subject, const std::string &answer) {
    return subject.question.empty() ? answer : qa_to_sentence(subject.question, answer);
}

double verify_itm(const std::string &text, const ImageRef &image, const std::string &tmpl, Embedder &embedder) {
    return inner_product(embedder.embed_image(image), embedder.embed_text(fill_template(tmpl, text)));
}

double verify_caption(const std::string &text, const ImageRef &image, const std::string &tmpl, Captioner &captioner,
                      Embedder &embedder) {
    const std::string caption = captioner.caption(image);
    return inner_product(embedder.embed_text(caption), embedder.embed_text(fill_template(tmpl, text)));
}

double verify_vqa(const std::string &text, const ImageRef &image, const std::string &tmpl, VqaModel &vqa) {
    const YesNo yn = yes_no(vqa.answer(image, fill_template(tmpl, text)));
    return yn.p_yes - yn.p_no;
}

// ---- mixture ----

double mixture_of_differences(const VerifierReport &r) {
    double total = 0.0;
    int n = 0;
    auto add = [&](const std::optional<double> &s, const std::optional<double> &neg) {
        if (s) {
            total += *s - neg.value_or(0.0);
            ++n;
        }
    };
    add(r.s_itm, r.n_itm);
    add(r.s_cap, r.n_cap);
    add(r.s_vqa, r.n_vqa);
    return n == 0 ? 0.0 : total / n;
}

double difference_of_means(const VerifierReport &r) {
    double pos = 0.0, neg = 0.0;
    int n = 0;
    for (const auto &[s, m] : {std::pair{r.s_itm, r.n_itm}, std::pair{r.s_cap, r.n_cap}, std::pair{r.s_vqa, r.n_vqa}}) {
        if (s) {
            pos += *s;
            neg += m.value_or(0.0);
            ++n;
        }
    }
    return n == 0 ? 0.0 : pos / n - neg / n;
}

namespace {

template <class T> T &need(const std::shared_ptr<T> &p, const char *role) {
    if (!p) {
        throw ConfigError(std::string("verification needs a ") + role + " backend");
    }
    return *p;
}

} // namespace

VerifierReport verification_score(const Candidate &candidate, const ModuleSpec &module,
                                  const NegativeVocabulary &vocab, BackendSuite &backends,
                                  const VerificationConfig &cfg) {
    if (!candidate.subject) {
        throw std::logic_error("candidate of " + module.name + " carries nothing to verify");
    }
    const VerifySubject &subj = *candidate.subject;
    const auto &t = module.templates;
    if (t.enabled() == 0) {
        throw ConfigError(module.name + " has no enabled verifier");
    }

    VerifierReport r;
    const std::string text = subject_text(subj, subj.answer);
    std::string neg_text;
    if (cfg.negative_sampling) {
        r.negative = semantic_opposite(subj.answer, vocab, cfg.policy, cfg.seed);
        neg_text = subject_text(subj, r.negative);
    }

    if (t.itm) {
        auto &e = need(backends.embedder, "embedder");
        r.s_itm = verify_itm(text, subj.region, *t.itm, e);
        if (cfg.negative_sampling) {
            r.n_itm = verify_itm(neg_text, subj.region, *t.itm, e);
        }
    }
    if (t.caption) {
        auto &c = need(backends.captioner, "captioner");
        auto &e = need(backends.embedder, "embedder");
        r.s_cap = verify_caption(text, subj.region, *t.caption, c, e);
        if (cfg.negative_sampling) {
            r.n_cap = verify_caption(neg_text, subj.region, *t.caption, c, e);
        }
    }
    if (t.vqa) {
        auto &v = need(backends.vqa, "vqa");
        r.s_vqa = verify_vqa(text, subj.region, *t.vqa, v);
        if (cfg.negative_sampling) {
            r.n_vqa = verify_vqa(neg_text, subj.region, *t.vqa, v);
        }
    }
    r.s_final = mixture_of_differences(r);
    return r;
}

void verify_candidates(CandidateSet &cs, const ModuleSpec &module, const NegativeVocabulary &vocab,
                       BackendSuite &backends, const VerificationConfig &cfg) {
    if (!module.verifiable) {
        return;
    }
    for (auto &c : cs.candidates) {
        c.report = verification_score(c, module, vocab, backends, cfg);
    }
}

// ---- calibration ----

double calibration_weight(double s, double s_min, double s_max, double tau) {
    if (s_max == s_min) {
        return 1.0;
    }
    if (s == s_min) {
        return 1.0 / tau;
    }
    if (s == s_max) {
        return tau;
    }
    return (s - s_min) / (s_max - s_min) * (tau - 1.0 / tau) + 1.0 / tau;
}

CandidateSet calibrate(CandidateSet cs, double tau) {
    if (cs.candidates.empty()) {
        throw EmptyInput("calibrate needs at least one candidate");
    }
    if (!(tau >= 1.0)) {
        throw std::invalid_argument("tau must be >= 1");
    }
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (const auto &c : cs.candidates) {
        const double s = c.s(); // throws MissingScores
        lo = first ? s : std::min(lo, s);
        hi = first ? s : std::max(hi, s);
        first = false;
    }
    for (auto &c : cs.candidates) {
        c.w = calibration_weight(c.s(), lo, hi, tau);
        c.p_cal = *c.w * c.p;
    }
    std::stable_sort(cs.candidates.begin(), cs.candidates.end(),
                     [](const Candidate &a, const Candidate &b) { return *a.p_cal > *b.p_cal; });
    return cs;
}

} // namespace vpv
