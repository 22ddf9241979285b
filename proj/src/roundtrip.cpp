#include "refuel/roundtrip.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "refuel/text.hpp"

namespace refuel::roundtrip {

using nlohmann::json;

namespace {

template <typename Fn>
auto with_prompt(const std::string& prompt_id, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const PipelineError&) {
        throw;
    } catch (const std::exception& e) {
        throw PipelineError(prompt_id, e.what());
    }
}

}  // namespace

std::vector<std::string> PredictionSet::answers() const {
    std::vector<std::string> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(p.answer);
    return out;
}

VerifyMode verify_mode_from_string(std::string_view s) {
    if (s == "lm") return VerifyMode::lm;
    if (s == "em") return VerifyMode::em;
    if (s == "none") return VerifyMode::none;
    throw std::invalid_argument("verify mode must be lm, em or none; got '" + std::string(s) + "'");
}

std::string_view to_string(VerifyMode m) {
    switch (m) {
        case VerifyMode::lm: return "lm";
        case VerifyMode::em: return "em";
        case VerifyMode::none: return "none";
    }
    return "?";
}

void VerifyConfig::validate() const {
    if (!(threshold >= 0.0)) throw std::invalid_argument("verification threshold must be >= 0");
    if (max_rounds < 1) throw std::invalid_argument("max_rounds must be >= 1");
}

PredictionSet single_pass(const std::string& prompt_id, const std::string& prompt_question,
                          std::span<const corpus::Passage> passages, const genio::Generator& backend,
                          std::optional<int> min_answers) {
    return with_prompt(prompt_id, [&] {
        // genio::predict_answers already drops normalized duplicates.
        auto answers = genio::predict_answers(backend, prompt_question, passages, min_answers);
        PredictionSet set{prompt_id, prompt_question, {}, false};
        if (answers.size() == 1) {
            set.pairs.push_back({prompt_question, answers.front(), 0, std::nullopt});
            return set;
        }
        for (auto& a : answers) {
            auto q = genio::disambiguate(backend, prompt_question, a, passages);
            set.pairs.push_back({std::move(q), std::move(a), 0, std::nullopt});
        }
        return set;
    });
}

PredictionSet round_trip_generate(const std::string& prompt_id, const std::string& prompt_question,
                                  std::span<const corpus::Passage> passages, const genio::Generator& backend,
                                  int max_rounds, std::optional<int> min_answers) {
    if (max_rounds < 1) throw std::invalid_argument("max_rounds must be >= 1");
    PredictionSet set = single_pass(prompt_id, prompt_question, passages, backend, min_answers);
    return with_prompt(prompt_id, [&] {
        std::unordered_set<std::string> known;
        std::vector<std::string> frontier;
        for (const auto& p : set.pairs) {
            known.insert(text::normalize_answer(p.answer));
            frontier.push_back(p.question);
        }
        for (int round = 1; !frontier.empty(); ++round) {
            if (round > max_rounds) {
                set.truncated = true;
                break;
            }
            std::vector<std::string> next;
            for (const auto& q : frontier) {
                for (auto& a : genio::predict_answers(backend, q, passages, min_answers)) {
                    if (!known.insert(text::normalize_answer(a)).second) continue;
                    auto dq = genio::disambiguate(backend, prompt_question, a, passages);
                    next.push_back(dq);
                    set.pairs.push_back({std::move(dq), std::move(a), round, std::nullopt});
                }
            }
            frontier = std::move(next);
        }
        return set;
    });
}

double lm_score(const QAPair& pair, std::span<const corpus::Passage> passages, const genio::Generator& backend) {
    auto scores = genio::score_answer(backend, pair.question, passages, pair.answer);
    // Negated so that larger means less likely; -0.0 becomes 0.0.
    return 0.0 - scores.sum_log_probs();
}

PredictionSet lm_verify(const PredictionSet& set, std::span<const corpus::Passage> passages,
                        const genio::Generator& backend, const VerifyConfig& cfg) {
    cfg.validate();
    std::vector<QAPair> scored = set.pairs;
    for (auto& p : scored) {
        try {
            p.lm_score = lm_score(p, passages, backend);
        } catch (const std::exception&) {
            p.lm_score.reset();
        }
    }
    std::stable_sort(scored.begin(), scored.end(), [](const QAPair& a, const QAPair& b) {
        if (a.lm_score.has_value() != b.lm_score.has_value()) return a.lm_score.has_value();
        return a.lm_score.has_value() && *a.lm_score < *b.lm_score;
    });
    PredictionSet out{set.prompt_id, set.prompt_question, {}, set.truncated};
    for (const auto& p : scored) {
        if (p.lm_score && *p.lm_score <= cfg.threshold) out.pairs.push_back(p);
    }
    if (out.pairs.empty() && cfg.keep_at_least_one && !scored.empty()) out.pairs.push_back(scored.front());
    return out;
}

PredictionSet em_verify(const PredictionSet& set, std::span<const corpus::Passage> passages,
                        const genio::Generator& qa_backend, const VerifyConfig& cfg) {
    cfg.validate();
    PredictionSet out{set.prompt_id, set.prompt_question, {}, set.truncated};
    for (const auto& p : set.pairs) {
        bool keep = false;
        try {
            auto reasked = genio::predict_answers(qa_backend, p.question, passages);
            keep = text::normalize_answer(reasked.front()) == text::normalize_answer(p.answer);
        } catch (const std::exception&) {
            keep = false;
        }
        if (keep) out.pairs.push_back(p);
    }
    if (out.pairs.empty() && cfg.keep_at_least_one && !set.pairs.empty()) out.pairs.push_back(set.pairs.front());
    return out;
}

PredictionSet verify(const PredictionSet& set, std::span<const corpus::Passage> passages,
                     const genio::Generator& backend, const VerifyConfig& cfg) {
    switch (cfg.mode) {
        case VerifyMode::lm: return lm_verify(set, passages, backend, cfg);
        case VerifyMode::em: return em_verify(set, passages, backend, cfg);
        case VerifyMode::none: return set;
    }
    return set;
}

std::string prediction_to_json(const PredictionSet& set) {
    json pairs = json::array();
    for (const auto& p : set.pairs) {
        pairs.push_back({{"question", p.question},
                         {"answer", p.answer},
                         {"round", p.round},
                         {"lm_score", p.lm_score ? json(*p.lm_score) : json(nullptr)}});
    }
    json j = {{"id", set.prompt_id},
              {"prompt_question", set.prompt_question},
              {"pairs", std::move(pairs)},
              {"truncated", set.truncated}};
    return j.dump();
}

PredictionSet prediction_from_json(std::string_view line) {
    auto j = json::parse(line);
    PredictionSet set;
    set.prompt_id = j.at("id").get<std::string>();
    set.prompt_question = j.value("prompt_question", std::string{});
    set.truncated = j.value("truncated", false);
    for (const auto& p : j.at("pairs")) {
        QAPair qa;
        qa.question = p.at("question").get<std::string>();
        qa.answer = p.at("answer").get<std::string>();
        qa.round = p.value("round", 0);
        if (auto s = p.find("lm_score"); s != p.end() && !s->is_null()) qa.lm_score = s->get<double>();
        if (qa.answer.empty()) throw std::invalid_argument("prediction " + set.prompt_id + " has an empty answer");
        set.pairs.push_back(std::move(qa));
    }
    return set;
}

void write_predictions(std::span<const PredictionSet> sets, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& s : sets) out << prediction_to_json(s) << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<PredictionSet> read_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<PredictionSet> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(prediction_from_json(line));
        } catch (const std::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace refuel::roundtrip
