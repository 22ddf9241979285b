#include "refuel/genio.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "refuel/text.hpp"

namespace refuel::genio {

using nlohmann::json;

namespace {

std::string key(std::string_view s) { return text::normalize_answer(s); }

void require_passages(std::span<const corpus::Passage> passages) {
    if (passages.empty()) throw GeneratorError("generator called without passages");
}

json passages_to_json(std::span<const corpus::Passage> passages) {
    json out = json::array();
    for (const auto& p : passages) out.push_back({{"id", p.id}, {"text", p.text}, {"title", p.title}});
    return out;
}

[[noreturn]] void protocol_fail(const std::string& what, std::string_view raw) {
    throw ProtocolError("protocol error: " + what, std::string(raw));
}

json parse_body(std::string_view body) {
    try {
        return json::parse(body);
    } catch (const json::exception& e) {
        protocol_fail(std::string("body is not JSON (") + e.what() + ")", body);
    }
}

std::vector<std::string> strings_of(const json& j, const char* field, std::string_view raw) {
    auto it = j.find(field);
    if (it == j.end() || !it->is_array()) protocol_fail(std::string("'") + field + "' must be a list", raw);
    std::vector<std::string> out;
    for (const auto& e : *it) {
        if (!e.is_string()) protocol_fail(std::string("'") + field + "' entries must be strings", raw);
        out.push_back(e.get<std::string>());
    }
    return out;
}

}  // namespace

std::string_view to_string(Mode mode) {
    switch (mode) {
        case Mode::predict_answers: return "predict_answers";
        case Mode::disambiguate: return "disambiguate";
        case Mode::score_answer: return "score_answer";
    }
    return "?";
}

Mode mode_from_string(std::string_view s) {
    if (s == "predict_answers") return Mode::predict_answers;
    if (s == "disambiguate") return Mode::disambiguate;
    if (s == "score_answer") return Mode::score_answer;
    throw std::invalid_argument("unknown generator mode: " + std::string(s));
}

void TokenScores::validate() const {
    if (tokens.size() != log_probs.size()) {
        throw GeneratorError("token scores: " + std::to_string(tokens.size()) + " tokens but " +
                             std::to_string(log_probs.size()) + " log-probs");
    }
    for (double lp : log_probs) {
        if (!(lp <= 0.0)) throw GeneratorError("token scores: log-prob " + std::to_string(lp) + " is not <= 0");
    }
}

double TokenScores::sum_log_probs() const {
    double s = 0.0;
    for (double lp : log_probs) s += lp;
    return s;
}

std::vector<std::string> predict_answers(const Generator& backend, const std::string& question,
                                         std::span<const corpus::Passage> passages, std::optional<int> min_answers) {
    require_passages(passages);
    if (min_answers && *min_answers < 1) throw GeneratorError("min_answers must be positive");
    auto raw = backend.predict_answers(question, passages, min_answers);
    std::unordered_set<std::string> seen;
    std::vector<std::string> out;
    for (auto& a : raw) {
        auto k = key(a);
        if (k.empty()) continue;
        if (seen.insert(std::move(k)).second) out.push_back(std::move(a));
    }
    if (out.empty()) throw GeneratorError("generator predicted no answer for: " + question);
    return out;
}

std::string disambiguate(const Generator& backend, const std::string& prompt_question, const std::string& answer,
                         std::span<const corpus::Passage> passages) {
    require_passages(passages);
    if (answer.empty()) throw GeneratorError("disambiguate needs a non-empty answer");
    auto q = backend.disambiguate(prompt_question, answer, passages);
    if (text::split_whitespace(q).empty()) {
        throw GeneratorError("generator returned an empty question for answer '" + answer + "'");
    }
    return q;
}

TokenScores score_answer(const Generator& backend, const std::string& question,
                         std::span<const corpus::Passage> passages, const std::string& answer) {
    require_passages(passages);
    if (answer.empty()) throw GeneratorError("score_answer needs a non-empty answer");
    auto s = backend.score_answer(question, passages, answer);
    s.validate();
    return s;
}

void TableBackend::add_answers(const std::string& question, std::vector<std::string> answers) {
    if (answers.empty()) throw FixtureError("fixture lists no answers for: " + question);
    answers_[key(question)] = std::move(answers);
}

void TableBackend::add_question(const std::string& question, const std::string& answer, std::string disambiguated) {
    questions_[{key(question), key(answer)}] = std::move(disambiguated);
}

void TableBackend::add_scores(const std::string& question, const std::string& answer, TokenScores scores) {
    scores.validate();
    scores_[{key(question), key(answer)}] = std::move(scores);
}

TableBackend TableBackend::from_json(std::string_view json_text) {
    TableBackend t;
    try {
        auto root = json::parse(json_text);
        for (const auto& e : root.value("predict", json::array())) {
            t.add_answers(e.at("question").get<std::string>(), e.at("answers").get<std::vector<std::string>>());
        }
        for (const auto& e : root.value("disambiguate", json::array())) {
            t.add_question(e.at("question").get<std::string>(), e.at("answer").get<std::string>(),
                           e.at("disambiguated").get<std::string>());
        }
        for (const auto& e : root.value("score", json::array())) {
            TokenScores s{e.at("tokens").get<std::vector<std::string>>(), e.at("log_probs").get<std::vector<double>>()};
            t.add_scores(e.at("question").get<std::string>(), e.at("answer").get<std::string>(), std::move(s));
        }
    } catch (const json::exception& e) {
        throw FixtureError(std::string("bad table fixture: ") + e.what());
    } catch (const FixtureError&) {
        throw;
    } catch (const GeneratorError& e) {
        throw FixtureError(std::string("bad table fixture: ") + e.what());
    }
    return t;
}

TableBackend TableBackend::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FixtureError("cannot open table fixture " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

std::vector<std::string> TableBackend::predict_answers(const std::string& question, std::span<const corpus::Passage>,
                                                       std::optional<int>) const {
    auto it = answers_.find(key(question));
    if (it == answers_.end()) throw FixtureError("no answers in table for question: " + question);
    return it->second;
}

std::string TableBackend::disambiguate(const std::string& prompt_question, const std::string& answer,
                                       std::span<const corpus::Passage>) const {
    auto it = questions_.find({key(prompt_question), key(answer)});
    if (it == questions_.end()) {
        throw FixtureError("no disambiguated question in table for (" + prompt_question + ", " + answer + ")");
    }
    return it->second;
}

TokenScores TableBackend::score_answer(const std::string& question, std::span<const corpus::Passage>,
                                       const std::string& answer) const {
    auto it = scores_.find({key(question), key(answer)});
    if (it == scores_.end()) throw FixtureError("no token scores in table for (" + question + ", " + answer + ")");
    return it->second;
}

void GeneratorRequest::validate() const {
    if (mode != Mode::predict_answers && (!answer || answer->empty())) {
        throw ProtocolError(std::string(to_string(mode)) + " request needs an answer", encode_request(*this));
    }
    if (min_answers && *min_answers < 1) throw ProtocolError("min_answers must be positive", encode_request(*this));
}

std::string encode_request(const GeneratorRequest& req) {
    json j = {{"mode", to_string(req.mode)},
              {"question", req.question},
              {"answer", req.answer ? json(*req.answer) : json(nullptr)},
              {"passages", passages_to_json(req.passages)},
              {"min_answers", req.min_answers ? json(*req.min_answers) : json(nullptr)}};
    return j.dump();
}

GeneratorRequest decode_request(std::string_view body) {
    const json j = parse_body(body);
    if (!j.is_object()) protocol_fail("request must be an object", body);
    GeneratorRequest req;
    try {
        req.mode = mode_from_string(j.at("mode").get<std::string>());
        req.question = j.at("question").get<std::string>();
        if (auto a = j.find("answer"); a != j.end() && !a->is_null()) req.answer = a->get<std::string>();
        if (auto m = j.find("min_answers"); m != j.end() && !m->is_null()) req.min_answers = m->get<int>();
        for (const auto& p : j.at("passages")) {
            corpus::Passage psg;
            psg.id = p.at("id").get<std::string>();
            psg.title = p.value("title", std::string{});
            psg.text = p.value("text", std::string{});
            psg.token_count = text::split_whitespace(psg.text).size();
            req.passages.push_back(std::move(psg));
        }
    } catch (const json::exception& e) {
        protocol_fail(e.what(), body);
    } catch (const std::invalid_argument& e) {
        protocol_fail(e.what(), body);
    }
    req.validate();
    return req;
}

std::string encode_response(const GeneratorResponse& resp) {
    json j;
    if (const auto* a = std::get_if<AnswerList>(&resp)) {
        j = {{"answers", a->answers}};
    } else if (const auto* q = std::get_if<DisambiguatedQuestion>(&resp)) {
        j = {{"question", q->question}};
    } else {
        const auto& s = std::get<TokenScores>(resp);
        j = {{"tokens", s.tokens}, {"log_probs", s.log_probs}};
    }
    return j.dump();
}

GeneratorResponse decode_response(Mode mode, std::string_view body) {
    const json j = parse_body(body);
    if (!j.is_object()) protocol_fail("response must be an object", body);
    switch (mode) {
        case Mode::predict_answers:
            return AnswerList{strings_of(j, "answers", body)};
        case Mode::disambiguate: {
            auto it = j.find("question");
            if (it == j.end() || !it->is_string()) protocol_fail("'question' must be a string", body);
            return DisambiguatedQuestion{it->get<std::string>()};
        }
        case Mode::score_answer: {
            TokenScores s;
            s.tokens = strings_of(j, "tokens", body);
            auto lp = j.find("log_probs");
            if (lp == j.end() || !lp->is_array()) protocol_fail("'log_probs' must be a list", body);
            for (const auto& v : *lp) {
                if (!v.is_number()) protocol_fail("'log_probs' entries must be numbers", body);
                s.log_probs.push_back(v.get<double>());
            }
            try {
                s.validate();
            } catch (const GeneratorError& e) {
                protocol_fail(e.what(), body);
            }
            return s;
        }
    }
    protocol_fail("unknown mode", body);
}

std::string encode_error(std::string_view message) { return json{{"error", message}}.dump(); }

GeneratorResponse serve(const Generator& backend, const GeneratorRequest& req) {
    req.validate();
    switch (req.mode) {
        case Mode::predict_answers:
            return AnswerList{backend.predict_answers(req.question, req.passages, req.min_answers)};
        case Mode::disambiguate:
            return DisambiguatedQuestion{backend.disambiguate(req.question, *req.answer, req.passages)};
        case Mode::score_answer:
            return backend.score_answer(req.question, req.passages, *req.answer);
    }
    throw GeneratorError("unknown mode");
}

std::unique_ptr<Generator> make_backend(std::string_view spec, std::chrono::milliseconds timeout,
                                        std::size_t max_in_flight) {
    auto colon = spec.find(':');
    if (colon == std::string_view::npos) {
        throw std::invalid_argument("backend must be 'table:<path>' or 'remote:<url>', got '" + std::string(spec) + "'");
    }
    auto kind = spec.substr(0, colon);
    auto rest = std::string(spec.substr(colon + 1));
    if (kind == "table") return std::make_unique<TableBackend>(TableBackend::load(rest));
    if (kind == "remote") {
        RemoteConfig cfg;
        cfg.endpoint = rest;
        cfg.timeout = timeout;
        cfg.max_in_flight = max_in_flight;
        return std::make_unique<RemoteBackend>(std::move(cfg));
    }
    throw std::invalid_argument("unknown backend kind '" + std::string(kind) + "'");
}

}  // namespace refuel::genio
