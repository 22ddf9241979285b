#include "refuel/pretraindata.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "refuel/text.hpp"

namespace refuel::pretrain {

using nlohmann::json;

namespace {

// Uniform in [0, n) from raw mt19937_64 output, so results do not depend on
// the standard library's distribution implementation.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
    const std::uint64_t limit = std::mt19937_64::max() - (std::mt19937_64::max() % n);
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

bool window_ok(const std::vector<PosTag>& tags, std::size_t start, std::size_t len) {
    bool informative = false;
    for (std::size_t i = start; i < start + len; ++i) {
        if (tags[i] == PosTag::PUNCT) return false;
        informative = informative || is_informative(tags[i]);
    }
    return informative;
}

}  // namespace

std::vector<std::string> DeletionSample::reinsert() const {
    auto tokens = text::split_whitespace(partial_question);
    tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(span_start), deleted_span.begin(), deleted_span.end());
    return tokens;
}

DeletionSample sample_deletion(std::string_view question, std::uint64_t seed, const PosTagger& tagger) {
    const auto tokens = text::split_whitespace(question);
    if (tokens.size() < 2) throw TooShort("question has fewer than 2 tokens");
    const auto tags = tag_pos(tokens, tagger);
    if (std::none_of(tags.begin(), tags.end(), is_informative)) {
        throw NoInformativeSpan("question has no informative token");
    }

    std::mt19937_64 rng(seed);
    const std::size_t drawn = 1 + uniform_below(rng, kMaxSpan);
    const std::size_t n = tokens.size();
    for (std::size_t len = std::min(drawn, n - 1); len >= 1; --len) {
        std::vector<std::size_t> starts;
        for (std::size_t s = 0; s + len <= n; ++s) {
            if (window_ok(tags, s, len)) starts.push_back(s);
        }
        if (starts.empty()) continue;
        const std::size_t start = starts[uniform_below(rng, starts.size())];

        DeletionSample out;
        out.original_question = std::string(question);
        out.span_start = start;
        std::vector<std::string> rest;
        for (std::size_t i = 0; i < n; ++i) {
            if (i >= start && i < start + len) {
                out.deleted_span.push_back(tokens[i]);
                out.span_tags.push_back(tags[i]);
            } else {
                rest.push_back(tokens[i]);
            }
        }
        out.partial_question = text::join(rest);
        return out;
    }
    throw NoInformativeSpan("no deletable span avoids punctuation");
}

InsertionDiff inserted_tokens(std::string_view prompt_q, std::string_view disamb_q) {
    std::map<std::string, int> available;
    for (auto& t : text::normalized_tokens(prompt_q)) ++available[t];
    InsertionDiff diff;
    const auto target = text::normalized_tokens(disamb_q);
    for (std::size_t i = 0; i < target.size(); ++i) {
        auto it = available.find(target[i]);
        if (it != available.end() && it->second > 0) {
            --it->second;
            continue;
        }
        diff.inserted.push_back(target[i]);
        diff.inserted_positions.push_back(i);
    }
    return diff;
}

std::vector<bool> inserted_mask(std::string_view prompt_q, std::string_view disamb_q) {
    std::vector<bool> mask(text::normalized_tokens(disamb_q).size(), false);
    for (auto pos : inserted_tokens(prompt_q, disamb_q).inserted_positions) mask[pos] = true;
    return mask;
}

double weighted_loss(std::span<const double> token_nlls, const std::vector<bool>& inserted, const LossConfig& cfg) {
    if (token_nlls.size() != inserted.size()) {
        throw std::invalid_argument("weighted_loss: " + std::to_string(token_nlls.size()) + " nlls but " +
                                    std::to_string(inserted.size()) + " mask entries");
    }
    if (!(cfg.lambda >= 0.0)) throw std::invalid_argument("weighted_loss: lambda must be >= 0");
    double nll = 0.0;
    double ins = 0.0;
    for (std::size_t i = 0; i < token_nlls.size(); ++i) {
        if (!(token_nlls[i] >= 0.0)) throw std::invalid_argument("weighted_loss: token nll must be >= 0");
        nll += token_nlls[i];
        if (inserted[i]) ins += token_nlls[i];
    }
    return nll + cfg.lambda * ins;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(master ^ splitmix64(index));
}

PretrainBuild build_pretrain(std::span<const QuestionAnswer> questions, std::uint64_t seed, const PosTagger& tagger) {
    PretrainBuild out;
    for (std::size_t i = 0; i < questions.size(); ++i) {
        const auto& qa = questions[i];
        try {
            auto s = sample_deletion(qa.question, derive_seed(seed, i), tagger);
            out.records.push_back({std::move(s.partial_question), qa.answer, qa.question, std::move(s.deleted_span),
                                   s.span_start});
        } catch (const SampleRejected& e) {
            out.skipped.push_back({i, qa.question, e.what()});
        }
    }
    return out;
}

std::string record_to_json(const PretrainRecord& r) {
    return json{{"partial_question", r.partial_question},
                {"answer", r.answer},
                {"target_question", r.target_question},
                {"deleted_span", r.deleted_span},
                {"span_start", r.span_start}}
        .dump();
}

PretrainRecord record_from_json(std::string_view line) {
    auto j = json::parse(line);
    return {j.at("partial_question").get<std::string>(), j.at("answer").get<std::string>(),
            j.at("target_question").get<std::string>(), j.at("deleted_span").get<std::vector<std::string>>(),
            j.at("span_start").get<std::size_t>()};
}

void write_pretrain(std::span<const PretrainRecord> records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& r : records) out << record_to_json(r) << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<PretrainRecord> read_pretrain(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<PretrainRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(record_from_json(line));
    }
    return out;
}

std::vector<QuestionAnswer> load_questions(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string content = ss.str();

    auto convert = [](const json& j) {
        QuestionAnswer qa;
        qa.question = j.at("question").get<std::string>();
        if (auto a = j.find("answer"); a != j.end()) {
            if (a->is_string()) {
                qa.answer = a->get<std::string>();
            } else if (a->is_array() && !a->empty()) {
                qa.answer = a->front().get<std::string>();
            }
        }
        return qa;
    };

    std::vector<QuestionAnswer> out;
    const auto first = content.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && content[first] == '[') {
        for (const auto& j : json::parse(content)) out.push_back(convert(j));
        return out;
    }
    std::istringstream lines(content);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(convert(json::parse(line)));
    }
    return out;
}

}  // namespace refuel::pretrain
