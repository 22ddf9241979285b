#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "refuel/pretraindata.hpp"
#include "refuel/text.hpp"

using namespace refuel;
using pretrain::PosTag;

namespace {

const std::string kPrompt = "What's the most points scored in an NBA game?";
const std::string kQ1 = "What's the most points scored in an NBA game by combined team?";

std::vector<PosTag> tags_of(std::string_view sentence) {
    auto toks = text::split_whitespace(sentence);
    return pretrain::tag_pos(toks);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void check_sample(const pretrain::DeletionSample& s) {
    auto original = text::split_whitespace(s.original_question);
    REQUIRE(s.deleted_span.size() >= 1);
    REQUIRE(s.deleted_span.size() <= pretrain::kMaxSpan);
    CHECK(s.deleted_span.size() < original.size());
    CHECK(s.span_tags.size() == s.deleted_span.size());
    CHECK(std::any_of(s.span_tags.begin(), s.span_tags.end(), pretrain::is_informative));
    CHECK(std::none_of(s.span_tags.begin(), s.span_tags.end(), [](PosTag t) { return t == PosTag::PUNCT; }));
    CHECK(s.reinsert() == original);
    auto partial = text::split_whitespace(s.partial_question);
    CHECK(partial.size() + s.deleted_span.size() == original.size());
    for (std::size_t i = 0; i < s.deleted_span.size(); ++i) CHECK(original[s.span_start + i] == s.deleted_span[i]);
}

}  // namespace

TEST_CASE("POS tagging basics") {
    CHECK(tags_of("100") == std::vector{PosTag::NUM});
    CHECK(tags_of("the") == std::vector{PosTag::DET});
    CHECK(tags_of("who played for the Rolling Stones") ==
          std::vector{PosTag::PRON, PosTag::VERB, PosTag::ADP, PosTag::DET, PosTag::PROPN, PosTag::PROPN});
    CHECK(tags_of("what is it ?").back() == PosTag::PUNCT);
    CHECK(pretrain::pos_from_string("CONJ") == PosTag::CCONJ);
    CHECK(pretrain::to_string(PosTag::PROPN) == "PROPN");
    CHECK_THROWS(pretrain::pos_from_string("NN"));
    CHECK(pretrain::is_informative(PosTag::SYM));
    CHECK_FALSE(pretrain::is_informative(PosTag::AUX));
}

TEST_CASE("POS tagger agrees with hand-tagged questions") {
    std::ifstream in(REFUEL_FIXTURES "/pos_gold.txt");
    REQUIRE(in);
    std::string line;
    std::size_t total = 0, agree = 0, questions = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        ++questions;
        std::vector<std::string> tokens;
        std::vector<PosTag> gold;
        for (const auto& item : text::split_whitespace(line)) {
            auto slash = item.rfind('/');
            REQUIRE(slash != std::string::npos);
            tokens.push_back(item.substr(0, slash));
            gold.push_back(pretrain::pos_from_string(item.substr(slash + 1)));
        }
        auto got = pretrain::tag_pos(tokens);
        REQUIRE(got.size() == gold.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            ++total;
            agree += got[i] == gold[i];
        }
    }
    CHECK(questions == 50);
    const double rate = static_cast<double>(agree) / static_cast<double>(total);
    MESSAGE("tagger agreement: " << rate);
    CHECK(rate >= 0.80);
}

TEST_CASE("deletion samples are valid and seeded") {
    const std::string q = "who played lead guitar for the rolling stones";
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        auto s = pretrain::sample_deletion(q, seed);
        check_sample(s);
        CHECK(pretrain::sample_deletion(q, seed).partial_question == s.partial_question);
    }
    auto s = pretrain::sample_deletion(q, 7);
    MESSAGE("seed 7 deletes '" << text::join(s.deleted_span) << "' -> '" << s.partial_question << "'");

    std::set<std::string> partials;
    for (std::uint64_t seed = 0; seed < 200; ++seed) partials.insert(pretrain::sample_deletion(q, seed).partial_question);
    CHECK(partials.size() > 10);
}

TEST_CASE("a single informative token is always covered") {
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        auto s = pretrain::sample_deletion("who is it 100", seed);
        check_sample(s);
        CHECK(std::find(s.deleted_span.begin(), s.deleted_span.end(), "100") != s.deleted_span.end());
        CHECK(s.partial_question.find("100") == std::string::npos);
    }
}

TEST_CASE("ineligible questions are rejected") {
    CHECK_THROWS_AS(pretrain::sample_deletion("who is it", 1), pretrain::NoInformativeSpan);
    CHECK_THROWS_AS(pretrain::sample_deletion("guitar", 1), pretrain::TooShort);
    CHECK_THROWS_AS(pretrain::sample_deletion("", 1), pretrain::TooShort);
    CHECK_THROWS_AS(pretrain::sample_deletion("what is ?", 1), pretrain::SampleRejected);
}

TEST_CASE("punctuation tokens never enter a span") {
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        auto s = pretrain::sample_deletion("who won the game ?", seed);
        check_sample(s);
        CHECK(std::find(s.deleted_span.begin(), s.deleted_span.end(), "?") == s.deleted_span.end());
    }
}

TEST_CASE("inserted tokens") {
    auto d = pretrain::inserted_tokens(kPrompt, kQ1);
    CHECK(d.inserted == std::vector<std::string>{"by", "combined", "team"});
    CHECK(d.inserted_positions == std::vector<std::size_t>{7, 8, 9});
    auto mask = pretrain::inserted_mask(kPrompt, kQ1);
    CHECK(std::count(mask.begin(), mask.end(), true) == 3);
    CHECK(mask.size() == text::normalized_tokens(kQ1).size());

    CHECK(pretrain::inserted_tokens(kQ1, kQ1).inserted.empty());
    CHECK(pretrain::inserted_tokens(kQ1, kPrompt).inserted.empty());
    // repeated words count as a multiset
    auto twice = pretrain::inserted_tokens("who won", "who won who");
    CHECK(twice.inserted == std::vector<std::string>{"who"});
    CHECK(twice.inserted_positions == std::vector<std::size_t>{2});

    std::mt19937 rng(5);
    const std::vector<std::string> words{"who", "won", "the", "cup", "in", "1990", "team", "by"};
    std::uniform_int_distribution<std::size_t> w(0, words.size() - 1), len(0, 10);
    for (int i = 0; i < 500; ++i) {
        std::string a, b;
        for (auto n = len(rng); n > 0; --n) a += words[w(rng)] + " ";
        for (auto n = len(rng); n > 0; --n) b += words[w(rng)] + " ";
        CHECK(pretrain::inserted_tokens(a, a).inserted.empty());
        auto diff = pretrain::inserted_tokens(a, b);
        CHECK(diff.inserted.size() <= text::normalized_tokens(b).size());
        // multiset difference computed independently
        std::map<std::string, int> counts;
        for (const auto& t : text::normalized_tokens(b)) ++counts[t];
        for (const auto& t : text::normalized_tokens(a)) --counts[t];
        std::size_t expected = 0;
        for (const auto& [t, c] : counts) expected += c > 0 ? static_cast<std::size_t>(c) : 0;
        CHECK(diff.inserted.size() == expected);
    }
}

TEST_CASE("weighted loss") {
    const std::vector<double> nll{1.0, 2.0};
    CHECK(pretrain::weighted_loss(nll, {false, true}) == 10.0);
    CHECK(pretrain::weighted_loss(nll, {false, true}, {0.0}) == 3.0);
    CHECK(pretrain::weighted_loss(nll, {false, false}, {100.0}) == 3.0);
    CHECK_THROWS_AS(pretrain::weighted_loss(nll, {true}), std::invalid_argument);
    CHECK_THROWS_AS(pretrain::weighted_loss(std::vector<double>{-1.0}, {true}), std::invalid_argument);
    CHECK_THROWS_AS(pretrain::weighted_loss(nll, {true, true}, {-0.5}), std::invalid_argument);

    std::mt19937 rng(8);
    std::uniform_real_distribution<double> u(0.0, 5.0);
    std::bernoulli_distribution coin(0.3);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> v(8);
        std::vector<bool> m(8);
        for (std::size_t j = 0; j < v.size(); ++j) {
            v[j] = u(rng);
            m[j] = coin(rng);
        }
        double last = -1.0;
        for (double lambda : {0.0, 0.5, 1.0, 3.5, 10.0}) {
            double l = pretrain::weighted_loss(v, m, {lambda});
            CHECK(l >= last);
            last = l;
        }
    }
}

TEST_CASE("pretraining file") {
    std::vector<pretrain::QuestionAnswer> qs{{"who played lead guitar for the rolling stones", "Keith Richards"},
                                             {"who is it", "nobody"},
                                             {"when does the ration shop open in india", "June 1947"},
                                             {kPrompt, "370"}};
    auto built = pretrain::build_pretrain(qs, 13);
    REQUIRE(built.records.size() == 3);
    REQUIRE(built.skipped.size() == 1);
    CHECK(built.skipped[0].index == 1);
    CHECK(built.records[1].answer == "June 1947");
    for (const auto& r : built.records) {
        auto toks = text::split_whitespace(r.partial_question);
        toks.insert(toks.begin() + static_cast<std::ptrdiff_t>(r.span_start), r.deleted_span.begin(), r.deleted_span.end());
        CHECK(toks == text::split_whitespace(r.target_question));
    }

    auto dir = std::filesystem::temp_directory_path();
    auto a = dir / "refuel_pretrain_a.jsonl", b = dir / "refuel_pretrain_b.jsonl";
    pretrain::write_pretrain(built.records, a);
    pretrain::write_pretrain(pretrain::build_pretrain(qs, 13).records, b);
    CHECK(slurp(a) == slurp(b));
    CHECK(pretrain::read_pretrain(a) == built.records);
    CHECK(pretrain::build_pretrain(qs, 14).records != built.records);
    std::filesystem::remove(a);
    std::filesystem::remove(b);
}

TEST_CASE("span lengths are roughly uniform") {
    std::vector<pretrain::QuestionAnswer> qs(1000, {"guitar drums bass piano violin cello flute organ", "x"});
    auto built = pretrain::build_pretrain(qs, 2024);
    REQUIRE(built.records.size() == 1000);
    std::map<std::size_t, int> hist;
    for (const auto& r : built.records) ++hist[r.deleted_span.size()];
    for (std::size_t len = 1; len <= 5; ++len) {
        const double freq = hist[len] / 1000.0;
        CHECK(freq >= 0.1);
        CHECK(freq <= 0.3);
    }
}

TEST_CASE("seed derivation") {
    CHECK(pretrain::derive_seed(1, 0) != pretrain::derive_seed(1, 1));
    CHECK(pretrain::derive_seed(1, 5) == pretrain::derive_seed(1, 5));
    CHECK(pretrain::derive_seed(1, 5) != pretrain::derive_seed(2, 5));
}

TEST_CASE("question loading") {
    auto path = std::filesystem::temp_directory_path() / "refuel_questions_test.jsonl";
    {
        std::ofstream(path) << R"({"question": "who won", "answer": ["A", "B"]})" << "\n"
                            << R"({"question": "when", "answer": "1990"})" << "\n";
    }
    auto qs = pretrain::load_questions(path);
    REQUIRE(qs.size() == 2);
    CHECK(qs[0].answer == "A");
    CHECK(qs[1].answer == "1990");
    {
        std::ofstream(path) << R"([{"question": "who won", "answer": "A"}])";
    }
    CHECK(pretrain::load_questions(path).size() == 1);
    std::filesystem::remove(path);
}
