#include <doctest.h>

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

#include "refuel/metrics.hpp"

using namespace refuel;
using metrics::GoldQA;
using metrics::PredictedQA;

namespace {

const std::string kPrompt = "What's the most points scored in an NBA game?";
const std::string kQ3 = "What's the most points scored in an NBA game by an individual?";

std::vector<corpus::PromptExample> gold(const char* name) {
    auto loaded = corpus::load_examples(std::string(REFUEL_FIXTURES) + "/" + name);
    REQUIRE(loaded.errors.empty());
    return loaded.examples;
}

std::vector<roundtrip::PredictionSet> preds(const char* name) {
    return roundtrip::read_predictions(std::string(REFUEL_FIXTURES) + "/" + name);
}

std::vector<GoldQA> nba_golds() {
    return {{"combined", {"370"}}, {"single team", {"186"}}, {"individual", {"100"}}};
}

std::vector<PredictedQA> answers_only(std::initializer_list<const char*> answers) {
    std::vector<PredictedQA> out;
    for (const char* a : answers) out.push_back({"q", a});
    return out;
}

// Maximum number of predictions that can be matched to distinct golds.
std::size_t brute_max_matching(const std::vector<PredictedQA>& p, const std::vector<GoldQA>& g) {
    std::vector<bool> used(g.size(), false);
    std::function<std::size_t(std::size_t)> go = [&](std::size_t i) -> std::size_t {
        if (i == p.size()) return 0;
        std::size_t best = go(i + 1);
        for (std::size_t j = 0; j < g.size(); ++j) {
            if (used[j] || metrics::em(p[i].answer, g[j].answers) == 0) continue;
            used[j] = true;
            best = std::max(best, 1 + go(i + 1));
            used[j] = false;
        }
        return best;
    };
    return go(0);
}

corpus::PromptExample single_example(std::string id, std::string q, std::vector<std::string> answers) {
    corpus::GoldAnnotation ann;
    ann.kind = corpus::AnnotationKind::single;
    ann.single_answers = std::move(answers);
    return {std::move(id), std::move(q), {ann}};
}

roundtrip::PredictionSet prediction(std::string id, std::vector<std::pair<std::string, std::string>> qa) {
    roundtrip::PredictionSet s{std::move(id), "", {}, false};
    for (auto& [q, a] : qa) s.pairs.push_back({q, a, 0, {}});
    return s;
}

}  // namespace

TEST_CASE("answer normalization") {
    CHECK(metrics::normalize_answer("The Rolling Stones!") == "rolling stones");
    CHECK(metrics::normalize_answer("100") == "100");
    CHECK(metrics::normalize_answer("  An   apple,  a day ") == "apple day");
    std::mt19937 rng(3);
    const std::string alphabet = "aAnNtThHeE .,!?'-\t19";
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1), len(0, 30);
    for (int i = 0; i < 1000; ++i) {
        std::string s;
        for (auto n = len(rng); n > 0; --n) s += alphabet[pick(rng)];
        auto once = metrics::normalize_answer(s);
        CHECK(metrics::normalize_answer(once) == once);
    }
}

TEST_CASE("exact match") {
    const std::vector<std::string> golds{"370", "186", "100"};
    CHECK(metrics::em("370", std::vector<std::string>{"370"}) == 1);
    CHECK(metrics::em("wilt chamberlain", golds) == 0);
    CHECK(metrics::em("the 370", std::vector<std::string>{"370"}) == 1);
    CHECK(metrics::em("100.", golds) == 1);
}

TEST_CASE("EDIT-F1") {
    CHECK(metrics::edit_f1("What's the most points scored in an NBA game by individual?", kQ3, kPrompt) == 1.0);
    CHECK(metrics::edit_f1(kPrompt, kQ3, kPrompt) == 0.0);
    CHECK(metrics::edit_f1(kPrompt, kPrompt, kPrompt) == 1.0);
    CHECK(metrics::edit_f1(kQ3, kPrompt, kPrompt) == 0.0);
    // adds {by, single} against gold adds {by, individual}
    CHECK(metrics::edit_f1("What's the most points scored in an NBA game by single?", kQ3, kPrompt) ==
          doctest::Approx(0.5));
    // additions and deletions are separate bags
    // pred deletes {whats, in}; gold deletes {in} and adds {by, team}
    CHECK(metrics::edit_f1("most points scored NBA game", "What's most points scored NBA game by team", kPrompt) ==
          doctest::Approx(0.4));
}

TEST_CASE("BLEU similarity") {
    CHECK(metrics::bleu_sim(kQ3, kQ3) == doctest::Approx(1.0));
    CHECK(metrics::bleu_sim("alpha beta gamma", "delta epsilon") == 0.0);
    CHECK(metrics::bleu_sim("", "delta epsilon") == 0.0);
    CHECK(metrics::bleu_sim("lions beat bears in overtime", "lions beat tigers in overtime") ==
          doctest::Approx(0.4472135954999579).epsilon(1e-12));
    CHECK(metrics::bleu_sim("lions beat tigers", "lions beat tigers in overtime") ==
          doctest::Approx(0.513417119032592).epsilon(1e-12));
}

TEST_CASE("greedy pair F1 on the NBA predictions") {
    auto golds = nba_golds();
    auto without = metrics::greedy_pair_f1(answers_only({"370", "304", "100", "wilt chamberlain"}), golds);
    CHECK(without.precision == doctest::Approx(0.5));
    CHECK(without.recall == doctest::Approx(2.0 / 3.0));
    CHECK(without.f1 == doctest::Approx(0.5714285714285715).epsilon(1e-12));
    CHECK(without.correctness == std::vector<double>{1, 0, 1, 0});
    CHECK(without.assignment[0] == 0u);
    CHECK_FALSE(without.assignment[1].has_value());

    auto with = metrics::greedy_pair_f1(answers_only({"370", "304", "100", "wilt chamberlain", "186", "153"}), golds);
    CHECK(with.f1 == doctest::Approx(0.6666666666666666).epsilon(1e-12));

    auto exact = metrics::greedy_pair_f1(answers_only({"370", "186", "100"}), golds);
    CHECK(exact.f1 == 1.0);

    CHECK(metrics::greedy_pair_f1({}, golds).f1 == 0.0);
    CHECK(metrics::greedy_pair_f1(answers_only({"370"}), {}).f1 == 0.0);
}

TEST_CASE("greedy pair F1 picks the most similar unused gold") {
    std::vector<GoldQA> golds{{"first", {"x"}}, {"second", {"x"}}};
    auto f = [](metrics::text_view p, metrics::text_view g) { return p == g ? 1.0 : 0.25; };
    std::vector<PredictedQA> p{{"second", "x"}, {"second", "x"}, {"second", "x"}};
    auto r = metrics::greedy_pair_f1(p, golds, f);
    CHECK(r.assignment[0] == 1u);
    CHECK(r.assignment[1] == 0u);
    CHECK_FALSE(r.assignment[2].has_value());
    CHECK(r.correctness == std::vector<double>{1.0, 0.25, 0.0});
    CHECK(r.precision == doctest::Approx(1.25 / 3));
    CHECK(r.recall == doctest::Approx(1.25 / 2));

    auto ties = metrics::greedy_pair_f1(answers_only({"x"}), golds);
    CHECK(ties.assignment[0] == 0u);
}

TEST_CASE("greedy matching equals maximum matching on distinct answers") {
    std::mt19937 rng(2024);
    std::uniform_int_distribution<int> count(0, 5);
    std::vector<std::string> pool{"a", "b", "c", "d", "e", "f", "g", "h"};
    for (int trial = 0; trial < 2000; ++trial) {
        std::shuffle(pool.begin(), pool.end(), rng);
        std::vector<GoldQA> g;
        for (int j = count(rng); j > 0; --j) g.push_back({"g", {pool[g.size()]}});
        std::shuffle(pool.begin(), pool.end(), rng);
        std::vector<PredictedQA> p;
        for (int i = count(rng); i > 0; --i) p.push_back({"p", pool[p.size()]});

        auto r = metrics::greedy_pair_f1(p, g);
        const double matched = static_cast<double>(brute_max_matching(p, g));
        const double precision = p.empty() ? 0.0 : matched / p.size();
        const double recall = g.empty() ? 0.0 : matched / g.size();
        CHECK(r.f1 == doctest::Approx(metrics::f1_from(precision, recall)));
        CHECK(std::accumulate(r.correctness.begin(), r.correctness.end(), 0.0) <=
              static_cast<double>(std::min(p.size(), g.size())));

        std::vector<std::size_t> seen;
        for (const auto& a : r.assignment) {
            if (a) seen.push_back(*a);
        }
        std::sort(seen.begin(), seen.end());
        CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());

        auto shuffled = g;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(metrics::greedy_pair_f1(p, shuffled).f1 == doctest::Approx(r.f1));
    }
}

TEST_CASE("f1 formula") {
    CHECK(metrics::f1_from(0, 0) == 0.0);
    CHECK(metrics::f1_from(0.5, 2.0 / 3.0) == doctest::Approx(4.0 / 7.0));
    CHECK(metrics::f1_from(1, 1) == 1.0);
}

TEST_CASE("oracle EM") {
    const std::vector<std::string> b{"b"};
    CHECK(metrics::oracle_em(std::vector<std::string>{"a", "b"}, b) == 1);
    CHECK(metrics::oracle_em(std::vector<std::string>{}, b) == 0);
    for (const char* name : {"nba_single_pass.jsonl", "nba_round_trip.jsonl", "ration_single_pass.jsonl", "ration_round_trip.jsonl"}) {
        auto report = metrics::evaluate(preds(name), gold(name[0] == 'n' ? "nba_gold.json" : "ration_gold.json"));
        CHECK(report.em <= report.oracle_em);
    }
    // first answer wrong, a later one right
    auto ex = single_example("x", "q?", {"paris"});
    auto report = metrics::evaluate(std::vector{prediction("x", {{"q1", "lyon"}, {"q2", "Paris"}})}, std::vector{ex});
    CHECK(report.em == 0.0);
    CHECK(report.oracle_em == 1.0);
}

TEST_CASE("evaluate") {
    SUBCASE("perfect single-answer prediction") {
        auto ex = single_example("moon", "Who was the first man on the moon?", {"Neil Armstrong", "Armstrong"});
        auto r = metrics::evaluate(std::vector{prediction("moon", {{"Who was the first man on the moon?", "neil armstrong"}})},
                                   std::vector{ex});
        CHECK(r.f1_ans_all == 1.0);
        CHECK(r.counts.multi == 0);
        CHECK(r.f1_ans_multi == 0.0);
        CHECK_FALSE(r.per_example[0].f1_bleu.has_value());
        CHECK(r.em == 1.0);
        CHECK(r.comb == r.f1_ans_all + r.f1_editf1);
    }
    SUBCASE("NBA predictions") {
        auto g = gold("nba_gold.json");
        auto without = metrics::evaluate(preds("nba_single_pass.jsonl"), g);
        auto with = metrics::evaluate(preds("nba_round_trip.jsonl"), g);
        CHECK(without.f1_ans_all == doctest::Approx(0.5714285714285715).epsilon(1e-12));
        CHECK(with.f1_ans_all == doctest::Approx(0.6666666666666666).epsilon(1e-12));
        CHECK(with.counts.multi == 1);
        CHECK(with.f1_ans_multi == with.f1_ans_all);
        CHECK(with.avg_num_pairs == 6.0);
        CHECK(format_table(without).find("57.1") != std::string::npos);
        CHECK(format_table(with).find("66.7") != std::string::npos);
    }
    SUBCASE("ration shop example") {
        auto g = gold("ration_gold.json");
        auto without = metrics::evaluate(preds("ration_single_pass.jsonl"), g);
        auto with = metrics::evaluate(preds("ration_round_trip.jsonl"), g);
        CHECK(without.f1_ans_all == doctest::Approx(2.0 / 3.0));
        CHECK(with.f1_ans_all == doctest::Approx(1.0));
    }
    SUBCASE("average number of pairs") {
        std::vector ex{single_example("a", "qa?", {"1"}), single_example("b", "qb?", {"2"})};
        std::vector ps{prediction("a", {{"qa?", "1"}}), prediction("b", {{"x", "2"}, {"y", "3"}})};
        CHECK(metrics::evaluate(ps, ex).avg_num_pairs == 1.5);
    }
    SUBCASE("missing predictions score zero and are reported") {
        std::vector ex{single_example("a", "qa?", {"1"}), single_example("b", "qb?", {"2"})};
        auto r = metrics::evaluate(std::vector{prediction("a", {{"qa?", "1"}})}, ex);
        CHECK(r.f1_ans_all == 0.5);
        CHECK(r.counts.missing == 1);
        CHECK(r.missing_ids == std::vector<std::string>{"b"});
    }
    SUBCASE("best annotation wins") {
        auto ex = single_example("a", "q?", {"1"});
        corpus::GoldAnnotation multi{corpus::AnnotationKind::multiple, {}, {{"q one?", {"1"}}, {"q two?", {"2"}}}};
        ex.annotations.push_back(multi);
        auto r = metrics::evaluate(std::vector{prediction("a", {{"q one?", "1"}, {"q two?", "2"}})}, std::vector{ex});
        CHECK(r.f1_ans_all == 1.0);
        CHECK(r.per_example[0].annotation == 1);
        CHECK(r.counts.multi == 1);
        CHECK(r.f1_bleu == doctest::Approx(1.0));
    }
    SUBCASE("prompt baseline has zero EDIT-F1") {
        auto g = gold("nba_gold.json");
        auto base = prediction("nba", {{kPrompt, "370"}, {kPrompt, "186"}, {kPrompt, "100"}});
        auto r = metrics::evaluate(std::vector{base}, g);
        CHECK(r.f1_ans_all == 1.0);
        CHECK(r.f1_editf1 == 0.0);
    }
}

TEST_CASE("metric values stay in range") {
    std::mt19937 rng(77);
    const std::vector<std::string> words{"who", "what", "the", "nba", "game", "by", "team", "won", "points", "an"};
    std::uniform_int_distribution<std::size_t> w(0, words.size() - 1), len(0, 8);
    auto sentence = [&] {
        std::string s;
        for (auto n = len(rng); n > 0; --n) s += words[w(rng)] + " ";
        return s;
    };
    for (int i = 0; i < 2000; ++i) {
        auto a = sentence(), b = sentence(), c = sentence();
        double bleu = metrics::bleu_sim(a, b);
        double edit = metrics::edit_f1(a, b, c);
        CHECK(bleu >= 0.0);
        CHECK(bleu <= 1.0 + 1e-12);
        CHECK(edit >= 0.0);
        CHECK(edit <= 1.0);
        CHECK(metrics::edit_f1(a, a, c) == 1.0);
    }
    auto r = metrics::evaluate(preds("nba_round_trip.jsonl"), gold("nba_gold.json"));
    for (double v : {r.f1_ans_all, r.f1_ans_multi, r.f1_bleu, r.f1_editf1, r.em, r.oracle_em}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(r.comb <= 2.0);
}

TEST_CASE("report serialization") {
    auto r = metrics::evaluate(preds("nba_round_trip.jsonl"), gold("nba_gold.json"));
    auto j = metrics::report_to_json(r);
    for (const char* key : {"f1_ans_all", "f1_ans_multi", "f1_bleu", "f1_editf1", "comb", "oracle_em", "avg_num_pairs",
                            "per_example", "missing_ids"}) {
        CHECK(j.find(key) != std::string::npos);
    }
    auto table = metrics::format_table(r);
    CHECK(table.find("F1_ans (all)") != std::string::npos);
    CHECK(table.find("F1_EDIT-F1") != std::string::npos);
}
