#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refuel/corpus.hpp"
#include "refuel/roundtrip.hpp"

namespace refuel::metrics {

using text_view = std::string_view;

std::string normalize_answer(text_view text);

// 1 iff the normalized prediction equals the normalized form of any gold string.
int em(text_view pred_answer, std::span<const std::string> gold_answers);

/// F1 between the edits (added and deleted normalized unigrams, as separate
/// bags) that turn the prompt into pred_q and into gold_q. When neither
/// question edits the prompt the score is 1; when only the gold does, 0.
double edit_f1(text_view pred_q, text_view gold_q, text_view prompt_q);

/// Sentence BLEU over normalized tokens: up to 4-grams, add-one smoothing
/// on the 2..4-gram precisions, brevity penalty. Zero unigram overlap gives 0.
double bleu_sim(text_view pred_q, text_view gold_q);

using QuestionSimilarity = std::function<double(text_view pred_q, text_view gold_q)>;

inline double always_one(text_view, text_view) { return 1.0; }

struct PredictedQA {
    std::string question;
    std::string answer;
};

struct GoldQA {
    std::string question;
    std::vector<std::string> answers;
};

struct MatchResult {
    std::vector<double> correctness;                   // one per prediction
    std::vector<std::optional<std::size_t>> assignment;  // gold index per prediction
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

double f1_from(double precision, double recall);

/// Predictions are scored in order. Each takes, among unused golds whose
/// answers it matches, the one maximizing f (lowest index on ties); that
/// gold is then consumed.
MatchResult greedy_pair_f1(std::span<const PredictedQA> preds, std::span<const GoldQA> golds,
                           const QuestionSimilarity& f = always_one);

int oracle_em(std::span<const std::string> pred_answers, std::span<const std::string> gold_answers);

struct ExampleScore {
    std::string id;
    bool has_prediction = false;
    std::size_t num_pairs = 0;
    std::size_t annotation = 0;  // index of the annotation that gave the best F1_ans
    bool multi = false;
    double f1_ans = 0.0;
    std::optional<double> f1_bleu;
    std::optional<double> f1_editf1;
    int em = 0;
    int oracle_em = 0;
};

struct EvalCounts {
    std::size_t examples = 0;
    std::size_t multi = 0;
    std::size_t predicted = 0;
    std::size_t missing = 0;
};

struct EvalReport {
    double f1_ans_all = 0.0;
    double f1_ans_multi = 0.0;
    double f1_bleu = 0.0;
    double f1_editf1 = 0.0;
    double comb = 0.0;
    double em = 0.0;
    double oracle_em = 0.0;
    double avg_num_pairs = 0.0;
    EvalCounts counts;
    std::vector<std::string> missing_ids;
    std::vector<ExampleScore> per_example;
};

/// Scores each example against every annotation and keeps the annotation
/// with the highest F1_ans. Multi-gold metrics cover only examples whose
/// kept annotation has several QA pairs. Examples without a prediction
/// score 0 and are listed in missing_ids.
EvalReport evaluate(std::span<const roundtrip::PredictionSet> predictions,
                    std::span<const corpus::PromptExample> examples);

std::string report_to_json(const EvalReport& report);
std::string format_table(const EvalReport& report);

}  // namespace refuel::metrics
