#include "refuel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "refuel/text.hpp"

namespace refuel::metrics {

namespace {

using Bag = std::map<std::string, int>;

Bag bag_of(const std::vector<std::string>& tokens) {
    Bag b;
    for (const auto& t : tokens) ++b[t];
    return b;
}

// Tagged bag of edits from `base` to `target`: "+tok" added, "-tok" deleted.
Bag edits(const Bag& base, const Bag& target) {
    Bag out;
    for (const auto& [tok, n] : target) {
        auto it = base.find(tok);
        int diff = n - (it == base.end() ? 0 : it->second);
        if (diff > 0) out["+" + tok] = diff;
    }
    for (const auto& [tok, n] : base) {
        auto it = target.find(tok);
        int diff = n - (it == target.end() ? 0 : it->second);
        if (diff > 0) out["-" + tok] = diff;
    }
    return out;
}

int bag_size(const Bag& b) {
    int s = 0;
    for (const auto& [_, n] : b) s += n;
    return s;
}

int overlap(const Bag& a, const Bag& b) {
    int s = 0;
    for (const auto& [tok, n] : a) {
        auto it = b.find(tok);
        if (it != b.end()) s += std::min(n, it->second);
    }
    return s;
}

std::vector<std::string> all_answers(const corpus::GoldAnnotation& ann) {
    if (ann.kind == corpus::AnnotationKind::single) return ann.single_answers;
    std::vector<std::string> out;
    for (const auto& qa : ann.qa_pairs) out.insert(out.end(), qa.answers.begin(), qa.answers.end());
    return out;
}

std::vector<GoldQA> gold_pairs(const corpus::GoldAnnotation& ann, const std::string& prompt) {
    if (ann.kind == corpus::AnnotationKind::single) return {GoldQA{prompt, ann.single_answers}};
    std::vector<GoldQA> out;
    for (const auto& qa : ann.qa_pairs) out.push_back({qa.question, qa.answers});
    return out;
}

double mean(double sum, std::size_t n) { return n == 0 ? 0.0 : sum / static_cast<double>(n); }

}  // namespace

std::string normalize_answer(text_view text) { return text::normalize_answer(text); }

int em(text_view pred_answer, std::span<const std::string> gold_answers) {
    const auto p = text::normalize_answer(pred_answer);
    for (const auto& g : gold_answers) {
        if (text::normalize_answer(g) == p) return 1;
    }
    return 0;
}

double edit_f1(text_view pred_q, text_view gold_q, text_view prompt_q) {
    const Bag prompt = bag_of(text::normalized_tokens(prompt_q));
    const Bag pred = edits(prompt, bag_of(text::normalized_tokens(pred_q)));
    const Bag gold = edits(prompt, bag_of(text::normalized_tokens(gold_q)));
    const int np = bag_size(pred);
    const int ng = bag_size(gold);
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;
    const int common = overlap(pred, gold);
    if (common == 0) return 0.0;
    return f1_from(static_cast<double>(common) / np, static_cast<double>(common) / ng);
}

double bleu_sim(text_view pred_q, text_view gold_q) {
    constexpr std::size_t kMaxOrder = 4;
    const auto hyp = text::normalized_tokens(pred_q);
    const auto ref = text::normalized_tokens(gold_q);
    if (hyp.empty() || ref.empty()) return 0.0;

    double log_sum = 0.0;
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
        std::unordered_map<std::string, int> ref_counts;
        for (std::size_t i = 0; i + n <= ref.size(); ++i) {
            std::vector<std::string> gram(ref.begin() + static_cast<std::ptrdiff_t>(i),
                                          ref.begin() + static_cast<std::ptrdiff_t>(i + n));
            ++ref_counts[text::join(gram, "\x1f")];
        }
        int matched = 0;
        int total = 0;
        for (std::size_t i = 0; i + n <= hyp.size(); ++i) {
            std::vector<std::string> gram(hyp.begin() + static_cast<std::ptrdiff_t>(i),
                                          hyp.begin() + static_cast<std::ptrdiff_t>(i + n));
            ++total;
            auto it = ref_counts.find(text::join(gram, "\x1f"));
            if (it != ref_counts.end() && it->second > 0) {
                --it->second;
                ++matched;
            }
        }
        double p;
        if (n == 1) {
            if (matched == 0) return 0.0;
            p = static_cast<double>(matched) / total;
        } else {
            p = (matched + 1.0) / (total + 1.0);
        }
        log_sum += std::log(p);
    }
    const double c = static_cast<double>(hyp.size());
    const double r = static_cast<double>(ref.size());
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return std::min(1.0, bp * std::exp(log_sum / kMaxOrder));
}

double f1_from(double precision, double recall) {
    if (precision + recall <= 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

MatchResult greedy_pair_f1(std::span<const PredictedQA> preds, std::span<const GoldQA> golds,
                           const QuestionSimilarity& f) {
    MatchResult r;
    r.correctness.assign(preds.size(), 0.0);
    r.assignment.assign(preds.size(), std::nullopt);

    std::vector<std::vector<std::string>> gold_norm;
    gold_norm.reserve(golds.size());
    for (const auto& g : golds) {
        std::vector<std::string> norms;
        for (const auto& a : g.answers) norms.push_back(text::normalize_answer(a));
        gold_norm.push_back(std::move(norms));
    }
    std::vector<bool> used(golds.size(), false);

    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto pa = text::normalize_answer(preds[i].answer);
        std::optional<std::size_t> best;
        double best_val = 0.0;
        for (std::size_t j = 0; j < golds.size(); ++j) {
            if (used[j]) continue;
            if (std::find(gold_norm[j].begin(), gold_norm[j].end(), pa) == gold_norm[j].end()) continue;
            const double v = f(preds[i].question, golds[j].question);
            if (!best || v > best_val) {
                best = j;
                best_val = v;
            }
        }
        if (best) {
            used[*best] = true;
            r.assignment[i] = best;
            r.correctness[i] = best_val;
        }
    }
    double total = 0.0;
    for (double c : r.correctness) total += c;
    if (!preds.empty() && !golds.empty()) {
        r.precision = total / static_cast<double>(preds.size());
        r.recall = total / static_cast<double>(golds.size());
        r.f1 = f1_from(r.precision, r.recall);
    }
    return r;
}

int oracle_em(std::span<const std::string> pred_answers, std::span<const std::string> gold_answers) {
    for (const auto& p : pred_answers) {
        if (em(p, gold_answers)) return 1;
    }
    return 0;
}

EvalReport evaluate(std::span<const roundtrip::PredictionSet> predictions,
                    std::span<const corpus::PromptExample> examples) {
    std::unordered_map<std::string, const roundtrip::PredictionSet*> by_id;
    for (const auto& p : predictions) by_id[p.prompt_id] = &p;

    EvalReport rep;
    double sum_all = 0, sum_multi = 0, sum_bleu = 0, sum_edit = 0, sum_em = 0, sum_oracle = 0, sum_pairs = 0;
    for (const auto& ex : examples) {
        if (ex.annotations.empty()) throw std::invalid_argument("example " + ex.id + " has no annotations");
        ExampleScore s;
        s.id = ex.id;
        ++rep.counts.examples;
        auto it = by_id.find(ex.id);
        const roundtrip::PredictionSet* pred = it == by_id.end() ? nullptr : it->second;

        std::vector<PredictedQA> pairs;
        std::vector<std::string> answers;
        if (pred) {
            s.has_prediction = true;
            s.num_pairs = pred->pairs.size();
            ++rep.counts.predicted;
            sum_pairs += static_cast<double>(s.num_pairs);
            for (const auto& qa : pred->pairs) {
                pairs.push_back({qa.question, qa.answer});
                answers.push_back(qa.answer);
            }
        } else {
            ++rep.counts.missing;
            rep.missing_ids.push_back(ex.id);
        }

        double best = -1.0;
        for (std::size_t a = 0; a < ex.annotations.size(); ++a) {
            const auto& ann = ex.annotations[a];
            const auto golds = gold_pairs(ann, ex.prompt_question);
            const double f1 = greedy_pair_f1(pairs, golds).f1;
            if (f1 > best) {
                best = f1;
                s.annotation = a;
            }
            const auto gold_answers = all_answers(ann);
            if (!answers.empty()) s.em = std::max(s.em, em(answers.front(), gold_answers));
            s.oracle_em = std::max(s.oracle_em, oracle_em(answers, gold_answers));
        }
        s.f1_ans = best;

        const auto& chosen = ex.annotations[s.annotation];
        if (chosen.kind == corpus::AnnotationKind::multiple) {
            s.multi = true;
            ++rep.counts.multi;
            const auto golds = gold_pairs(chosen, ex.prompt_question);
            const std::string prompt = ex.prompt_question;
            s.f1_bleu = greedy_pair_f1(pairs, golds, bleu_sim).f1;
            s.f1_editf1 = greedy_pair_f1(pairs, golds, [&prompt](text_view p, text_view g) {
                              return edit_f1(p, g, prompt);
                          }).f1;
            sum_multi += s.f1_ans;
            sum_bleu += *s.f1_bleu;
            sum_edit += *s.f1_editf1;
        }
        sum_all += s.f1_ans;
        sum_em += s.em;
        sum_oracle += s.oracle_em;
        rep.per_example.push_back(std::move(s));
    }
    rep.f1_ans_all = mean(sum_all, rep.counts.examples);
    rep.f1_ans_multi = mean(sum_multi, rep.counts.multi);
    rep.f1_bleu = mean(sum_bleu, rep.counts.multi);
    rep.f1_editf1 = mean(sum_edit, rep.counts.multi);
    rep.comb = rep.f1_ans_all + rep.f1_editf1;
    rep.em = mean(sum_em, rep.counts.examples);
    rep.oracle_em = mean(sum_oracle, rep.counts.examples);
    rep.avg_num_pairs = mean(sum_pairs, rep.counts.predicted);
    return rep;
}

std::string report_to_json(const EvalReport& r) {
    using nlohmann::json;
    json per = json::array();
    for (const auto& s : r.per_example) {
        per.push_back({{"id", s.id},
                       {"has_prediction", s.has_prediction},
                       {"num_pairs", s.num_pairs},
                       {"annotation", s.annotation},
                       {"multi", s.multi},
                       {"f1_ans", s.f1_ans},
                       {"f1_bleu", s.f1_bleu ? json(*s.f1_bleu) : json(nullptr)},
                       {"f1_editf1", s.f1_editf1 ? json(*s.f1_editf1) : json(nullptr)},
                       {"em", s.em},
                       {"oracle_em", s.oracle_em}});
    }
    json j = {{"f1_ans_all", r.f1_ans_all},
              {"f1_ans_multi", r.f1_ans_multi},
              {"f1_bleu", r.f1_bleu},
              {"f1_editf1", r.f1_editf1},
              {"comb", r.comb},
              {"em", r.em},
              {"oracle_em", r.oracle_em},
              {"avg_num_pairs", r.avg_num_pairs},
              {"counts",
               {{"examples", r.counts.examples},
                {"multi", r.counts.multi},
                {"predicted", r.counts.predicted},
                {"missing", r.counts.missing}}},
              {"missing_ids", r.missing_ids},
              {"per_example", std::move(per)}};
    return j.dump(2);
}

std::string format_table(const EvalReport& r) {
    char buf[512];
    std::ostringstream out;
    std::snprintf(buf, sizeof buf, "%-6s | %-13s | %-15s | %-7s | %-10s | %-5s\n", "#QAs", "F1_ans (all)",
                  "F1_ans (multi)", "F1_BLEU", "F1_EDIT-F1", "Comb.");
    out << buf;
    std::snprintf(buf, sizeof buf, "%-6.2f | %-13.1f | %-15.1f | %-7.1f | %-10.1f | %-5.1f\n", r.avg_num_pairs,
                  100.0 * r.f1_ans_all, 100.0 * r.f1_ans_multi, 100.0 * r.f1_bleu, 100.0 * r.f1_editf1,
                  100.0 * r.comb);
    out << buf;
    std::snprintf(buf, sizeof buf, "EM %.1f | Oracle EM %.1f | examples %zu (multi %zu, missing %zu)\n",
                  100.0 * r.em, 100.0 * r.oracle_em, r.counts.examples, r.counts.multi, r.counts.missing);
    out << buf;
    return out.str();
}

}  // namespace refuel::metrics
