#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "refuel/corpus.hpp"
#include "refuel/genio.hpp"

namespace refuel::roundtrip {

class PipelineError : public std::runtime_error {
  public:
    PipelineError(std::string prompt_id, const std::string& what)
        : std::runtime_error("prompt " + prompt_id + ": " + what), prompt_id_(std::move(prompt_id)) {}
    const std::string& prompt_id() const { return prompt_id_; }

  private:
    std::string prompt_id_;
};

struct QAPair {
    std::string question;
    std::string answer;
    int round = 0;  // 0 = first pass
    std::optional<double> lm_score;

    bool operator==(const QAPair&) const = default;
};

struct PredictionSet {
    std::string prompt_id;
    std::string prompt_question;
    std::vector<QAPair> pairs;
    bool truncated = false;  // round-trip hit max_rounds with questions still pending

    std::vector<std::string> answers() const;
    bool operator==(const PredictionSet&) const = default;
};

enum class VerifyMode { none, lm, em };

VerifyMode verify_mode_from_string(std::string_view s);
std::string_view to_string(VerifyMode m);

inline constexpr double kDefaultThreshold = 6.1;

struct VerifyConfig {
    VerifyMode mode = VerifyMode::lm;
    double threshold = kDefaultThreshold;
    bool keep_at_least_one = true;
    int max_rounds = 5;

    void validate() const;
};

/// One QA pair per distinct predicted answer, all at round 0. A lone answer
/// keeps the prompt as its question; with several answers every question
/// comes from the disambiguation backend.
PredictionSet single_pass(const std::string& prompt_id, const std::string& prompt_question,
                          std::span<const corpus::Passage> passages, const genio::Generator& backend,
                          std::optional<int> min_answers = std::nullopt);

/// Feeds generated questions back into answer prediction, level by level,
/// until a round adds no new (normalized) answer or max_rounds rounds have
/// run. Round-0 pairs are exactly the single_pass output. The same passages
/// are reused in every round.
PredictionSet round_trip_generate(const std::string& prompt_id, const std::string& prompt_question,
                                  std::span<const corpus::Passage> passages, const genio::Generator& backend,
                                  int max_rounds, std::optional<int> min_answers = std::nullopt);

// Summed negative log-likelihood of the answer given the pair's question; >= 0.
double lm_score(const QAPair& pair, std::span<const corpus::Passage> passages, const genio::Generator& backend);

/// Scores every pair, sorts ascending (stable; unscorable pairs last) and
/// drops pairs above cfg.threshold. With keep_at_least_one an otherwise
/// empty result keeps the best pair.
PredictionSet lm_verify(const PredictionSet& set, std::span<const corpus::Passage> passages,
                        const genio::Generator& backend, const VerifyConfig& cfg);

/// Keeps a pair iff re-asking its question yields a first answer that
/// exactly matches (after normalization). Rescue keeps the first pair.
PredictionSet em_verify(const PredictionSet& set, std::span<const corpus::Passage> passages,
                        const genio::Generator& qa_backend, const VerifyConfig& cfg);

PredictionSet verify(const PredictionSet& set, std::span<const corpus::Passage> passages,
                     const genio::Generator& backend, const VerifyConfig& cfg);

std::string prediction_to_json(const PredictionSet& set);
PredictionSet prediction_from_json(std::string_view line);
void write_predictions(std::span<const PredictionSet> sets, const std::filesystem::path& path);
std::vector<PredictionSet> read_predictions(const std::filesystem::path& path);

}  // namespace refuel::roundtrip
