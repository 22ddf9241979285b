#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace refuel::pretrain {

// Universal Dependencies part-of-speech tags.
enum class PosTag { ADJ, ADP, ADV, AUX, CCONJ, DET, INTJ, NOUN, NUM, PART, PRON, PROPN, PUNCT, SCONJ, SYM, VERB, X };

std::string_view to_string(PosTag tag);
PosTag pos_from_string(std::string_view s);

// ADJ, NOUN, NUM, PROPN, SYM, VERB
bool is_informative(PosTag tag);

class PosTagger {
  public:
    virtual ~PosTagger() = default;
    // One tag per token.
    virtual std::vector<PosTag> tag(std::span<const std::string> tokens) const = 0;
};

/// Lexicon and shape rules: closed-class words from a function-word lexicon,
/// digits as NUM, capitalized non-initial words as PROPN, common verb forms
/// as VERB, everything else NOUN.
class RuleTagger final : public PosTagger {
  public:
    std::vector<PosTag> tag(std::span<const std::string> tokens) const override;
};

const PosTagger& default_tagger();

std::vector<PosTag> tag_pos(std::span<const std::string> tokens, const PosTagger& tagger = default_tagger());

class SampleRejected : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class TooShort : public SampleRejected {
  public:
    using SampleRejected::SampleRejected;
};

class NoInformativeSpan : public SampleRejected {
  public:
    using SampleRejected::SampleRejected;
};

inline constexpr std::size_t kMaxSpan = 5;

struct DeletionSample {
    std::string original_question;
    std::string partial_question;
    std::size_t span_start = 0;
    std::vector<std::string> deleted_span;
    std::vector<PosTag> span_tags;

    // Original token sequence with the span put back.
    std::vector<std::string> reinsert() const;
};

/// Deletes one contiguous span of 1..5 whitespace tokens that holds at
/// least one informative tag and no punctuation-only token. The length is
/// drawn uniformly (capped at n - 1), then the start uniformly among the
/// windows of that length that qualify. Same seed, same sample.
DeletionSample sample_deletion(std::string_view question, std::uint64_t seed,
                               const PosTagger& tagger = default_tagger());

struct InsertionDiff {
    std::vector<std::string> inserted;  // normalized tokens, in order of appearance
    std::vector<std::size_t> inserted_positions;
};

/// Normalized tokens of disamb_q that are not accounted for by prompt_q
/// (multiset difference). Positions come from a left-to-right pass that
/// consumes prompt tokens as they are matched.
InsertionDiff inserted_tokens(std::string_view prompt_q, std::string_view disamb_q);

// Mask over normalized_tokens(disamb_q) marking the inserted tokens.
std::vector<bool> inserted_mask(std::string_view prompt_q, std::string_view disamb_q);

inline constexpr double kDefaultLambda = 3.5;

struct LossConfig {
    double lambda = kDefaultLambda;
};

/// sum(nll) + lambda * sum(nll over inserted tokens). Throws
/// std::invalid_argument on a length mismatch, a negative nll, or a negative lambda.
double weighted_loss(std::span<const double> token_nlls, const std::vector<bool>& inserted, const LossConfig& cfg = {});

struct QuestionAnswer {
    std::string question;
    std::string answer;
};

struct PretrainRecord {
    std::string partial_question;
    std::string answer;
    std::string target_question;
    std::vector<std::string> deleted_span;
    std::size_t span_start = 0;

    bool operator==(const PretrainRecord&) const = default;
};

struct SkippedQuestion {
    std::size_t index = 0;
    std::string question;
    std::string reason;
};

struct PretrainBuild {
    std::vector<PretrainRecord> records;
    std::vector<SkippedQuestion> skipped;
};

// Per-question seed derived from the master seed and the question's position.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

PretrainBuild build_pretrain(std::span<const QuestionAnswer> questions, std::uint64_t seed,
                             const PosTagger& tagger = default_tagger());

std::string record_to_json(const PretrainRecord& r);
PretrainRecord record_from_json(std::string_view line);
void write_pretrain(std::span<const PretrainRecord> records, const std::filesystem::path& path);
std::vector<PretrainRecord> read_pretrain(const std::filesystem::path& path);

/// JSON array or JSONL of {"question": str, "answer": str | [str]}; the first
/// answer is kept.
std::vector<QuestionAnswer> load_questions(const std::filesystem::path& path);

}  // namespace refuel::pretrain
