#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace refuel::corpus {

inline constexpr std::size_t kPassageTokens = 100;

class CorpusError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class LookupError : public CorpusError {
  public:
    using CorpusError::CorpusError;
};

struct Passage {
    std::string id;
    std::string title;
    std::string text;
    std::size_t token_count = 0;
    std::optional<std::vector<float>> vector;

    bool operator==(const Passage&) const = default;
};

struct Page {
    std::string id;  // may be empty; the page's ordinal is used instead
    std::string title;
    std::string body;
};

struct SplitStats {
    std::size_t pages = 0;
    std::size_t skipped_empty = 0;
    std::size_t passages = 0;
};

/// Cuts each page into consecutive, non-overlapping chunks of at most
/// `chunk_tokens` whitespace tokens. Passage ids are "<page id>_<chunk>",
/// where a page without id uses its 0-based ordinal. Empty pages are counted
/// in `stats` and skipped.
std::vector<Passage> split_pages(std::span<const Page> pages, SplitStats* stats = nullptr,
                                 std::size_t chunk_tokens = kPassageTokens);

std::vector<Page> load_pages_jsonl(const std::filesystem::path& path);

/// Immutable id-addressable passage collection. Safe for concurrent reads.
class PassageStore {
  public:
    PassageStore() = default;
    explicit PassageStore(std::vector<Passage> passages, std::string corpus_label = {});

    const Passage& get(const std::string& id) const;
    const Passage* find(const std::string& id) const;
    bool contains(const std::string& id) const { return index_.count(id) != 0; }

    std::size_t size() const { return passages_.size(); }
    bool empty() const { return passages_.empty(); }
    std::span<const Passage> passages() const { return passages_; }
    const std::string& corpus_label() const { return label_; }

    /// Writes passages.jsonl, passages.offsets and store.json into `dir`.
    void save(const std::filesystem::path& dir) const;
    static PassageStore load(const std::filesystem::path& dir);

    /// Reads a single passage through the offset index without loading the store.
    static Passage read_one(const std::filesystem::path& dir, const std::string& id);

  private:
    std::vector<Passage> passages_;
    std::unordered_map<std::string, std::size_t> index_;
    std::string label_;
};

inline PassageStore store_passages(std::vector<Passage> passages) {
    return PassageStore(std::move(passages));
}

inline const Passage& get_passage(const PassageStore& store, const std::string& id) {
    return store.get(id);
}

enum class AnnotationKind { single, multiple };

struct GoldPair {
    std::string question;
    std::vector<std::string> answers;  // acceptable surface forms

    bool operator==(const GoldPair&) const = default;
};

struct GoldAnnotation {
    AnnotationKind kind = AnnotationKind::single;
    std::vector<std::string> single_answers;
    std::vector<GoldPair> qa_pairs;

    bool operator==(const GoldAnnotation&) const = default;
};

struct PromptExample {
    std::string id;
    std::string prompt_question;
    std::vector<GoldAnnotation> annotations;

    bool operator==(const PromptExample&) const = default;
};

struct RecordError {
    std::size_t index = 0;
    std::string id;
    std::string message;
};

struct LoadedExamples {
    std::vector<PromptExample> examples;
    std::vector<RecordError> errors;
};

/// Reads an AmbigQA-style JSON array. Malformed records land in `errors`;
/// an unreadable or non-array file throws CorpusError.
LoadedExamples load_examples(const std::filesystem::path& path);
LoadedExamples parse_examples(const std::string& json_text);

void save_examples(std::span<const PromptExample> examples, const std::filesystem::path& path);
std::string dump_examples(std::span<const PromptExample> examples);

}  // namespace refuel::corpus
