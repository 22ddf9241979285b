#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "refuel/corpus.hpp"

namespace refuel::retrieval {

class RetrievalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct RetrievalConfig {
    std::size_t n_retrieve = 1000;
    std::size_t k_rerank = 100;

    // Throws RetrievalError unless 1 <= k_rerank <= n_retrieve.
    void validate() const;
};

struct RankedPassage {
    std::string passage_id;
    double score = 0.0;
    std::size_t rank = 0;  // 1-based

    bool operator==(const RankedPassage&) const = default;
};

// Lowercased whitespace tokens with edge punctuation stripped; empty terms dropped.
std::vector<std::string> analyze_terms(std::string_view text);

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;
};

struct Posting {
    std::uint32_t doc = 0;
    std::uint32_t tf = 0;
};

/// Inverted index with per-passage term counts. Immutable after build.
class LexicalIndex {
  public:
    static LexicalIndex build(const corpus::PassageStore& store, Bm25Params params = {});

    std::size_t num_docs() const { return ids_.size(); }
    double avg_doc_len() const { return avgdl_; }
    const Bm25Params& params() const { return params_; }
    std::size_t doc_freq(const std::string& term) const;
    std::size_t doc_len(std::uint32_t doc) const { return doc_len_[doc]; }
    const std::string& doc_id(std::uint32_t doc) const { return ids_[doc]; }
    std::span<const Posting> postings(const std::string& term) const;

    /// Okapi BM25 with the non-negative idf ln(1 + (N - df + 0.5) / (df + 0.5)).
    double idf(std::size_t df) const;
    double term_score(double idf, std::uint32_t tf, std::size_t doc_len) const;

    void save(const std::filesystem::path& path) const;
    static LexicalIndex load(const std::filesystem::path& path);

  private:
    Bm25Params params_;
    std::vector<std::string> ids_;
    std::vector<std::uint32_t> doc_len_;
    double avgdl_ = 0.0;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
};

inline LexicalIndex build_lexical_index(const corpus::PassageStore& store) { return LexicalIndex::build(store); }

/// Top-n by BM25. Once any query term is indexed every passage is a
/// candidate (non-matching ones score 0), so fewer than n results only come
/// back when the corpus is smaller. Ties go to the smaller passage id.
std::vector<RankedPassage> retrieve_lexical(const LexicalIndex& index, std::string_view question, std::size_t n);

/// Row-major matrix of passage vectors.
class DenseMatrix {
  public:
    DenseMatrix() = default;
    explicit DenseMatrix(std::size_t dim) : dim_(dim) {}

    void add(std::string id, std::span<const float> vec);

    std::size_t dim() const { return dim_; }
    std::size_t rows() const { return ids_.size(); }
    const std::string& id(std::size_t row) const { return ids_[row]; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * dim_, dim_}; }
    std::span<const std::string> ids() const { return ids_; }

    // "d=<int>" header, then "<id> <f1> ... <fd>" per line.
    static DenseMatrix load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

  private:
    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> data_;
};

double inner_product(std::span<const float> a, std::span<const float> b);

/// Exact maximum-inner-product search: top-n descending, ties by ascending id.
std::vector<RankedPassage> retrieve_dense(const DenseMatrix& vectors, std::span<const float> query, std::size_t n);

class RerankScorer {
  public:
    virtual ~RerankScorer() = default;
    virtual double score(std::string_view question, const corpus::Passage& passage,
                         const RankedPassage& incoming) const = 0;
};

// score = -incoming rank
class IdentityScorer final : public RerankScorer {
  public:
    double score(std::string_view, const corpus::Passage&, const RankedPassage& incoming) const override;
};

/// Fraction of the question's distinct terms that occur in the passage title or text.
class LexicalOverlapScorer final : public RerankScorer {
  public:
    double score(std::string_view question, const corpus::Passage& passage,
                 const RankedPassage& incoming) const override;
};

/// Re-scores candidates and keeps the top k; equal scores keep incoming rank order.
std::vector<RankedPassage> rerank(std::string_view question, std::span<const RankedPassage> candidates, std::size_t k,
                                  const RerankScorer& scorer, const corpus::PassageStore& store);

struct RankedQuestion {
    std::string question_id;
    std::string question;
    std::vector<RankedPassage> passages;

    bool operator==(const RankedQuestion&) const = default;
};

void write_ranked(std::span<const RankedQuestion> results, const std::filesystem::path& path);
std::vector<RankedQuestion> read_ranked(const std::filesystem::path& path);

}  // namespace refuel::retrieval
