#include "refuel/retrieval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "refuel/text.hpp"

namespace refuel::retrieval {

using nlohmann::json;

namespace {

struct Scored {
    double score;
    std::uint32_t doc;
};

// Sorts the best n of `scored` to the front: score descending, then id ascending.
template <typename IdOf>
std::vector<RankedPassage> take_top(std::vector<Scored>& scored, std::size_t n, IdOf id_of) {
    auto better = [&](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return id_of(a.doc) < id_of(b.doc);
    };
    n = std::min(n, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), better);
    std::vector<RankedPassage> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back({id_of(scored[i].doc), scored[i].score, i + 1});
    return out;
}

std::vector<std::string> distinct_in_order(std::vector<std::string> terms) {
    std::unordered_set<std::string> seen;
    std::vector<std::string> out;
    for (auto& t : terms) {
        if (seen.insert(t).second) out.push_back(std::move(t));
    }
    return out;
}

float parse_float(std::string_view tok, const std::string& where) {
    float v = 0.0F;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
        throw RetrievalError(where + ": bad float '" + std::string(tok) + "'");
    }
    return v;
}

}  // namespace

void RetrievalConfig::validate() const {
    if (n_retrieve == 0) throw RetrievalError("n_retrieve must be positive");
    if (k_rerank == 0) throw RetrievalError("k_rerank must be positive");
    if (k_rerank > n_retrieve) throw RetrievalError("k_rerank must not exceed n_retrieve");
}

std::vector<std::string> analyze_terms(std::string_view text) {
    std::vector<std::string> out;
    for (const auto& tok : text::split_whitespace(text)) {
        auto core = text::strip_punct(tok);
        if (!core.empty()) out.push_back(text::to_lower_ascii(core));
    }
    return out;
}

LexicalIndex LexicalIndex::build(const corpus::PassageStore& store, Bm25Params params) {
    if (store.empty()) throw RetrievalError("cannot index an empty passage store");
    LexicalIndex idx;
    idx.params_ = params;
    std::uint64_t total = 0;
    const auto passages = store.passages();
    for (std::uint32_t doc = 0; doc < passages.size(); ++doc) {
        const auto& p = passages[doc];
        auto terms = analyze_terms(p.text);
        idx.ids_.push_back(p.id);
        idx.doc_len_.push_back(static_cast<std::uint32_t>(terms.size()));
        total += terms.size();
        std::unordered_map<std::string, std::uint32_t> counts;
        for (auto& t : terms) ++counts[t];
        for (auto& [term, tf] : counts) idx.postings_[term].push_back({doc, tf});
    }
    idx.avgdl_ = static_cast<double>(total) / static_cast<double>(passages.size());
    return idx;
}

std::size_t LexicalIndex::doc_freq(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
}

std::span<const Posting> LexicalIndex::postings(const std::string& term) const {
    auto it = postings_.find(term);
    if (it == postings_.end()) return {};
    return it->second;
}

double LexicalIndex::idf(std::size_t df) const {
    const double n = static_cast<double>(num_docs());
    const double d = static_cast<double>(df);
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

double LexicalIndex::term_score(double idf, std::uint32_t tf, std::size_t doc_len) const {
    const double f = tf;
    const double norm = avgdl_ > 0.0 ? static_cast<double>(doc_len) / avgdl_ : 0.0;
    return idf * f * (params_.k1 + 1.0) / (f + params_.k1 * (1.0 - params_.b + params_.b * norm));
}

void LexicalIndex::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RetrievalError("cannot write " + path.string());
    out << "refuel-bm25 1\n" << std::setprecision(17) << params_.k1 << ' ' << params_.b << '\n' << ids_.size() << '\n';
    for (std::size_t d = 0; d < ids_.size(); ++d) out << doc_len_[d] << '\t' << ids_[d] << '\n';
    std::vector<const std::string*> terms;
    terms.reserve(postings_.size());
    for (const auto& [t, _] : postings_) terms.push_back(&t);
    std::sort(terms.begin(), terms.end(), [](auto* a, auto* b) { return *a < *b; });
    for (const auto* t : terms) {
        out << *t;
        for (const auto& p : postings_.at(*t)) out << ' ' << p.doc << ':' << p.tf;
        out << '\n';
    }
    if (!out) throw RetrievalError("write failed for " + path.string());
}

LexicalIndex LexicalIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RetrievalError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "refuel-bm25 1") throw RetrievalError("not a lexical index: " + path.string());
    LexicalIndex idx;
    std::size_t n = 0;
    in >> idx.params_.k1 >> idx.params_.b >> n;
    std::getline(in, line);
    std::uint64_t total = 0;
    for (std::size_t d = 0; d < n; ++d) {
        if (!std::getline(in, line)) throw RetrievalError("truncated lexical index");
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw RetrievalError("malformed doc line in lexical index");
        auto len = static_cast<std::uint32_t>(std::stoul(line.substr(0, tab)));
        idx.doc_len_.push_back(len);
        idx.ids_.push_back(line.substr(tab + 1));
        total += len;
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string term, entry;
        ls >> term;
        auto& plist = idx.postings_[term];
        while (ls >> entry) {
            auto colon = entry.find(':');
            if (colon == std::string::npos) throw RetrievalError("malformed posting in lexical index");
            auto doc = static_cast<std::uint32_t>(std::stoul(entry.substr(0, colon)));
            if (doc >= n) throw RetrievalError("posting refers past the last document");
            plist.push_back({doc, static_cast<std::uint32_t>(std::stoul(entry.substr(colon + 1)))});
        }
    }
    if (n == 0) throw RetrievalError("lexical index holds no documents");
    idx.avgdl_ = static_cast<double>(total) / static_cast<double>(n);
    return idx;
}

std::vector<RankedPassage> retrieve_lexical(const LexicalIndex& index, std::string_view question, std::size_t n) {
    if (n == 0) throw RetrievalError("n must be at least 1");
    const auto terms = distinct_in_order(analyze_terms(question));
    std::vector<double> acc(index.num_docs(), 0.0);
    bool any_indexed = false;
    for (const auto& t : terms) {
        auto plist = index.postings(t);
        if (plist.empty()) continue;
        any_indexed = true;
        const double idf = index.idf(plist.size());
        for (const auto& p : plist) acc[p.doc] += index.term_score(idf, p.tf, index.doc_len(p.doc));
    }
    if (!any_indexed) return {};
    std::vector<Scored> scored;
    scored.reserve(acc.size());
    for (std::uint32_t d = 0; d < acc.size(); ++d) scored.push_back({acc[d], d});
    return take_top(scored, n, [&](std::uint32_t d) -> const std::string& { return index.doc_id(d); });
}

void DenseMatrix::add(std::string id, std::span<const float> vec) {
    if (dim_ == 0) dim_ = vec.size();
    if (vec.size() != dim_ || dim_ == 0) {
        throw RetrievalError("vector for " + id + " has dimension " + std::to_string(vec.size()) + ", expected " +
                             std::to_string(dim_));
    }
    ids_.push_back(std::move(id));
    data_.insert(data_.end(), vec.begin(), vec.end());
}

DenseMatrix DenseMatrix::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RetrievalError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("d=", 0) != 0) {
        throw RetrievalError(path.string() + ": missing 'd=<int>' header");
    }
    std::size_t dim = 0;
    try {
        dim = std::stoul(line.substr(2));
    } catch (const std::exception&) {
        throw RetrievalError(path.string() + ": bad dimension header '" + line + "'");
    }
    if (dim == 0) throw RetrievalError(path.string() + ": dimension must be positive");
    DenseMatrix m(dim);
    std::vector<float> vec;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        auto toks = text::split_whitespace(line);
        if (toks.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (toks.size() != dim + 1) {
            throw RetrievalError(where + ": expected " + std::to_string(dim) + " components, got " +
                                 std::to_string(toks.size() - 1));
        }
        vec.clear();
        for (std::size_t i = 1; i < toks.size(); ++i) vec.push_back(parse_float(toks[i], where));
        m.add(toks[0], vec);
    }
    return m;
}

void DenseMatrix::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw RetrievalError("cannot write " + path.string());
    out << "d=" << dim_ << '\n' << std::setprecision(9);
    for (std::size_t r = 0; r < rows(); ++r) {
        out << ids_[r];
        for (float v : row(r)) out << ' ' << v;
        out << '\n';
    }
}

double inner_product(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

std::vector<RankedPassage> retrieve_dense(const DenseMatrix& vectors, std::span<const float> query, std::size_t n) {
    if (n == 0) throw RetrievalError("n must be at least 1");
    if (query.size() != vectors.dim()) {
        throw RetrievalError("query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                             std::to_string(vectors.dim()));
    }
    std::vector<Scored> scored;
    scored.reserve(vectors.rows());
    for (std::uint32_t r = 0; r < vectors.rows(); ++r) scored.push_back({inner_product(vectors.row(r), query), r});
    return take_top(scored, n, [&](std::uint32_t r) -> const std::string& { return vectors.id(r); });
}

double IdentityScorer::score(std::string_view, const corpus::Passage&, const RankedPassage& incoming) const {
    return -static_cast<double>(incoming.rank);
}

double LexicalOverlapScorer::score(std::string_view question, const corpus::Passage& passage,
                                   const RankedPassage&) const {
    const auto qterms = distinct_in_order(analyze_terms(question));
    if (qterms.empty()) return 0.0;
    std::unordered_set<std::string> pterms;
    for (auto& t : analyze_terms(passage.title)) pterms.insert(std::move(t));
    for (auto& t : analyze_terms(passage.text)) pterms.insert(std::move(t));
    std::size_t hit = 0;
    for (const auto& t : qterms) hit += pterms.count(t);
    return static_cast<double>(hit) / static_cast<double>(qterms.size());
}

std::vector<RankedPassage> rerank(std::string_view question, std::span<const RankedPassage> candidates, std::size_t k,
                                  const RerankScorer& scorer, const corpus::PassageStore& store) {
    if (candidates.empty()) throw RetrievalError("rerank needs at least one candidate");
    struct Entry {
        double score;
        std::size_t incoming;  // position in `candidates`
    };
    std::vector<Entry> entries;
    entries.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& c = candidates[i];
        try {
            entries.push_back({scorer.score(question, store.get(c.passage_id), c), i});
        } catch (const std::exception& e) {
            throw RetrievalError("reranker failed on passage " + c.passage_id + ": " + e.what());
        }
        if (!std::isfinite(entries.back().score)) {
            throw RetrievalError("reranker returned a non-finite score for passage " + c.passage_id);
        }
    }
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });
    const std::size_t keep = std::min(k, entries.size());
    std::vector<RankedPassage> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        out.push_back({candidates[entries[i].incoming].passage_id, entries[i].score, i + 1});
    }
    return out;
}

void write_ranked(std::span<const RankedQuestion> results, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RetrievalError("cannot write " + path.string());
    for (const auto& r : results) {
        json list = json::array();
        for (const auto& p : r.passages) list.push_back({{"passage_id", p.passage_id}, {"score", p.score}, {"rank", p.rank}});
        out << json{{"question_id", r.question_id}, {"question", r.question}, {"passages", std::move(list)}}.dump()
            << '\n';
    }
    if (!out) throw RetrievalError("write failed for " + path.string());
}

std::vector<RankedQuestion> read_ranked(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RetrievalError("cannot open " + path.string());
    std::vector<RankedQuestion> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = json::parse(line);
            RankedQuestion r;
            r.question_id = j.at("question_id").get<std::string>();
            r.question = j.value("question", std::string{});
            for (const auto& p : j.at("passages")) {
                r.passages.push_back(
                    {p.at("passage_id").get<std::string>(), p.at("score").get<double>(), p.at("rank").get<std::size_t>()});
            }
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw RetrievalError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace refuel::retrieval
