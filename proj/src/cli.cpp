#include "refuel/cli.hpp"

#include <atomic>
#include <charconv>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "refuel/corpus.hpp"
#include "refuel/genio.hpp"
#include "refuel/metrics.hpp"
#include "refuel/pretraindata.hpp"
#include "refuel/retrieval.hpp"
#include "refuel/roundtrip.hpp"

namespace refuel::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kInvalidConfig = 2;

class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(std::vector<std::string> problems)
        : std::runtime_error("invalid configuration"), problems_(std::move(problems)) {}
    const std::vector<std::string>& problems() const { return problems_; }

  private:
    std::vector<std::string> problems_;
};

// Accumulates every validation problem before failing.
class Validator {
  public:
    void require_file(const std::string& what, const std::string& path) {
        if (path.empty()) {
            problems_.push_back(what + " is required");
        } else if (!fs::is_regular_file(path)) {
            problems_.push_back(what + " does not exist: " + path);
        }
    }
    void require_dir(const std::string& what, const std::string& path) {
        if (path.empty()) {
            problems_.push_back(what + " is required");
        } else if (!fs::is_directory(path)) {
            problems_.push_back(what + " is not a directory: " + path);
        }
    }
    void check(bool ok, std::string problem) {
        if (!ok) problems_.push_back(std::move(problem));
    }
    void backend(const std::string& spec) {
        if (spec.rfind("table:", 0) == 0) {
            require_file("table backend fixture", spec.substr(6));
        } else if (spec.rfind("remote:", 0) == 0) {
            check(spec.find("://") != std::string::npos, "remote backend needs a URL like remote:http://host:port");
        } else {
            problems_.push_back("backend must be table:<path> or remote:<url>, got '" + spec + "'");
        }
    }
    void finish() const {
        if (!problems_.empty()) throw ConfigError(problems_);
    }

  private:
    std::vector<std::string> problems_;
};

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

using Settings = std::map<std::string, std::string>;

void write_manifest(const fs::path& path, const std::string& command, const Settings& settings, std::uint64_t seed,
                    const json& extra = json::object()) {
    std::string canonical = command + "\n";
    for (const auto& [k, v] : settings) canonical += k + "=" + v + "\n";
    std::ostringstream hash;
    hash << std::hex << std::setw(16) << std::setfill('0') << fnv1a(canonical);
    json j = {{"command", command},
              {"settings", settings},
              {"config_hash", hash.str()},
              {"seed", seed},
              {"versions", {{"refuel", kVersion}, {"format", 1}}}};
    if (!extra.empty()) j["stats"] = extra;
    std::ofstream out(path, std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
}

fs::path manifest_for(const fs::path& output) { return fs::path(output.string() + ".manifest.json"); }

// Shortest text that parses back to v.
std::string fmt_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the failure
// with the lowest index so errors are reproducible.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::optional<std::size_t> failed_at;
    std::exception_ptr failure;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!failed_at || i < *failed_at) {
                        failed_at = i;
                        failure = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    if (failure) std::rethrow_exception(failure);
}

struct QuestionItem {
    std::string id;
    std::string question;
};

// Example-style JSON array or JSONL; only id and question are read.
std::vector<QuestionItem> load_question_items(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string content = ss.str();
    std::vector<json> records;
    const auto first = content.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && content[first] == '[') {
        for (auto& j : json::parse(content)) records.push_back(std::move(j));
    } else {
        std::istringstream lines(content);
        std::string line;
        while (std::getline(lines, line)) {
            if (line.find_first_not_of(" \t\r") != std::string::npos) records.push_back(json::parse(line));
        }
    }
    std::vector<QuestionItem> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        QuestionItem q;
        q.id = r.contains("id") ? r.at("id").get<std::string>() : std::to_string(i);
        q.question = r.at("question").get<std::string>();
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<corpus::Passage> passages_for(const retrieval::RankedQuestion& rq, const corpus::PassageStore* store,
                                          std::size_t k) {
    std::vector<corpus::Passage> out;
    for (const auto& rp : rq.passages) {
        if (out.size() >= k) break;
        if (store) {
            out.push_back(store->get(rp.passage_id));
        } else {
            corpus::Passage p;
            p.id = rp.passage_id;
            out.push_back(std::move(p));
        }
    }
    if (out.empty()) throw std::runtime_error("question " + rq.question_id + " has no ranked passages");
    return out;
}

struct Options {
    std::size_t jobs = 1;
    std::uint64_t seed = 13;

    std::string pages, store, vectors, query_vectors, questions, out, ranked, backend, pred, gold, reranker = "overlap",
                                                                                                  corpus_label;
    std::size_t n = 1000;
    std::size_t k = 100;
    int max_rounds = 5;
    std::string verify = "lm";
    double threshold = roundtrip::kDefaultThreshold;
    bool keep_at_least_one = true;
    int min_answers = 0;
    int timeout_ms = 30000;
    std::size_t max_in_flight = 8;
};

int cmd_ingest(const Options& o, std::ostream& out) {
    Validator v;
    v.require_file("--pages", o.pages);
    v.check(!o.out.empty(), "--out is required");
    v.finish();
    corpus::SplitStats stats;
    auto pages = corpus::load_pages_jsonl(o.pages);
    corpus::PassageStore store(corpus::split_pages(pages, &stats), o.corpus_label);
    store.save(o.out);
    write_manifest(fs::path(o.out) / "manifest.json", "ingest",
                   {{"pages", o.pages}, {"out", o.out}, {"corpus_label", o.corpus_label}}, o.seed,
                   {{"pages", stats.pages}, {"skipped_empty", stats.skipped_empty}, {"passages", stats.passages}});
    out << "ingested " << stats.pages << " pages into " << stats.passages << " passages (" << stats.skipped_empty
        << " empty pages skipped)\n";
    return 0;
}

int cmd_index(const Options& o, std::ostream& out) {
    Validator v;
    v.require_dir("--store", o.store);
    if (!o.vectors.empty()) v.require_file("--vectors", o.vectors);
    v.finish();
    auto store = corpus::PassageStore::load(o.store);
    auto index = retrieval::LexicalIndex::build(store);
    index.save(fs::path(o.store) / "lexical.idx");
    json stats = {{"passages", store.size()}, {"avg_doc_len", index.avg_doc_len()}};
    if (!o.vectors.empty()) {
        auto vecs = retrieval::DenseMatrix::load(o.vectors);
        for (auto id : vecs.ids()) {
            if (!store.contains(id)) throw std::runtime_error("vector file names unknown passage id " + id);
        }
        vecs.save(fs::path(o.store) / "vectors.txt");
        stats["vectors"] = vecs.rows();
        stats["dim"] = vecs.dim();
    }
    write_manifest(fs::path(o.store) / "index.manifest.json", "index", {{"store", o.store}, {"vectors", o.vectors}},
                   o.seed, stats);
    out << "indexed " << store.size() << " passages\n";
    return 0;
}

int cmd_retrieve(const Options& o, std::ostream& out) {
    Validator v;
    v.require_dir("--store", o.store);
    v.require_file("--questions", o.questions);
    v.check(!o.out.empty(), "--out is required");
    v.check(o.n >= 1 && o.k >= 1 && o.k <= o.n, "--k must be between 1 and --n");
    v.check(o.reranker == "overlap" || o.reranker == "identity", "--reranker must be overlap or identity");
    if (!o.query_vectors.empty()) {
        v.require_file("--query-vectors", o.query_vectors);
        v.require_file("store vectors (run index --vectors first)", (fs::path(o.store) / "vectors.txt").string());
    }
    v.finish();

    auto store = corpus::PassageStore::load(o.store);
    const auto questions = load_question_items(o.questions);
    const fs::path idx_path = fs::path(o.store) / "lexical.idx";

    std::optional<retrieval::LexicalIndex> lexical;
    std::optional<retrieval::DenseMatrix> dense, qvecs;
    std::map<std::string, std::size_t> qrow;
    if (o.query_vectors.empty()) {
        lexical = fs::exists(idx_path) ? retrieval::LexicalIndex::load(idx_path) : retrieval::LexicalIndex::build(store);
    } else {
        dense = retrieval::DenseMatrix::load(fs::path(o.store) / "vectors.txt");
        qvecs = retrieval::DenseMatrix::load(o.query_vectors);
        for (std::size_t r = 0; r < qvecs->rows(); ++r) qrow[qvecs->id(r)] = r;
    }
    const retrieval::IdentityScorer identity;
    const retrieval::LexicalOverlapScorer overlap;
    const retrieval::RerankScorer& scorer =
        o.reranker == "identity" ? static_cast<const retrieval::RerankScorer&>(identity) : overlap;

    std::vector<retrieval::RankedQuestion> results(questions.size());
    parallel_for(questions.size(), o.jobs, [&](std::size_t i) {
        const auto& q = questions[i];
        std::vector<retrieval::RankedPassage> cands;
        if (lexical) {
            cands = retrieval::retrieve_lexical(*lexical, q.question, o.n);
        } else {
            auto it = qrow.find(q.id);
            if (it == qrow.end()) throw std::runtime_error("no query vector for question " + q.id);
            cands = retrieval::retrieve_dense(*dense, qvecs->row(it->second), o.n);
        }
        results[i].question_id = q.id;
        results[i].question = q.question;
        if (!cands.empty()) results[i].passages = retrieval::rerank(q.question, cands, o.k, scorer, store);
    });
    retrieval::write_ranked(results, o.out);
    write_manifest(manifest_for(o.out), "retrieve",
                   {{"store", o.store},
                    {"questions", o.questions},
                    {"n", std::to_string(o.n)},
                    {"k", std::to_string(o.k)},
                    {"reranker", o.reranker},
                    {"query_vectors", o.query_vectors},
                    {"out", o.out}},
                   o.seed);
    out << "retrieved passages for " << results.size() << " questions\n";
    return 0;
}

struct Generation {
    std::vector<retrieval::RankedQuestion> ranked;
    std::optional<corpus::PassageStore> store;
    std::unique_ptr<genio::Generator> backend;
};

Generation prepare_generation(const Options& o, Validator& v) {
    v.require_file("--ranked", o.ranked);
    v.backend(o.backend);
    v.check(!o.out.empty(), "--out is required");
    v.check(o.k >= 1, "--k must be positive");
    v.check(o.min_answers >= 0, "--min-answers must be >= 0");
    if (!o.store.empty()) v.require_dir("--store", o.store);
    v.finish();
    Generation g;
    g.ranked = retrieval::read_ranked(o.ranked);
    if (!o.store.empty()) g.store = corpus::PassageStore::load(o.store);
    g.backend = genio::make_backend(o.backend, std::chrono::milliseconds(o.timeout_ms), o.max_in_flight);
    return g;
}

Settings generation_settings(const Options& o) {
    return {{"ranked", o.ranked},           {"backend", o.backend}, {"store", o.store},
            {"k", std::to_string(o.k)},     {"out", o.out},         {"min_answers", std::to_string(o.min_answers)}};
}

int cmd_predict(const Options& o, std::ostream& out) {
    Validator v;
    auto g = prepare_generation(o, v);
    const std::optional<int> min_answers = o.min_answers > 0 ? std::optional<int>(o.min_answers) : std::nullopt;
    std::vector<roundtrip::PredictionSet> sets(g.ranked.size());
    parallel_for(g.ranked.size(), o.jobs, [&](std::size_t i) {
        const auto& rq = g.ranked[i];
        auto passages = passages_for(rq, g.store ? &*g.store : nullptr, o.k);
        sets[i] = roundtrip::single_pass(rq.question_id, rq.question, passages, *g.backend, min_answers);
    });
    roundtrip::write_predictions(sets, o.out);
    write_manifest(manifest_for(o.out), "predict", generation_settings(o), o.seed);
    out << "predicted " << sets.size() << " prompts\n";
    return 0;
}

int cmd_roundtrip(const Options& o, std::ostream& out) {
    Validator v;
    v.check(o.max_rounds >= 1, "--max-rounds must be >= 1");
    v.check(o.threshold >= 0.0, "--threshold must be >= 0");
    v.check(o.verify == "lm" || o.verify == "em" || o.verify == "none", "--verify must be lm, em or none");
    auto g = prepare_generation(o, v);

    roundtrip::VerifyConfig cfg;
    cfg.mode = roundtrip::verify_mode_from_string(o.verify);
    cfg.threshold = o.threshold;
    cfg.keep_at_least_one = o.keep_at_least_one;
    cfg.max_rounds = o.max_rounds;
    const std::optional<int> min_answers = o.min_answers > 0 ? std::optional<int>(o.min_answers) : std::nullopt;

    std::vector<roundtrip::PredictionSet> sets(g.ranked.size());
    parallel_for(g.ranked.size(), o.jobs, [&](std::size_t i) {
        const auto& rq = g.ranked[i];
        auto passages = passages_for(rq, g.store ? &*g.store : nullptr, o.k);
        auto generated =
            roundtrip::round_trip_generate(rq.question_id, rq.question, passages, *g.backend, cfg.max_rounds, min_answers);
        sets[i] = roundtrip::verify(generated, passages, *g.backend, cfg);
    });
    roundtrip::write_predictions(sets, o.out);

    std::size_t truncated = 0;
    for (const auto& s : sets) truncated += s.truncated ? 1 : 0;
    auto settings = generation_settings(o);
    settings["max_rounds"] = std::to_string(o.max_rounds);
    settings["verify"] = o.verify;
    settings["threshold"] = fmt_double(o.threshold);
    settings["keep_at_least_one"] = o.keep_at_least_one ? "true" : "false";
    write_manifest(manifest_for(o.out), "roundtrip", settings, o.seed,
                   {{"prompts", sets.size()}, {"truncated", truncated}});
    out << "round-trip predicted " << sets.size() << " prompts (" << truncated << " truncated at max rounds)\n";
    return 0;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
    Validator v;
    v.require_file("--pred", o.pred);
    v.require_file("--gold", o.gold);
    v.finish();
    auto preds = roundtrip::read_predictions(o.pred);
    auto loaded = corpus::load_examples(o.gold);
    for (const auto& e : loaded.errors) {
        err << json{{"warning", "skipped gold record"}, {"index", e.index}, {"id", e.id}, {"message", e.message}}.dump()
            << '\n';
    }
    auto report = metrics::evaluate(preds, loaded.examples);
    if (!o.out.empty()) {
        std::ofstream f(o.out, std::ios::trunc);
        f << metrics::report_to_json(report) << '\n';
        if (!f) throw std::runtime_error("cannot write " + o.out);
        write_manifest(manifest_for(o.out), "eval", {{"pred", o.pred}, {"gold", o.gold}, {"out", o.out}}, o.seed);
    }
    out << metrics::format_table(report);
    return 0;
}

int cmd_build_pretrain(const Options& o, std::ostream& out, std::ostream& err) {
    Validator v;
    v.require_file("--questions", o.questions);
    v.check(!o.out.empty(), "--out is required");
    v.finish();
    auto questions = pretrain::load_questions(o.questions);
    auto built = pretrain::build_pretrain(questions, o.seed);
    pretrain::write_pretrain(built.records, o.out);
    for (const auto& s : built.skipped) {
        err << json{{"skipped", s.index}, {"question", s.question}, {"reason", s.reason}}.dump() << '\n';
    }
    write_manifest(manifest_for(o.out), "build-pretrain", {{"questions", o.questions}, {"out", o.out}}, o.seed,
                   {{"samples", built.records.size()}, {"skipped", built.skipped.size()}});
    out << "wrote " << built.records.size() << " samples, skipped " << built.skipped.size() << " questions\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"REFUEL: retrieve, generate, round-trip and evaluate answers to ambiguous questions", "refuel"};
    app.set_config("--config", "", "TOML file with default option values; command-line flags win");
    app.set_version_flag("--version", kVersion);
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);

    Options o;
    app.add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--seed", o.seed, "Run seed, recorded in every manifest");

    auto* ingest = app.add_subcommand("ingest", "Split pages into 100-token passages and persist a passage store");
    ingest->add_option("--pages", o.pages, "Pages JSONL (id, title, text)")->required();
    ingest->add_option("--out", o.out, "Store directory")->required();
    ingest->add_option("--corpus-label", o.corpus_label, "Opaque corpus label recorded in the store");

    auto* index = app.add_subcommand("index", "Build the BM25 index and attach dense vectors to a store");
    index->add_option("--store", o.store, "Store directory")->required();
    index->add_option("--vectors", o.vectors, "Dense passage vectors (d=<int> header)");

    auto* retrieve = app.add_subcommand("retrieve", "Retrieve top-N passages and rerank to top-K");
    retrieve->add_option("--store", o.store)->required();
    retrieve->add_option("--questions", o.questions, "Questions (examples JSON array or JSONL)")->required();
    retrieve->add_option("--n", o.n, "Passages retrieved per question")->capture_default_str();
    retrieve->add_option("--k", o.k, "Passages kept after reranking")->capture_default_str();
    retrieve->add_option("--reranker", o.reranker, "overlap | identity")->capture_default_str();
    retrieve->add_option("--query-vectors", o.query_vectors, "Question vectors; switches to dense retrieval");
    retrieve->add_option("--out", o.out, "Ranked results JSONL")->required();

    auto add_generation = [&](CLI::App* cmd) {
        cmd->add_option("--ranked", o.ranked, "Ranked results JSONL")->required();
        cmd->add_option("--backend", o.backend, "table:<fixture.json> | remote:<url>")->required();
        cmd->add_option("--store", o.store, "Store directory; passage text is sent to the backend");
        cmd->add_option("--k", o.k, "Passages passed to the backend")->capture_default_str();
        cmd->add_option("--min-answers", o.min_answers, "Ask the backend for at least this many answers");
        cmd->add_option("--timeout-ms", o.timeout_ms, "Remote request timeout")->capture_default_str();
        cmd->add_option("--max-in-flight", o.max_in_flight, "Concurrent remote requests")->capture_default_str();
        cmd->add_option("--out", o.out, "Predictions JSONL")->required();
    };
    auto* predict = app.add_subcommand("predict", "Single-pass QA pair generation");
    add_generation(predict);
    auto* rt = app.add_subcommand("roundtrip", "Round-trip generation followed by verification");
    add_generation(rt);
    rt->add_option("--max-rounds", o.max_rounds)->capture_default_str();
    rt->add_option("--verify", o.verify, "lm | em | none")->capture_default_str();
    rt->add_option("--threshold", o.threshold, "Drop pairs whose NLL exceeds this")->capture_default_str();
    rt->add_flag("--keep-at-least-one,!--no-keep-at-least-one", o.keep_at_least_one,
                 "Keep the best pair when verification would drop all");

    auto* eval = app.add_subcommand("eval", "Score predictions against gold annotations");
    eval->add_option("--pred", o.pred, "Predictions JSONL")->required();
    eval->add_option("--gold", o.gold, "Examples JSON")->required();
    eval->add_option("--out", o.out, "Report JSON");

    auto* pre = app.add_subcommand("build-pretrain", "Build token-deletion pre-training samples");
    pre->add_option("--questions", o.questions, "Questions with answers (JSON array or JSONL)")->required();
    pre->add_option("--out", o.out, "Samples JSONL")->required();
    pre->add_option("--seed", o.seed, "Sampling seed");

    std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(rest.begin(), rest.end());
    try {
        app.parse(rest);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (ingest->parsed()) return cmd_ingest(o, out);
        if (index->parsed()) return cmd_index(o, out);
        if (retrieve->parsed()) return cmd_retrieve(o, out);
        if (predict->parsed()) return cmd_predict(o, out);
        if (rt->parsed()) return cmd_roundtrip(o, out);
        if (eval->parsed()) return cmd_eval(o, out, err);
        if (pre->parsed()) return cmd_build_pretrain(o, out, err);
    } catch (const ConfigError& e) {
        err << json{{"error", e.what()}, {"problems", e.problems()}}.dump() << '\n';
        return kInvalidConfig;
    } catch (const std::exception& e) {
        err << json{{"error", e.what()}}.dump() << '\n';
        return kRuntimeFailure;
    }
    return kRuntimeFailure;
}

}  // namespace refuel::cli
