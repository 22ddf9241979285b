#include "refuel/corpus.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "refuel/text.hpp"

namespace refuel::corpus {

using nlohmann::json;

namespace {

constexpr const char* kPassagesFile = "passages.jsonl";
constexpr const char* kOffsetsFile = "passages.offsets";
constexpr const char* kMetaFile = "store.json";

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json passage_to_json(const Passage& p) {
    json j = {{"id", p.id}, {"title", p.title}, {"text", p.text}};
    if (p.vector) j["vector"] = *p.vector;
    return j;
}

Passage passage_from_json(const json& j) {
    Passage p;
    p.id = j.at("id").get<std::string>();
    p.title = j.value("title", std::string{});
    p.text = j.at("text").get<std::string>();
    p.token_count = text::split_whitespace(p.text).size();
    if (auto it = j.find("vector"); it != j.end() && !it->is_null()) {
        p.vector = it->get<std::vector<float>>();
    }
    return p;
}

struct OffsetEntry {
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
    std::string id;
};

std::vector<OffsetEntry> read_offsets(const std::filesystem::path& dir) {
    std::ifstream in(dir / kOffsetsFile);
    if (!in) throw CorpusError("cannot open " + (dir / kOffsetsFile).string());
    std::vector<OffsetEntry> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto t1 = line.find('\t');
        auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) throw CorpusError("malformed offset line: " + line);
        OffsetEntry e;
        e.offset = std::stoull(line.substr(0, t1));
        e.length = std::stoull(line.substr(t1 + 1, t2 - t1 - 1));
        e.id = line.substr(t2 + 1);
        out.push_back(std::move(e));
    }
    return out;
}

Passage read_at(std::ifstream& in, const OffsetEntry& e) {
    std::string buf(e.length, '\0');
    in.seekg(static_cast<std::streamoff>(e.offset));
    in.read(buf.data(), static_cast<std::streamsize>(e.length));
    if (!in) throw CorpusError("offset index points past end of passage file at id " + e.id);
    Passage p = passage_from_json(json::parse(buf));
    if (p.id != e.id) throw CorpusError("offset index mismatch: expected " + e.id + ", found " + p.id);
    return p;
}

std::vector<std::string> string_list(const json& j, const char* what) {
    if (j.is_string()) return {j.get<std::string>()};
    if (!j.is_array()) throw CorpusError(std::string(what) + " must be a string or list of strings");
    std::vector<std::string> out;
    for (const auto& e : j) {
        if (!e.is_string()) throw CorpusError(std::string(what) + " entries must be strings");
        out.push_back(e.get<std::string>());
    }
    return out;
}

GoldAnnotation annotation_from_json(const json& a) {
    const auto type = a.at("type").get<std::string>();
    GoldAnnotation ann;
    if (type == "singleAnswer") {
        ann.kind = AnnotationKind::single;
        ann.single_answers = string_list(a.at("answer"), "answer");
        if (ann.single_answers.empty()) throw CorpusError("singleAnswer annotation has no answers");
    } else if (type == "multipleQAs") {
        ann.kind = AnnotationKind::multiple;
        for (const auto& qa : a.at("qaPairs")) {
            GoldPair gp;
            gp.question = qa.at("question").get<std::string>();
            gp.answers = string_list(qa.at("answer"), "answer");
            if (gp.answers.empty()) throw CorpusError("qaPair has no answers");
            ann.qa_pairs.push_back(std::move(gp));
        }
        if (ann.qa_pairs.size() < 2) throw CorpusError("multipleQAs annotation needs at least 2 qaPairs");
    } else {
        throw CorpusError("unknown annotation type: " + type);
    }
    return ann;
}

json annotation_to_json(const GoldAnnotation& ann) {
    if (ann.kind == AnnotationKind::single) {
        return {{"type", "singleAnswer"}, {"answer", ann.single_answers}};
    }
    json pairs = json::array();
    for (const auto& qa : ann.qa_pairs) pairs.push_back({{"question", qa.question}, {"answer", qa.answers}});
    return {{"type", "multipleQAs"}, {"qaPairs", std::move(pairs)}};
}

}  // namespace

std::vector<Passage> split_pages(std::span<const Page> pages, SplitStats* stats, std::size_t chunk_tokens) {
    if (chunk_tokens == 0) throw std::invalid_argument("chunk_tokens must be positive");
    SplitStats local;
    std::vector<Passage> out;
    for (std::size_t pi = 0; pi < pages.size(); ++pi) {
        const Page& page = pages[pi];
        ++local.pages;
        auto tokens = text::split_whitespace(page.body);
        if (tokens.empty()) {
            ++local.skipped_empty;
            continue;
        }
        const std::string base = page.id.empty() ? std::to_string(pi) : page.id;
        std::size_t chunk = 0;
        for (std::size_t start = 0; start < tokens.size(); start += chunk_tokens, ++chunk) {
            const std::size_t end = std::min(tokens.size(), start + chunk_tokens);
            Passage p;
            p.id = base + "_" + std::to_string(chunk);
            p.title = page.title;
            std::vector<std::string> slice(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                                           tokens.begin() + static_cast<std::ptrdiff_t>(end));
            p.text = text::join(slice);
            p.token_count = end - start;
            out.push_back(std::move(p));
        }
    }
    local.passages = out.size();
    if (stats) *stats = local;
    return out;
}

std::vector<Page> load_pages_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open " + path.string());
    std::vector<Page> pages;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto j = json::parse(line);
            Page pg;
            pg.id = j.value("id", std::string{});
            pg.title = j.value("title", std::string{});
            pg.body = j.at("text").get<std::string>();
            pages.push_back(std::move(pg));
        } catch (const json::exception& e) {
            throw CorpusError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return pages;
}

PassageStore::PassageStore(std::vector<Passage> passages, std::string corpus_label)
    : passages_(std::move(passages)), label_(std::move(corpus_label)) {
    index_.reserve(passages_.size());
    for (std::size_t i = 0; i < passages_.size(); ++i) {
        if (!index_.emplace(passages_[i].id, i).second) {
            throw CorpusError("duplicate passage id: " + passages_[i].id);
        }
    }
}

const Passage* PassageStore::find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &passages_[it->second];
}

const Passage& PassageStore::get(const std::string& id) const {
    if (const Passage* p = find(id)) return *p;
    throw LookupError("unknown passage id: " + id);
}

void PassageStore::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream data(dir / kPassagesFile, std::ios::binary | std::ios::trunc);
    std::ofstream offsets(dir / kOffsetsFile, std::ios::binary | std::ios::trunc);
    if (!data || !offsets) throw CorpusError("cannot write store into " + dir.string());
    std::uint64_t pos = 0;
    for (const auto& p : passages_) {
        const std::string line = passage_to_json(p).dump();
        data << line << '\n';
        offsets << pos << '\t' << line.size() << '\t' << p.id << '\n';
        pos += line.size() + 1;
    }
    std::ofstream meta(dir / kMetaFile, std::ios::trunc);
    meta << json{{"corpus_label", label_}, {"passages", passages_.size()}}.dump(2) << '\n';
    if (!data || !offsets || !meta) throw CorpusError("write failed for store " + dir.string());
}

PassageStore PassageStore::load(const std::filesystem::path& dir) {
    auto entries = read_offsets(dir);
    std::ifstream data(dir / kPassagesFile, std::ios::binary);
    if (!data) throw CorpusError("cannot open " + (dir / kPassagesFile).string());
    std::vector<Passage> passages;
    passages.reserve(entries.size());
    for (const auto& e : entries) passages.push_back(read_at(data, e));
    std::string label;
    if (std::ifstream meta(dir / kMetaFile); meta) {
        label = json::parse(meta).value("corpus_label", std::string{});
    }
    return PassageStore(std::move(passages), std::move(label));
}

Passage PassageStore::read_one(const std::filesystem::path& dir, const std::string& id) {
    for (const auto& e : read_offsets(dir)) {
        if (e.id != id) continue;
        std::ifstream data(dir / kPassagesFile, std::ios::binary);
        if (!data) throw CorpusError("cannot open " + (dir / kPassagesFile).string());
        return read_at(data, e);
    }
    throw LookupError("unknown passage id: " + id);
}

LoadedExamples parse_examples(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw CorpusError(std::string("examples file does not parse: ") + e.what());
    }
    if (!root.is_array()) throw CorpusError("examples file must hold a JSON array");

    LoadedExamples out;
    for (std::size_t i = 0; i < root.size(); ++i) {
        const json& rec = root[i];
        RecordError err{i, {}, {}};
        try {
            if (!rec.is_object()) throw CorpusError("record is not an object");
            if (auto it = rec.find("id"); it != rec.end() && it->is_string()) err.id = it->get<std::string>();
            auto q = rec.find("question");
            if (q == rec.end() || !q->is_string()) throw CorpusError("record missing question");
            PromptExample ex;
            ex.id = err.id.empty() ? std::to_string(i) : err.id;
            ex.prompt_question = q->get<std::string>();
            auto anns = rec.find("annotations");
            if (anns == rec.end() || !anns->is_array() || anns->empty()) {
                throw CorpusError("record has no annotations");
            }
            for (const auto& a : *anns) ex.annotations.push_back(annotation_from_json(a));
            out.examples.push_back(std::move(ex));
        } catch (const std::exception& e) {
            err.message = e.what();
            out.errors.push_back(std::move(err));
        }
    }
    return out;
}

LoadedExamples load_examples(const std::filesystem::path& path) { return parse_examples(read_file(path)); }

std::string dump_examples(std::span<const PromptExample> examples) {
    json root = json::array();
    for (const auto& ex : examples) {
        json anns = json::array();
        for (const auto& a : ex.annotations) anns.push_back(annotation_to_json(a));
        root.push_back({{"id", ex.id}, {"question", ex.prompt_question}, {"annotations", std::move(anns)}});
    }
    return root.dump(1);
}

void save_examples(std::span<const PromptExample> examples, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CorpusError("cannot write " + path.string());
    out << dump_examples(examples) << '\n';
}

}  // namespace refuel::corpus
