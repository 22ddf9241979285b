#include <algorithm>
#include <array>
#include <cctype>
#include <unordered_map>
#include <unordered_set>

#include "refuel/pretraindata.hpp"
#include "refuel/text.hpp"

namespace refuel::pretrain {

namespace {

constexpr std::array<std::string_view, 17> kNames = {"ADJ",  "ADP",   "ADV",  "AUX",   "CCONJ", "DET",
                                                     "INTJ", "NOUN",  "NUM",  "PART",  "PRON",  "PROPN",
                                                     "PUNCT", "SCONJ", "SYM", "VERB",  "X"};

const std::unordered_map<std::string_view, PosTag>& closed_class() {
    static const auto* table = [] {
        auto* m = new std::unordered_map<std::string_view, PosTag>;
        auto add = [m](PosTag t, std::initializer_list<std::string_view> words) {
            for (auto w : words) m->emplace(w, t);
        };
        add(PosTag::DET, {"the", "a", "an", "this", "these", "those", "every", "each", "some", "any", "no",
                          "another", "which", "whose", "all", "both", "either", "neither", "that"});
        add(PosTag::PRON, {"i", "you", "he", "she", "it", "we", "they", "me", "him", "her", "us", "them", "my",
                           "your", "his", "its", "our", "their", "who", "whom", "what", "whoever", "whatever",
                           "something", "nothing", "anything", "everything", "someone", "anyone", "everyone",
                           "somebody", "nobody", "itself", "himself", "herself", "themselves", "one"});
        add(PosTag::ADP, {"of", "in", "on", "at", "by", "for", "with", "from", "to", "into", "onto", "about",
                          "over", "under", "after", "before", "during", "between", "through", "against", "without",
                          "within", "among", "across", "behind", "since", "until", "upon", "around", "near", "per",
                          "like", "off", "up", "down", "out", "via", "throughout", "towards", "toward", "than"});
        add(PosTag::CCONJ, {"and", "or", "but", "nor", "yet"});
        add(PosTag::SCONJ, {"if", "because", "although", "though", "while", "whether", "unless", "whereas"});
        add(PosTag::AUX, {"is", "are", "was", "were", "be", "been", "being", "am", "do", "does", "did", "has",
                          "have", "had", "will", "would", "shall", "should", "can", "could", "may", "might",
                          "must", "isn't", "wasn't", "don't", "didn't", "doesn't"});
        add(PosTag::PART, {"not", "n't", "'s"});
        add(PosTag::ADV, {"when", "where", "how", "why", "very", "also", "too", "just", "only", "ever", "never",
                          "often", "still", "already", "again", "currently", "originally", "now", "then", "there",
                          "here", "so", "really", "usually", "first-ever"});
        add(PosTag::ADJ, {"many", "much", "more", "most", "few", "fewer", "less", "least", "first", "last", "new",
                          "old", "best", "worst", "top", "original", "current", "main", "next", "great", "little",
                          "big", "long", "high", "low", "second", "third", "final", "tall", "short", "young",
                          "other", "same", "different", "early", "late", "latest", "largest", "biggest", "highest",
                          "oldest", "youngest", "longest", "fastest", "human", "polar", "lead", "famous", "real",
                          "several", "own", "good", "bad", "large", "small", "major", "former", "late", "richest"});
        add(PosTag::NUM, {"zero", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
                          "eleven", "twelve", "twenty", "thirty", "hundred", "thousand", "million", "billion"});
        add(PosTag::INTJ, {"yes", "oh", "hello"});
        return m;
    }();
    return *table;
}

// Inflected forms that are reliably verbal in questions.
const std::unordered_set<std::string_view>& verb_forms() {
    static const std::unordered_set<std::string_view> s = {
        "won",     "wrote",   "written", "sang",    "sung",     "sings",    "made",    "came",    "went",
        "got",     "found",   "became",  "began",   "begun",    "built",    "born",    "held",    "holds",
        "spoken",  "said",    "says",    "plays",   "gave",     "given",    "took",    "taken",   "ran",
        "knew",    "known",   "left",    "led",     "lost",     "meant",    "paid",    "sold",    "sent",
        "stood",   "taught",  "thought", "told",    "broke",    "drove",    "fell",    "flew",    "grew",
        "hit",     "kept",    "means",   "owns",    "lives",    "wins",     "writes",  "starred", "sank",
        "invented", "founded", "became", "comes",   "goes",     "makes",    "takes",   "discovered", "died"};
    return s;
}

// Base forms, tagged VERB only after a do/modal auxiliary earlier in the question.
const std::unordered_set<std::string_view>& base_verbs() {
    static const std::unordered_set<std::string_view> s = {
        "open",  "close", "end",   "start", "begin", "take",  "make",  "come",   "go",     "get",   "win",
        "play",  "sing",  "write", "say",   "live",  "weigh", "die",   "sink",   "fall",   "release", "mean",
        "own",   "invent", "build", "happen", "become", "leave", "air", "run",   "stand",  "find",  "give",
        "break", "form",  "lose",  "join",  "change", "start", "stop",  "use",   "work",   "need",  "cost"};
    return s;
}

const std::unordered_set<std::string_view>& do_support() {
    static const std::unordered_set<std::string_view> s = {"do",    "does",   "did",   "will", "would", "can",
                                                           "could", "should", "shall", "may",  "might", "must"};
    return s;
}

const std::unordered_set<std::string_view>& ing_nouns() {
    static const std::unordered_set<std::string_view> s = {
        "king", "thing", "ring", "spring", "string", "wing", "morning", "evening", "building", "wedding",
        "ceiling", "sibling", "earring", "viking", "beijing", "wyoming", "nothing", "something", "anything",
        "everything", "pudding", "darling", "sting", "swing", "bring", "sing", "ping", "ling"};
    return s;
}

const std::unordered_set<std::string_view>& ed_nouns() {
    static const std::unordered_set<std::string_view> s = {"bed", "red", "shed", "seed", "speed", "need", "feed",
                                                           "breed", "creed", "weed", "hundred", "ted", "fred",
                                                           "reed", "bred", "sled", "sacred"};
    return s;
}

bool is_symbol_char(char c) {
    switch (c) {
        case '$': case '%': case '&': case '+': case '=': case '#': case '@': case '<': case '>':
        case '~': case '^': case '|': case '*':
            return true;
        default:
            return false;
    }
}

bool looks_numeric(std::string_view core) {
    bool digit = false;
    for (char c : core) {
        if (std::isdigit(static_cast<unsigned char>(c))) {
            digit = true;
        } else if (c != ',' && c != '.' && c != '-' && c != '/' && c != ':') {
            return false;
        }
    }
    return digit;
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() > suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

std::string_view to_string(PosTag tag) { return kNames[static_cast<std::size_t>(tag)]; }

PosTag pos_from_string(std::string_view s) {
    for (std::size_t i = 0; i < kNames.size(); ++i) {
        if (kNames[i] == s) return static_cast<PosTag>(i);
    }
    if (s == "CONJ") return PosTag::CCONJ;
    throw std::invalid_argument("unknown POS tag: " + std::string(s));
}

bool is_informative(PosTag tag) {
    switch (tag) {
        case PosTag::ADJ: case PosTag::NOUN: case PosTag::NUM: case PosTag::PROPN: case PosTag::SYM:
        case PosTag::VERB:
            return true;
        default:
            return false;
    }
}

std::vector<PosTag> RuleTagger::tag(std::span<const std::string> tokens) const {
    std::vector<PosTag> tags;
    tags.reserve(tokens.size());
    bool seen_do = false;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::string& tok = tokens[i];
        const std::string_view core = text::strip_punct(tok);
        if (core.empty()) {
            bool sym = std::any_of(tok.begin(), tok.end(), is_symbol_char);
            tags.push_back(sym ? PosTag::SYM : PosTag::PUNCT);
            continue;
        }
        const std::string lower = text::to_lower_ascii(core);
        PosTag t;
        if (looks_numeric(core)) {
            t = PosTag::NUM;
        } else if (auto it = closed_class().find(lower); it != closed_class().end() &&
                                                          !(i > 0 && std::isupper(static_cast<unsigned char>(core[0])) &&
                                                            it->second == PosTag::ADJ)) {
            t = it->second;
        } else if (i > 0 && std::isupper(static_cast<unsigned char>(core[0]))) {
            t = PosTag::PROPN;
        } else if (verb_forms().count(lower) != 0) {
            t = PosTag::VERB;
        } else if (seen_do && base_verbs().count(lower) != 0 && !tags.empty() && tags.back() != PosTag::DET &&
                   tags.back() != PosTag::ADJ) {
            t = PosTag::VERB;
        } else if (ends_with(lower, "ed") && ed_nouns().count(lower) == 0) {
            t = PosTag::VERB;
        } else if (ends_with(lower, "ing") && lower.size() > 4 && ing_nouns().count(lower) == 0) {
            t = PosTag::VERB;
        } else if (ends_with(lower, "est") && lower.size() > 5) {
            t = PosTag::ADJ;
        } else if (ends_with(lower, "ous") || ends_with(lower, "ful") || ends_with(lower, "ive")) {
            t = PosTag::ADJ;
        } else if (ends_with(lower, "ly") && lower.size() > 4) {
            t = PosTag::ADV;
        } else {
            t = PosTag::NOUN;
        }
        if (do_support().count(lower) != 0) seen_do = true;
        tags.push_back(t);
    }
    return tags;
}

const PosTagger& default_tagger() {
    static const RuleTagger tagger;
    return tagger;
}

std::vector<PosTag> tag_pos(std::span<const std::string> tokens, const PosTagger& tagger) {
    if (tokens.empty()) throw std::invalid_argument("tag_pos needs at least one token");
    auto tags = tagger.tag(tokens);
    if (tags.size() != tokens.size()) throw std::logic_error("tagger returned a tag count different from the token count");
    return tags;
}

}  // namespace refuel::pretrain
