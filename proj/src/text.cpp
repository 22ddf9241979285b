#include "refuel/text.hpp"

#include <cctype>

namespace refuel::text {

namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_article(std::string_view w) { return w == "a" || w == "an" || w == "the"; }

}  // namespace

std::vector<std::string> split_whitespace(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) out.emplace_back(text.substr(start, i - start));
    }
    return out;
}

std::string join(const std::vector<std::string>& tokens, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.append(sep);
        out.append(tokens[i]);
    }
    return out;
}

std::string to_lower_ascii(std::string_view text) {
    std::string out(text);
    for (auto& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

bool is_punct_ascii(char c) {
    auto u = static_cast<unsigned char>(c);
    return u < 0x80 && std::ispunct(u);
}

std::string_view strip_punct(std::string_view token) {
    while (!token.empty() && is_punct_ascii(token.front())) token.remove_prefix(1);
    while (!token.empty() && is_punct_ascii(token.back())) token.remove_suffix(1);
    return token;
}

std::string normalize_answer(std::string_view text) {
    std::string lowered;
    lowered.reserve(text.size());
    for (char c : text) {
        if (is_punct_ascii(c)) continue;
        lowered.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
    }
    std::string out;
    out.reserve(lowered.size());
    for (const auto& tok : split_whitespace(lowered)) {
        if (is_article(tok)) continue;
        if (!out.empty()) out.push_back(' ');
        out.append(tok);
    }
    return out;
}

std::vector<std::string> normalized_tokens(std::string_view text) {
    return split_whitespace(normalize_answer(text));
}

}  // namespace refuel::text
