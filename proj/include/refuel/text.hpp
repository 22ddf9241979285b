#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace refuel::text {

// Splits on ASCII whitespace; never yields empty tokens.
std::vector<std::string> split_whitespace(std::string_view text);

std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");

std::string to_lower_ascii(std::string_view text);

bool is_punct_ascii(char c);

// Token with leading/trailing ASCII punctuation removed.
std::string_view strip_punct(std::string_view token);

/// Standard open-domain QA answer normalization: lowercase, drop ASCII
/// punctuation, drop the articles "a", "an", "the", collapse whitespace.
/// Idempotent. Bytes >= 0x80 pass through untouched.
std::string normalize_answer(std::string_view text);

// split_whitespace(normalize_answer(text))
std::vector<std::string> normalized_tokens(std::string_view text);

}  // namespace refuel::text
