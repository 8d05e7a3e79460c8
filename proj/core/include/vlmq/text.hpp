#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace vlmq::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

// Lowercase, trim, strip terminal punctuation, collapse internal whitespace.
// ASCII-only case folding; non-ASCII bytes pass through untouched.
std::string normalize_answer(std::string_view s);

// Whitespace-delimited word count.
std::size_t word_count(std::string_view s);

// Splits on \n and drops a trailing \r per line; a final newline ends the last line.
std::vector<std::string> split_lines(std::string_view s);

// First non-empty line, trimmed.
std::string first_nonempty_line(std::string_view s);

bool is_word_char(char c) noexcept;

}  // namespace vlmq::text
