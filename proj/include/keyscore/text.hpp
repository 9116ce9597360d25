#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace keyscore::text {

std::string trim(std::string_view s);

/// Trim and replace every internal whitespace run with one space.
std::string collapse_whitespace(std::string_view s);

/// Canonical form used for deduplication and overlap comparison:
/// lowercase, collapsed whitespace, trimmed, terminal punctuation stripped.
std::string normalize_text(std::string_view s);

/// Whitespace tokens of normalize_text(s).
std::vector<std::string> words(std::string_view s);

}  // namespace keyscore::text
