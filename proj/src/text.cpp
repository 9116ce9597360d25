#include "keyscore/text.hpp"

#include <cctype>

namespace keyscore::text {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_terminal_punct(char c) {
    switch (c) {
        case '.': case '!': case '?': case ',': case ';': case ':':
            return true;
        default:
            return false;
    }
}

}  // namespace

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending = false;
    for (char c : s) {
        if (is_space(c)) {
            pending = !out.empty();
            continue;
        }
        if (pending) out += ' ';
        pending = false;
        out += c;
    }
    return out;
}

std::string normalize_text(std::string_view s) {
    std::string out = collapse_whitespace(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    while (!out.empty() && (is_terminal_punct(out.back()) || is_space(out.back()))) out.pop_back();
    return out;
}

std::vector<std::string> words(std::string_view s) {
    std::vector<std::string> out;
    const std::string norm = normalize_text(s);
    std::size_t i = 0;
    while (i < norm.size()) {
        std::size_t j = norm.find(' ', i);
        if (j == std::string::npos) j = norm.size();
        if (j > i) out.emplace_back(norm.substr(i, j - i));
        i = j + 1;
    }
    return out;
}

}  // namespace keyscore::text
