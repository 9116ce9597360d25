#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace keyscore::io {

using Json = nlohmann::json;

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Calls `fn(line_number, object)` for every non-blank line. Invalid JSON is a
/// ParseError carrying the line number; exceptions from `fn` that are not
/// keyscore errors are rethrown as ParseError for the same line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const Json&)>& fn);

std::string to_jsonl(const std::vector<Json>& rows);

std::string sha256_hex(std::string_view bytes);

}  // namespace keyscore::io
