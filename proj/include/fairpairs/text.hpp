#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fairpairs/common.hpp"

namespace fairpairs::text {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
std::string join(const std::vector<std::string> &parts, std::string_view sep);

// Letters, digits, hyphens and any non-ASCII byte count as word characters,
// so "non-European" does not contain the word "European".
bool is_word_char(char c);

bool starts_upper(std::string_view s);
std::string with_initial_case(std::string_view s, bool upper);

std::string sha256_hex(std::string_view data);
std::uint64_t fnv1a(std::string_view data);

std::string read_file(const std::filesystem::path &path);
void write_file(const std::filesystem::path &path, std::string_view contents);

// One JSON value per line; blank lines are skipped.
std::vector<json> read_jsonl(const std::filesystem::path &path);
std::string to_jsonl(const std::vector<json> &rows);

} // namespace fairpairs::text
