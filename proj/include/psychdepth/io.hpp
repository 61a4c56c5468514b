#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

// File helpers shared by the corpus, report and service code.
namespace psychdepth::io {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file, fsyncs, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Parses one JSON value per non-blank line. Parse errors name the 1-based line.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<nlohmann::json>& records);

using CsvRow = std::vector<std::string>;

// RFC 4180: quoted fields may contain commas, doubled quotes and newlines.
std::vector<CsvRow> parse_csv(std::string_view text);
std::string csv_escape(std::string_view field);
std::string to_csv(const std::vector<CsvRow>& rows);

std::string sha256_hex(std::string_view data);

}  // namespace psychdepth::io
