#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace degmon {

/// Minimal comma-separated table without quoting; fields must not contain
/// commas or newlines.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Reads a CSV and checks that its header equals `expected_header`.
CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& expected_header);

std::vector<std::string> split_csv_line(std::string_view line);

int parse_int(const std::string& s, std::string_view field);
std::uint64_t parse_u64(const std::string& s, std::string_view field);
double parse_double(const std::string& s, std::string_view field);

}  // namespace degmon
