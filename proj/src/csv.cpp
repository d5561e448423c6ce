#include "degmon/csv.hpp"

#include <charconv>
#include <fstream>

#include "degmon/error.hpp"

namespace degmon {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& expected_header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  table.header = split_csv_line(line);
  if (table.header != expected_header) throw FormatError("unexpected CSV header in " + path.string());
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != expected_header.size()) {
      throw FormatError("wrong field count in " + path.string() + ": " + line);
    }
    table.rows.push_back(std::move(fields));
  }
  return table;
}

namespace {

template <typename T>
T parse_number(const std::string& s, std::string_view field) {
  T value{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw FormatError("cannot parse field '" + std::string(field) + "' from '" + s + "'");
  }
  return value;
}

}  // namespace

int parse_int(const std::string& s, std::string_view field) { return parse_number<int>(s, field); }
std::uint64_t parse_u64(const std::string& s, std::string_view field) { return parse_number<std::uint64_t>(s, field); }
double parse_double(const std::string& s, std::string_view field) { return parse_number<double>(s, field); }

}  // namespace degmon
