#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "dtr/error.hpp"

namespace dtr {

/// 64-bit FNV-1a. Stable across platforms; used for manifests, schema hashes and sub-seeds.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// splitmix64 finaliser, for deriving independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::uint64_t hash_file(const std::filesystem::path& path) { return fnv1a(read_file(path)); }

/// Writes via a sibling temporary file and rename, so readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", tmp.string()));
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(fmt::format("short write to '{}'", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

inline void require_artifact(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw MissingArtifactError(fmt::format("missing upstream artifact '{}'", path.string()));
  }
}

// Minimal CSV: comma separated, no quoting (none of the schemas carry commas in fields).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  [[nodiscard]] std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw DataValidationError(fmt::format("missing column '{}'", name));
  }
};

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.remove_suffix(1);
    while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
    out.emplace_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline CsvTable parse_csv(std::string_view text) {
  CsvTable table;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    auto line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    ++line_no;
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    auto fields = split_csv_line(line);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw DataValidationError(fmt::format("line {}: expected {} fields, found {}", line_no,
                                            table.header.size(), fields.size()));
    }
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(line_no);
  }
  return table;
}

inline CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_file(path)); }

inline void require_header(const CsvTable& table, const std::vector<std::string>& expected,
                           std::string_view what) {
  if (table.header != expected) {
    std::string got;
    for (const auto& h : table.header) got += (got.empty() ? "" : ",") + h;
    std::string want;
    for (const auto& h : expected) want += (want.empty() ? "" : ",") + h;
    throw DataValidationError(fmt::format("{} schema mismatch: expected '{}', got '{}'", what, want, got));
  }
}

inline double parse_double(std::string_view text, std::string_view what = "number") {
  // std::from_chars for double is not available on every supported toolchain.
  std::string owned(text);
  char* end = nullptr;
  const double v = std::strtod(owned.c_str(), &end);
  if (owned.empty() || end != owned.c_str() + owned.size()) {
    throw DataValidationError(fmt::format("cannot parse {} from '{}'", what, text));
  }
  return v;
}

/// Round-trippable double formatting.
inline std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) { row(header); }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) buf_ += ',';
      buf_ += fields[i];
    }
    buf_ += '\n';
  }

  [[nodiscard]] const std::string& str() const { return buf_; }
  void save(const std::filesystem::path& path) const { write_file_atomic(path, buf_); }

 private:
  std::string buf_;
};

}  // namespace dtr
