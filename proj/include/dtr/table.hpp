#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dtr/error.hpp"
#include "dtr/io.hpp"

namespace dtr {

/// Dense row-major design matrix with one regression target per row. `keys` identify rows
/// independently of their position (used to make training order-invariant).
struct TrainingTable {
  std::vector<std::string> columns;
  std::vector<bool> categorical;  // per column
  std::vector<double> values;     // rows * columns
  std::vector<double> target;
  std::vector<std::uint64_t> keys;

  TrainingTable() = default;
  TrainingTable(std::vector<std::string> cols, std::vector<bool> cats)
      : columns(std::move(cols)), categorical(std::move(cats)) {
    if (categorical.empty()) categorical.assign(columns.size(), false);
    if (categorical.size() != columns.size()) throw ParameterError("categorical flags must match columns");
  }

  [[nodiscard]] std::size_t n_rows() const { return target.size(); }
  [[nodiscard]] std::size_t n_cols() const { return columns.size(); }
  [[nodiscard]] std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values).subspan(r * n_cols(), n_cols());
  }
  [[nodiscard]] double at(std::size_t r, std::size_t c) const { return values[r * n_cols() + c]; }

  void add_row(std::span<const double> x, double y, std::uint64_t key) {
    if (x.size() != n_cols()) throw ParameterError(fmt::format("row has {} values, table has {} columns", x.size(), n_cols()));
    values.insert(values.end(), x.begin(), x.end());
    target.push_back(y);
    keys.push_back(key);
  }

  void append(const TrainingTable& other) {
    if (other.columns != columns) throw ParameterError("cannot append tables with different schemas");
    values.insert(values.end(), other.values.begin(), other.values.end());
    target.insert(target.end(), other.target.begin(), other.target.end());
    keys.insert(keys.end(), other.keys.begin(), other.keys.end());
  }

  [[nodiscard]] std::size_t column_index(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (columns[i] == name) return i;
    }
    throw ParameterError(fmt::format("no column '{}'", name));
  }

  /// Copy restricted to `names`, in that order.
  [[nodiscard]] TrainingTable select(const std::vector<std::string>& names) const {
    std::vector<std::size_t> idx;
    std::vector<bool> cats;
    for (const auto& n : names) {
      idx.push_back(column_index(n));
      cats.push_back(categorical[idx.back()]);
    }
    TrainingTable out(names, cats);
    out.values.reserve(n_rows() * names.size());
    for (std::size_t r = 0; r < n_rows(); ++r) {
      for (auto c : idx) out.values.push_back(at(r, c));
    }
    out.target = target;
    out.keys = keys;
    return out;
  }

  [[nodiscard]] TrainingTable subset(std::span<const std::size_t> rows) const {
    TrainingTable out(columns, categorical);
    for (auto r : rows) out.add_row(row(r), target[r], keys[r]);
    return out;
  }

  [[nodiscard]] std::uint64_t schema_hash() const {
    std::string joined;
    for (std::size_t i = 0; i < columns.size(); ++i) joined += columns[i] + (categorical[i] ? ":cat;" : ";");
    return fnv1a(joined);
  }
};

}  // namespace dtr
