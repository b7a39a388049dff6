#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dtr/calendar.hpp"
#include "dtr/error.hpp"

namespace dtr {

inline constexpr std::chrono::minutes kSampleInterval{30};

using PhaseCurrents = std::array<double, 3>;

/// Half-hourly per-phase current magnitudes for one transformer. Timestamps mark the start of
/// each half-hour interval and are strictly increasing.
struct LoadSeries {
  std::string transformer_id;
  std::vector<Timestamp> timestamps;
  std::array<std::vector<double>, 3> phases;  // i_a, i_b, i_c in amperes
  std::vector<Timestamp> gaps;                // sample timestamps followed by a missing interval

  [[nodiscard]] std::size_t size() const { return timestamps.size(); }

  void push_back(Timestamp ts, const PhaseCurrents& currents) {
    timestamps.push_back(ts);
    for (int p = 0; p < 3; ++p) phases[p].push_back(currents[p]);
  }

  /// Index range [first, last) of samples with timestamps in [begin, end).
  [[nodiscard]] std::pair<std::size_t, std::size_t> range(Timestamp begin, Timestamp end) const {
    const auto lo = std::lower_bound(timestamps.begin(), timestamps.end(), begin);
    const auto hi = std::lower_bound(lo, timestamps.end(), end);
    return {static_cast<std::size_t>(lo - timestamps.begin()),
            static_cast<std::size_t>(hi - timestamps.begin())};
  }

  /// True when every half-hour slot in [begin, end) has a sample.
  [[nodiscard]] bool covers(Timestamp begin, Timestamp end) const {
    const auto [lo, hi] = range(begin, end);
    const auto expected = (end - begin) / kSampleInterval;
    if (static_cast<long long>(hi - lo) != static_cast<long long>(expected)) return false;
    return hi == lo || (timestamps[lo] == begin && timestamps[hi - 1] == end - kSampleInterval);
  }

  [[nodiscard]] std::span<const double> phase(int p, std::size_t lo, std::size_t hi) const {
    return std::span<const double>(phases[p]).subspan(lo, hi - lo);
  }
};

}  // namespace dtr
