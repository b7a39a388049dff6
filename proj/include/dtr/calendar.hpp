#pragma once

#include <charconv>
#include <chrono>
#include <string>
#include <string_view>

#include <fmt/format.h>

#include "dtr/error.hpp"

namespace dtr {

using Date = std::chrono::sys_days;
using Timestamp = std::chrono::sys_seconds;

namespace detail {

inline int parse_int(std::string_view text, std::string_view what) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw DataValidationError(fmt::format("cannot parse {} from '{}'", what, text));
  }
  return value;
}

}  // namespace detail

inline Date make_date(int y, unsigned m, unsigned d) {
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw DataValidationError(fmt::format("invalid date {}-{}-{}", y, m, d));
  return Date{ymd};
}

/// Parses `YYYY-MM-DD`.
inline Date parse_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw DataValidationError(fmt::format("expected YYYY-MM-DD, got '{}'", text));
  }
  return make_date(detail::parse_int(text.substr(0, 4), "year"),
                   static_cast<unsigned>(detail::parse_int(text.substr(5, 2), "month")),
                   static_cast<unsigned>(detail::parse_int(text.substr(8, 2), "day")));
}

inline std::string format_date(Date date) {
  std::chrono::year_month_day ymd{date};
  return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
}

/// Parses ISO-8601 `YYYY-MM-DDTHH:MM[:SS][Z|+HH:MM|-HH:MM]` (a space may replace `T`).
/// Offsets are applied so the result is UTC.
inline Timestamp parse_timestamp(std::string_view text) {
  if (text.size() < 16 || (text[10] != 'T' && text[10] != ' ') || text[13] != ':') {
    throw DataValidationError(fmt::format("expected ISO-8601 timestamp, got '{}'", text));
  }
  const Date date = parse_date(text.substr(0, 10));
  const int hh = detail::parse_int(text.substr(11, 2), "hour");
  const int mm = detail::parse_int(text.substr(14, 2), "minute");
  int ss = 0;
  std::string_view rest = text.substr(16);
  if (!rest.empty() && rest.front() == ':') {
    if (rest.size() < 3) throw DataValidationError(fmt::format("truncated seconds in '{}'", text));
    ss = detail::parse_int(rest.substr(1, 2), "second");
    rest = rest.substr(3);
  }
  if (hh > 23 || mm > 59 || ss > 60) {
    throw DataValidationError(fmt::format("time out of range in '{}'", text));
  }
  int offset_minutes = 0;
  if (rest == "Z" || rest.empty()) {
    offset_minutes = 0;
  } else if ((rest.front() == '+' || rest.front() == '-') && rest.size() == 6 && rest[3] == ':') {
    const int sign = rest.front() == '-' ? -1 : 1;
    offset_minutes = sign * (detail::parse_int(rest.substr(1, 2), "offset hour") * 60 +
                             detail::parse_int(rest.substr(4, 2), "offset minute"));
  } else {
    throw DataValidationError(fmt::format("unrecognised timezone suffix in '{}'", text));
  }
  using namespace std::chrono;
  return Timestamp{date} + hours{hh} + minutes{mm - offset_minutes} + seconds{ss};
}

inline std::string format_timestamp(Timestamp ts) {
  const Date date = std::chrono::floor<std::chrono::days>(ts);
  const auto secs = (ts - Timestamp{date}).count();
  return fmt::format("{}T{:02d}:{:02d}:{:02d}Z", format_date(date), secs / 3600, (secs / 60) % 60,
                     secs % 60);
}

/// Monday = 0 ... Sunday = 6.
inline int day_of_week(Date date) {
  return static_cast<int>(std::chrono::weekday{date}.iso_encoding()) - 1;
}

inline bool is_weekend(Date date) { return day_of_week(date) >= 5; }

}  // namespace dtr
