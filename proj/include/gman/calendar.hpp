#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include "gman/error.hpp"

namespace gman {

inline constexpr int kDefaultStepsPerDay = 288;  // 5-minute steps

/// Calendar position of one time step. Monday is day 0.
struct TimeSlot {
  int day_of_week = 0;
  int time_of_day = 0;

  friend bool operator==(const TimeSlot&, const TimeSlot&) = default;
};

inline TimeSlot next_slot(TimeSlot s, int steps_per_day) {
  if (++s.time_of_day == steps_per_day) {
    s.time_of_day = 0;
    s.day_of_week = (s.day_of_week + 1) % 7;
  }
  return s;
}

inline void validate_slot(const TimeSlot& s, int steps_per_day) {
  if (s.day_of_week < 0 || s.day_of_week >= 7)
    throw InputError("day-of-week " + std::to_string(s.day_of_week) + " outside [0,7)");
  if (s.time_of_day < 0 || s.time_of_day >= steps_per_day)
    throw InputError("time-of-day " + std::to_string(s.time_of_day) + " outside [0," + std::to_string(steps_per_day) + ")");
}

/// Days since 1970-01-01 for a proleptic Gregorian date.
constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

constexpr void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
}

/// Parses `YYYY-MM-DDTHH:MM[:SS]` (a space may replace `T`) into seconds
/// since the Unix epoch, UTC.
inline std::int64_t parse_iso8601(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  int consumed = 0;
  const int fields = std::sscanf(text.c_str(), "%4d-%2d-%2d%c%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &consumed);
  if (fields < 6 || (sep != 'T' && sep != ' ')) throw InputError("malformed timestamp '" + text + "'");
  std::string rest = text.substr(static_cast<std::size_t>(consumed));
  if (!rest.empty() && rest[0] == ':') {
    int used = 0;
    if (std::sscanf(rest.c_str(), ":%2d%n", &s, &used) != 1) throw InputError("malformed timestamp '" + text + "'");
    rest = rest.substr(static_cast<std::size_t>(used));
  }
  if (!rest.empty() && rest != "Z") throw InputError("malformed timestamp '" + text + "'");
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s > 59)
    throw InputError("timestamp out of range '" + text + "'");
  return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 + h * 3600 + mi * 60 + s;
}

inline std::string format_iso8601(std::int64_t epoch_seconds) {
  std::int64_t days = epoch_seconds / 86400;
  std::int64_t rem = epoch_seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  std::int64_t y = 0;
  unsigned m = 0, d = 0;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lld", static_cast<long long>(y), m, d,
                static_cast<long long>(rem / 3600), static_cast<long long>(rem % 3600 / 60),
                static_cast<long long>(rem % 60));
  return buf;
}

/// Calendar slot of an epoch timestamp for a day split into `steps_per_day`.
inline TimeSlot slot_of(std::int64_t epoch_seconds, int steps_per_day) {
  std::int64_t days = epoch_seconds / 86400;
  std::int64_t rem = epoch_seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  // 1970-01-01 was a Thursday (day 3 with Monday = 0).
  const int dow = static_cast<int>(((days % 7) + 7 + 3) % 7);
  const std::int64_t step_seconds = 86400 / steps_per_day;
  return {dow, static_cast<int>(rem / step_seconds)};
}

}  // namespace gman
