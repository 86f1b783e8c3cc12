#pragma once

// ISO-8601 UTC timestamps <-> epoch seconds.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "vslfog/error.hpp"

namespace vslfog {

/// Accepts "YYYY-MM-DDTHH:MM:SS" with an optional "Z" or "+00:00" suffix
/// (a space may replace the 'T'). Other offsets are rejected: all data is UTC.
inline std::int64_t parse_utc(std::string_view s) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0, used = 0;
  const std::string buf(s);
  char sep = 0;
  if (std::sscanf(buf.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &sec,
                  &used) != 7 ||
      (sep != 'T' && sep != ' '))
    throw ParseError("bad timestamp '" + buf + "'");
  const std::string_view rest = s.substr(static_cast<std::size_t>(used));
  if (!(rest.empty() || rest == "Z" || rest == "+00:00"))
    throw ParseError("timestamp '" + buf + "' is not UTC");
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) throw ParseError("bad timestamp '" + buf + "'");
  const auto tp = sys_days{ymd} + hours{h} + minutes{mi} + seconds{sec};
  return tp.time_since_epoch().count();
}

inline std::string format_utc(std::int64_t t) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{t}};
  const auto day_point = floor<days>(tp);
  const year_month_day ymd{day_point};
  const hh_mm_ss hms{tp - day_point};
  char out[64];
  std::snprintf(out, sizeof out, "%04d-%02u-%02uT%02ld:%02ld:%02ldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                static_cast<long>(hms.seconds().count()));
  return out;
}

}  // namespace vslfog
