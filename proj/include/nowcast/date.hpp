#pragma once

#include <chrono>
#include <compare>
#include <cstdio>
#include <string>
#include <string_view>

#include "nowcast/common.hpp"

namespace nowcast {

// Calendar date stored as days since 1970-01-01. Arithmetic is in whole days.
class Date {
 public:
  Date() : days_(0) {}
  explicit Date(int days_since_epoch) : days_(days_since_epoch) {}

  static Date from_ymd(int year, unsigned month, unsigned day) {
    using namespace std::chrono;
    year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                       std::chrono::day{day}};
    if (!ymd.ok()) {
      throw DataError(strf("invalid calendar date %04d-%02u-%02u", year, month, day));
    }
    return Date(static_cast<int>(sys_days{ymd}.time_since_epoch().count()));
  }

  // Strict ISO-8601: exactly "YYYY-MM-DD".
  static Date parse(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') {
      throw DataError(strf("malformed date '%.*s' (expected YYYY-MM-DD)",
                           static_cast<int>(s.size()), s.data()));
    }
    auto digits = [&](size_t pos, size_t n) {
      int v = 0;
      for (size_t i = pos; i < pos + n; ++i) {
        if (s[i] < '0' || s[i] > '9') {
          throw DataError(strf("malformed date '%.*s' (expected YYYY-MM-DD)",
                               static_cast<int>(s.size()), s.data()));
        }
        v = v * 10 + (s[i] - '0');
      }
      return v;
    };
    return from_ymd(digits(0, 4), static_cast<unsigned>(digits(5, 2)),
                    static_cast<unsigned>(digits(8, 2)));
  }

  std::string iso() const {
    using namespace std::chrono;
    year_month_day ymd{sys_days{days{days_}}};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return std::string(buf);
  }

  // 1 = Monday .. 7 = Sunday.
  int iso_weekday() const {
    using namespace std::chrono;
    return static_cast<int>(weekday{sys_days{days{days_}}}.iso_encoding());
  }

  int days_since_epoch() const { return days_; }

  Date operator+(int d) const { return Date(days_ + d); }
  Date operator-(int d) const { return Date(days_ - d); }
  int operator-(Date other) const { return days_ - other.days_; }
  Date& operator++() {
    ++days_;
    return *this;
  }
  auto operator<=>(const Date&) const = default;

 private:
  int days_;
};

inline const char* weekday_abbrev(int iso_weekday) {
  static const char* names[] = {"Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"};
  return names[iso_weekday - 1];
}

// Accepts three-letter English abbreviations, case-insensitive.
inline int parse_weekday(std::string_view s) {
  if (s.size() >= 3) {
    auto low = [](char c) { return static_cast<char>(c | 0x20); };
    char a = low(s[0]), b = low(s[1]), c = low(s[2]);
    if (a == 'm' && b == 'o' && c == 'n') return 1;
    if (a == 't' && b == 'u' && c == 'e') return 2;
    if (a == 'w' && b == 'e' && c == 'd') return 3;
    if (a == 't' && b == 'h' && c == 'u') return 4;
    if (a == 'f' && b == 'r' && c == 'i') return 5;
    if (a == 's' && b == 'a' && c == 't') return 6;
    if (a == 's' && b == 'u' && c == 'n') return 7;
  }
  throw DataError(strf("unknown weekday '%.*s'", static_cast<int>(s.size()), s.data()));
}

}  // namespace nowcast
