#pragma once

#include <array>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>

#include "nowcast/csv.hpp"
#include "nowcast/date.hpp"

namespace nowcast {

// Which days reports are published on: a weekly weekday mask minus holidays.
struct ReportingCalendar {
  std::array<bool, 7> weekday_mask{};  // index 0 = Monday .. 6 = Sunday
  std::set<Date> holidays;

  bool is_reporting_day(Date d) const {
    return weekday_mask[d.iso_weekday() - 1] && !holidays.contains(d);
  }

  // First ISO weekday (Mon..Sun) enabled in the mask; used as the reference
  // level of the weekday contrasts in the delay model.
  int first_reporting_weekday() const {
    for (int w = 1; w <= 7; ++w) {
      if (weekday_mask[w - 1]) return w;
    }
    throw ConfigError("reporting calendar has no reporting weekdays");
  }

  Date next_reporting_day(Date from) const {
    Date d = from;
    for (int i = 0; i < 3700; ++i) {
      if (is_reporting_day(d)) return d;
      ++d;
    }
    throw DataError("no reporting day within 10 years after " + from.iso());
  }

  Date previous_reporting_day(Date from) const {
    Date d = from;
    for (int i = 0; i < 3700; ++i) {
      if (is_reporting_day(d)) return d;
      d = d - 1;
    }
    throw DataError("no reporting day within 10 years before " + from.iso());
  }

  // Tuesday to Friday, no holidays: the publication schedule of the Swedish
  // public health agency reports.
  static ReportingCalendar weekdays_tue_fri() {
    ReportingCalendar cal;
    cal.weekday_mask = {false, true, true, true, true, false, false};
    return cal;
  }

  static ReportingCalendar all_days() {
    ReportingCalendar cal;
    cal.weekday_mask.fill(true);
    return cal;
  }
};

// Calendar file format (CSV, no header, '#' comments allowed):
//   weekdays,Tue;Wed;Thu;Fri
//   holiday,2020-12-25
//   holiday,2021-01-01
// Exactly one weekdays line; holiday lines are optional.
inline ReportingCalendar load_calendar(const std::filesystem::path& path) {
  CsvTable table = read_csv(path, /*has_header=*/false);
  ReportingCalendar cal;
  bool saw_mask = false;
  for (const auto& row : table.rows) {
    const std::string ctx = strf("%s:%d", table.path.c_str(), row.line_no);
    if (row.fields.size() != 2) throw DataError(ctx + ": expected 'key,value'");
    const std::string& key = row.fields[0];
    if (key == "weekdays") {
      if (saw_mask) throw DataError(ctx + ": duplicate weekdays line");
      saw_mask = true;
      std::string token;
      std::istringstream ss(row.fields[1]);
      while (std::getline(ss, token, ';')) {
        token = detail::trim(token);
        if (token.empty()) continue;
        cal.weekday_mask[parse_weekday(token) - 1] = true;
      }
    } else if (key == "holiday") {
      cal.holidays.insert(Date::parse(row.fields[1]));
    } else {
      throw DataError(ctx + ": unknown key '" + key + "'");
    }
  }
  if (!saw_mask) throw DataError(table.path + ": missing weekdays line");
  cal.first_reporting_weekday();  // reject an all-empty mask
  return cal;
}

inline void write_calendar(const std::filesystem::path& path, const ReportingCalendar& cal) {
  CsvWriter w(path);
  std::string mask;
  for (int wd = 1; wd <= 7; ++wd) {
    if (cal.weekday_mask[wd - 1]) {
      if (!mask.empty()) mask += ";";
      mask += weekday_abbrev(wd);
    }
  }
  w.row({"weekdays", mask});
  for (Date h : cal.holidays) w.row({"holiday", h.iso()});
}

}  // namespace nowcast
