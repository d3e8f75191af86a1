#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nowcast/calendar.hpp"
#include "nowcast/csv.hpp"
#include "nowcast/date.hpp"

namespace nowcast {

// One published report: cumulative counts per event date as known on the
// report date.
struct Snapshot {
  Date report_date;
  std::map<Date, long> counts;

  bool operator==(const Snapshot&) const = default;
};

// Snapshot file: CSV with header `event_date,cumulative_count`; the filename
// stem (YYYY-MM-DD.csv) is the report date.
inline Snapshot ingest_snapshot(const std::filesystem::path& path,
                                const ReportingCalendar& calendar) {
  Snapshot snap;
  snap.report_date = Date::parse(path.stem().string());
  if (!calendar.is_reporting_day(snap.report_date)) {
    throw DataError(strf("%s: report date %s is not a reporting day", path.string().c_str(),
                         snap.report_date.iso().c_str()));
  }
  CsvTable table = read_csv(path);
  expect_header(table, {"event_date", "cumulative_count"});
  for (const auto& row : table.rows) {
    const std::string ctx = strf("%s:%d", table.path.c_str(), row.line_no);
    if (row.fields.size() != 2) throw DataError(ctx + ": expected 2 fields");
    Date event_date = Date::parse(row.fields[0]);
    long count = parse_long(row.fields[1], ctx);
    if (count < 0) throw DataError(ctx + ": negative count " + row.fields[1]);
    if (event_date > snap.report_date) {
      throw DataError(strf("%s: event after report date (%s > %s)", ctx.c_str(),
                           event_date.iso().c_str(), snap.report_date.iso().c_str()));
    }
    if (snap.counts.contains(event_date)) {
      throw DataError(ctx + ": duplicate event_date " + event_date.iso());
    }
    snap.counts[event_date] = count;
  }
  return snap;
}

inline void write_snapshot_csv(const std::filesystem::path& dir, const Snapshot& snap) {
  CsvWriter w(dir / (snap.report_date.iso() + ".csv"));
  w.row({"event_date", "cumulative_count"});
  for (const auto& [d, c] : snap.counts) w.row({d.iso(), std::to_string(c)});
}

// Incremental counts n[t][d]: events of date t first appearing in the report
// published d days later, with delays beyond max_delay folded into the last
// column. Cells are laid out row-major over (event day, delay).
struct ReportingTriangle {
  Date start;     // first event date covered
  Date now;       // T, the report date the triangle is built for
  int max_delay;  // D
  ReportingCalendar calendar;
  std::vector<long> cells;  // n_days() * (max_delay + 1)
  std::vector<std::string> warnings;

  int n_days() const { return now - start + 1; }
  Date date(int t_idx) const { return start + t_idx; }
  int index(Date t) const { return t - start; }

  long& cell(int t_idx, int d) { return cells[static_cast<size_t>(t_idx) * (max_delay + 1) + d]; }
  long cell(int t_idx, int d) const {
    return cells[static_cast<size_t>(t_idx) * (max_delay + 1) + d];
  }

  // A cell is observed once its report day has passed.
  bool observed(int t_idx, int d) const { return (date(t_idx) + d) <= now; }

  // Non-reporting report days force the count to zero. The fold-in column
  // d == max_delay is exempt: it absorbs reports of any later day.
  bool structural_zero(int t_idx, int d) const {
    return d < max_delay && !calendar.is_reporting_day(date(t_idx) + d);
  }

  long observed_partial(int t_idx) const {
    long sum = 0;
    for (int d = 0; d <= max_delay; ++d) {
      if (observed(t_idx, d)) sum += cell(t_idx, d);
    }
    return sum;
  }

  long row_total(int t_idx) const {
    long sum = 0;
    for (int d = 0; d <= max_delay; ++d) sum += cell(t_idx, d);
    return sum;
  }

  // Restrict to the last `window_days` event dates.
  ReportingTriangle tail(int window_days) const {
    if (window_days >= n_days()) return *this;
    ReportingTriangle out;
    out.start = now - (window_days - 1);
    out.now = now;
    out.max_delay = max_delay;
    out.calendar = calendar;
    const int skip = out.start - start;
    out.cells.assign(cells.begin() + static_cast<size_t>(skip) * (max_delay + 1), cells.end());
    out.warnings = warnings;
    return out;
  }
};

// Diff consecutive snapshots into incremental cells. Negative increments
// (downward data corrections) are clamped at zero with a warning and the
// surplus is taken out of the fold-in cell when it has enough mass.
inline ReportingTriangle build_triangle(const std::vector<Snapshot>& snapshots, Date now,
                                        int max_delay, const ReportingCalendar& calendar,
                                        std::optional<Date> window_start = std::nullopt) {
  if (snapshots.empty()) throw DataError("build_triangle: no snapshots");
  if (max_delay < 1) throw ConfigError("max_delay must be >= 1");
  if (!calendar.is_reporting_day(now)) {
    throw DataError("build_triangle: now (" + now.iso() + ") is not a reporting day");
  }
  for (size_t i = 0; i < snapshots.size(); ++i) {
    if (i > 0 && !(snapshots[i - 1].report_date < snapshots[i].report_date)) {
      throw DataError("build_triangle: snapshots must be sorted by report date, without duplicates");
    }
    if (snapshots[i].report_date > now) {
      throw DataError("build_triangle: snapshot " + snapshots[i].report_date.iso() +
                      " is later than now " + now.iso());
    }
    if (!calendar.is_reporting_day(snapshots[i].report_date)) {
      throw DataError("build_triangle: snapshot date " + snapshots[i].report_date.iso() +
                      " is not a reporting day");
    }
  }

  ReportingTriangle tri;
  tri.now = now;
  tri.max_delay = max_delay;
  tri.calendar = calendar;
  if (window_start) {
    tri.start = *window_start;
  } else {
    Date earliest = now;
    for (const auto& s : snapshots) {
      if (!s.counts.empty()) earliest = std::min(earliest, s.counts.begin()->first);
    }
    tri.start = earliest;
  }
  if (tri.start > now) throw DataError("build_triangle: window start after now");
  tri.cells.assign(static_cast<size_t>(tri.n_days()) * (max_delay + 1), 0);

  std::map<Date, long> previous;  // cumulative count per event date at the prior snapshot
  for (const auto& snap : snapshots) {
    for (const auto& [event_date, cum] : snap.counts) {
      long& prev = previous[event_date];
      const long inc = cum - prev;
      prev = cum;
      if (event_date < tri.start || event_date > now) continue;
      const int t = tri.index(event_date);
      const int d = std::min(snap.report_date - event_date, max_delay);
      if (inc >= 0) {
        tri.cell(t, d) += inc;
      } else {
        long deficit = -inc;
        long& fold = tri.cell(t, max_delay);
        const long absorbed = std::min(deficit, fold);
        fold -= absorbed;
        tri.warnings.push_back(strf(
            "negative increment %ld for event %s at report %s: clamped, %ld absorbed by fold-in cell",
            inc, event_date.iso().c_str(), snap.report_date.iso().c_str(), absorbed));
      }
    }
  }
  return tri;
}

}  // namespace nowcast
