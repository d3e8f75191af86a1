#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>
#include <vector>

#include "helpers.hpp"
#include "nowcast/triangle.hpp"

using namespace nowcast;
using Catch::Matchers::ContainsSubstring;

namespace {

const ReportingCalendar kCal = ReportingCalendar::weekdays_tue_fri();

// Labelled synthetic surveillance stream: new_counts[(event, report)] plus
// the cumulative snapshots a reporting agency would publish from it.
struct LabelledStream {
  std::map<std::pair<Date, Date>, long> new_counts;
  std::vector<Snapshot> snapshots;
};

LabelledStream random_stream(std::mt19937& gen, Date first_event, Date now, int max_extra_delay) {
  LabelledStream out;
  std::uniform_int_distribution<int> count_dist(0, 6);
  std::uniform_int_distribution<int> delay_dist(0, max_extra_delay);

  for (Date t = first_event; t <= now; ++t) {
    // A handful of report batches per event date, at random reporting days.
    for (int batch = 0; batch < 4; ++batch) {
      Date r = kCal.next_reporting_day(t + delay_dist(gen));
      if (r > now) continue;
      long c = count_dist(gen);
      if (c > 0) out.new_counts[{t, r}] += c;
    }
  }

  std::map<Date, long> cumulative;
  for (Date r = kCal.next_reporting_day(first_event); r <= now; r = kCal.next_reporting_day(r + 1)) {
    for (const auto& [key, c] : out.new_counts) {
      if (key.second == r) cumulative[key.first] += c;
    }
    Snapshot snap;
    snap.report_date = r;
    snap.counts = cumulative;
    out.snapshots.push_back(snap);
  }
  return out;
}

// The oracle: count labelled events directly into (t, folded d) cells.
std::map<std::pair<int, int>, long> direct_tabulation(const LabelledStream& stream, Date start,
                                                      Date now, int max_delay) {
  std::map<std::pair<int, int>, long> cells;
  for (const auto& [key, c] : stream.new_counts) {
    const auto& [t, r] = key;
    if (t < start || t > now || r > now) continue;
    int d = std::min(r - t, max_delay);
    cells[{t - start, d}] += c;
  }
  return cells;
}

}  // namespace

TEST_CASE("snapshot ingestion parses and validates", "[triangle]") {
  TempDir tmp;
  write_text(tmp.file("2020-12-04.csv"),
             "event_date,cumulative_count\n2020-12-01,5\n2020-12-02,3\n");
  Snapshot snap = ingest_snapshot(tmp.file("2020-12-04.csv"), kCal);
  REQUIRE(snap.report_date.iso() == "2020-12-04");
  REQUIRE(snap.counts.size() == 2);
  REQUIRE(snap.counts.at(Date::parse("2020-12-01")) == 5);
  REQUIRE(snap.counts.at(Date::parse("2020-12-02")) == 3);

  SECTION("event after report date") {
    write_text(tmp.file("2020-12-03.csv"), "event_date,cumulative_count\n2020-12-05,1\n");
    REQUIRE_THROWS_WITH(ingest_snapshot(tmp.file("2020-12-03.csv"), kCal),
                        ContainsSubstring("event after report date"));
  }

  SECTION("negative count names the line") {
    write_text(tmp.file("2020-12-02.csv"),
               "event_date,cumulative_count\n2020-12-01,4\n2020-12-02,-2\n");
    REQUIRE_THROWS_WITH(ingest_snapshot(tmp.file("2020-12-02.csv"), kCal),
                        ContainsSubstring("negative count") && ContainsSubstring(":3"));
  }

  SECTION("duplicate event date") {
    write_text(tmp.file("2020-12-01.csv"),
               "event_date,cumulative_count\n2020-11-30,1\n2020-11-30,2\n");
    REQUIRE_THROWS_WITH(ingest_snapshot(tmp.file("2020-12-01.csv"), kCal),
                        ContainsSubstring("duplicate event_date"));
  }

  SECTION("report date must be a reporting day") {
    write_text(tmp.file("2020-12-05.csv"), "event_date,cumulative_count\n2020-12-01,1\n");
    REQUIRE_THROWS_WITH(ingest_snapshot(tmp.file("2020-12-05.csv"), kCal),
                        ContainsSubstring("not a reporting day"));
  }

  SECTION("filename must be the report date") {
    write_text(tmp.file("latest.csv"), "event_date,cumulative_count\n2020-12-01,1\n");
    REQUIRE_THROWS_AS(ingest_snapshot(tmp.file("latest.csv"), kCal), DataError);
  }

  SECTION("wrong header") {
    write_text(tmp.file("2020-12-08.csv"), "date,count\n2020-12-01,1\n");
    REQUIRE_THROWS_WITH(ingest_snapshot(tmp.file("2020-12-08.csv"), kCal),
                        ContainsSubstring("expected header"));
  }
}

TEST_CASE("snapshot write/ingest round-trip", "[triangle]") {
  TempDir tmp;
  std::mt19937 gen(11);
  std::uniform_int_distribution<int> count_dist(0, 50);
  Snapshot snap;
  snap.report_date = Date::parse("2021-02-16");
  for (int i = 0; i < 30; ++i) {
    snap.counts[snap.report_date - 40 + i] = count_dist(gen);
  }
  write_snapshot_csv(tmp.path, snap);
  REQUIRE(ingest_snapshot(tmp.file("2021-02-16.csv"), kCal) == snap);
}

TEST_CASE("triangle geometry helpers", "[triangle]") {
  ReportingTriangle tri;
  tri.start = Date::parse("2020-04-01");
  tri.now = Date::parse("2020-04-14");  // a Tuesday
  tri.max_delay = 5;
  tri.calendar = kCal;
  tri.cells.assign(static_cast<size_t>(tri.n_days()) * 6, 0);

  REQUIRE(tri.n_days() == 14);
  REQUIRE(tri.date(0).iso() == "2020-04-01");
  REQUIRE(tri.index(Date::parse("2020-04-05")) == 4);

  // Observed exactly when t + d <= now.
  REQUIRE(tri.observed(9, 4));    // 2020-04-10 + 4 = 2020-04-14
  REQUIRE(!tri.observed(10, 4));  // 2020-04-11 + 4 = 2020-04-15
  REQUIRE(tri.observed(13, 0));

  // 2020-04-04 is a Saturday: delays landing on it are structural zeros,
  // except in the fold-in column, which absorbs later reports.
  REQUIRE(tri.structural_zero(0, 3));
  REQUIRE(!tri.structural_zero(0, 2));
  // 2020-04-06 + 5 = 2020-04-11 is a Saturday, but d == max_delay is exempt.
  REQUIRE(!tri.structural_zero(5, 5));

  tri.cell(2, 1) = 7;
  tri.cell(2, 4) = 3;
  REQUIRE(tri.row_total(2) == 10);
  REQUIRE(tri.observed_partial(2) == 10);
  tri.cell(12, 0) = 4;
  tri.cell(12, 3) = 9;  // unobserved: 2020-04-13 + 3 > now
  REQUIRE(tri.observed_partial(12) == 4);
  REQUIRE(tri.row_total(12) == 13);
}

TEST_CASE("identical consecutive snapshots yield zero increments", "[triangle]") {
  Snapshot a;
  a.report_date = Date::parse("2020-04-07");
  a.counts = {{Date::parse("2020-04-01"), 5}, {Date::parse("2020-04-02"), 3}};
  Snapshot b = a;
  b.report_date = Date::parse("2020-04-08");

  ReportingTriangle tri = build_triangle({a, b}, b.report_date, 10, kCal);
  // First snapshot deposits everything at its own delays; the second adds 0.
  REQUIRE(tri.cell(0, 6) == 5);
  REQUIRE(tri.cell(1, 5) == 3);
  REQUIRE(tri.cell(0, 7) == 0);
  REQUIRE(tri.cell(1, 6) == 0);
  REQUIRE(tri.row_total(0) == 5);
  REQUIRE(tri.row_total(1) == 3);
}

TEST_CASE("build_triangle matches direct tabulation on random streams", "[triangle][oracle]") {
  std::mt19937 gen(2024);
  for (int rep = 0; rep < 25; ++rep) {
    Date first_event = Date::parse("2020-04-01") + static_cast<int>(gen() % 7);
    Date now = kCal.next_reporting_day(first_event + 40 + static_cast<int>(gen() % 20));
    int max_delay = 4 + static_cast<int>(gen() % 10);

    LabelledStream stream = random_stream(gen, first_event, now, 25);
    ReportingTriangle tri = build_triangle(stream.snapshots, now, max_delay, kCal);

    Date start = tri.start;
    auto oracle = direct_tabulation(stream, start, now, max_delay);
    long oracle_total = 0;
    for (int t = 0; t < tri.n_days(); ++t) {
      for (int d = 0; d <= max_delay; ++d) {
        long expected = 0;
        auto it = oracle.find({t, d});
        if (it != oracle.end()) expected = it->second;
        INFO("rep " << rep << " t=" << t << " d=" << d);
        REQUIRE(tri.cell(t, d) == expected);
        oracle_total += expected;
      }
    }

    // Structural zeros hold everywhere outside the fold-in column.
    for (int t = 0; t < tri.n_days(); ++t) {
      for (int d = 0; d < max_delay; ++d) {
        if (!kCal.is_reporting_day(tri.date(t) + d)) REQUIRE(tri.cell(t, d) == 0);
      }
    }

    // Row completeness: fully observed rows reproduce the last cumulative.
    const Snapshot& last = stream.snapshots.back();
    for (int t = 0; t < tri.n_days(); ++t) {
      if (tri.date(t) + max_delay > now) continue;
      // Fold-in can capture mass beyond D only if nothing was reported later
      // than now anyway, which holds by construction here.
      long cum = 0;
      auto it = last.counts.find(tri.date(t));
      if (it != last.counts.end()) cum = it->second;
      REQUIRE(tri.row_total(t) == cum);
    }
    REQUIRE(tri.warnings.empty());
  }
}

TEST_CASE("long delays fold into the last column", "[triangle]") {
  Date t = Date::parse("2020-04-01");
  Date late_report = kCal.next_reporting_day(t + 40);
  Snapshot empty;
  empty.report_date = kCal.next_reporting_day(t);
  empty.counts = {{t, 0}};
  Snapshot late;
  late.report_date = late_report;
  late.counts = {{t, 1}};

  ReportingTriangle tri = build_triangle({empty, late}, late_report, 35, kCal);
  REQUIRE(tri.cell(0, 35) == 1);
  long elsewhere = 0;
  for (int d = 0; d < 35; ++d) elsewhere += tri.cell(0, d);
  REQUIRE(elsewhere == 0);
}

TEST_CASE("negative increments clamp and drain the fold-in cell", "[triangle]") {
  Date t = Date::parse("2020-04-01");
  Date r1 = kCal.next_reporting_day(t + 40);  // beyond max_delay: folds
  Date r2 = kCal.next_reporting_day(r1 + 1);

  Snapshot s1;
  s1.report_date = r1;
  s1.counts = {{t, 10}};
  Snapshot s2;
  s2.report_date = r2;
  s2.counts = {{t, 6}};  // downward correction of 4

  ReportingTriangle tri = build_triangle({s1, s2}, r2, 35, kCal);
  REQUIRE(tri.cell(0, 35) == 6);
  REQUIRE(tri.warnings.size() == 1);
  REQUIRE_THAT(tri.warnings[0], ContainsSubstring("negative increment"));

  SECTION("clamping alone when the fold-in cell is empty") {
    Snapshot a;
    a.report_date = kCal.next_reporting_day(t);
    a.counts = {{t, 5}};
    Snapshot b;
    b.report_date = kCal.next_reporting_day(a.report_date + 1);
    b.counts = {{t, 2}};
    ReportingTriangle tri2 = build_triangle({a, b}, b.report_date, 35, kCal);
    // The original 5 stays where it was reported; nothing goes negative.
    REQUIRE(tri2.row_total(0) == 5);
    for (int d = 0; d <= 35; ++d) REQUIRE(tri2.cell(0, d) >= 0);
    REQUIRE(tri2.warnings.size() == 1);
  }
}

TEST_CASE("build_triangle input validation", "[triangle]") {
  Snapshot snap;
  snap.report_date = Date::parse("2020-04-07");
  snap.counts = {{Date::parse("2020-04-01"), 2}};

  REQUIRE_THROWS_WITH(build_triangle({}, Date::parse("2020-04-07"), 35, kCal),
                      ContainsSubstring("no snapshots"));
  // 2020-04-11 is a Saturday.
  REQUIRE_THROWS_WITH(build_triangle({snap}, Date::parse("2020-04-11"), 35, kCal),
                      ContainsSubstring("not a reporting day"));
  REQUIRE_THROWS_AS(build_triangle({snap}, Date::parse("2020-04-07"), 0, kCal), ConfigError);

  Snapshot earlier;
  earlier.report_date = Date::parse("2020-04-08");
  earlier.counts = snap.counts;
  REQUIRE_THROWS_WITH(build_triangle({earlier, snap}, Date::parse("2020-04-08"), 35, kCal),
                      ContainsSubstring("sorted"));
  REQUIRE_THROWS_WITH(build_triangle({snap}, Date::parse("2020-03-31"), 35, kCal),
                      ContainsSubstring("later than now"));
}

TEST_CASE("window_start trims earlier events", "[triangle]") {
  std::mt19937 gen(5);
  LabelledStream stream = random_stream(gen, Date::parse("2020-04-01"),
                                        Date::parse("2020-05-29"), 10);
  Date now = Date::parse("2020-05-29");  // a Friday
  ReportingTriangle full = build_triangle(stream.snapshots, now, 7, kCal);
  Date win = Date::parse("2020-04-20");
  ReportingTriangle trimmed = build_triangle(stream.snapshots, now, 7, kCal, win);

  REQUIRE(trimmed.start == win);
  REQUIRE(trimmed.n_days() == now - win + 1);
  for (int t = 0; t < trimmed.n_days(); ++t) {
    for (int d = 0; d <= 7; ++d) {
      REQUIRE(trimmed.cell(t, d) == full.cell(full.index(win) + t, d));
    }
  }

  // tail() gives the same restriction.
  ReportingTriangle tail = full.tail(trimmed.n_days());
  REQUIRE(tail.start == win);
  REQUIRE(tail.cells == trimmed.cells);
}
