#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "nowcast/csv.hpp"
#include "nowcast/date.hpp"
#include "nowcast/scoring.hpp"

namespace nowcast {

struct ScoreRecord {
  Date reporting_date;
  int offset = 0;  // days between reporting date and event date
  double crps = 0.0;
  double logs = 0.0;
  double se = 0.0;  // squared error of the median
  bool in75 = false;
  bool in90 = false;
  bool in95 = false;
};

struct BetaSummary {
  std::string name;
  double mean = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

struct DateEvaluation {
  Date reporting_date;
  std::vector<ScoreRecord> records;  // offsets 0..max_delay, ascending
  double median_now = 0.0;           // offset-0 nowcast for Fig 6
  double lo95_now = 0.0;
  double hi95_now = 0.0;
  long truth_now = 0;
  std::vector<BetaSummary> betas;
  double max_rhat = 0.0;
  double min_ess = 0.0;
};

struct ScoreAggregates {
  double mean_crps = 0.0;  // mean over dates of the 7-day mean CRPS
  double mean_logs = 0.0;
  double rmse = 0.0;  // mean over dates of the per-date 7-day RMSE
  double cov75 = 0.0;
  double cov90 = 0.0;
  double cov95 = 0.0;
  std::vector<double> horizon_crps;  // mean by offset over all dates
  std::vector<double> horizon_logs;
};

struct ScoreReport {
  std::vector<DateEvaluation> dates;
  int scored_offsets = 7;  // offsets 0..6 enter the aggregate scores
  ScoreAggregates aggregates;
};

// Table 1 protocol: per reporting date average the scores of the last seven
// event days, then average across dates; squared errors aggregate to a
// per-date RMSE first; coverage pools every scored pair.
inline ScoreAggregates aggregate_scores(const std::vector<DateEvaluation>& dates,
                                        int scored_offsets) {
  if (dates.empty()) throw Error("aggregate_scores: no evaluated dates");
  ScoreAggregates agg;
  long pooled = 0, n75 = 0, n90 = 0, n95 = 0;
  std::vector<double> horizon_crps_sum, horizon_logs_sum;
  std::vector<long> horizon_n;
  for (const auto& date : dates) {
    double crps_sum = 0.0, logs_sum = 0.0, se_sum = 0.0;
    int used = 0;
    for (const auto& rec : date.records) {
      if (rec.offset < scored_offsets) {
        crps_sum += rec.crps;
        logs_sum += rec.logs;
        se_sum += rec.se;
        ++used;
        ++pooled;
        n75 += rec.in75 ? 1 : 0;
        n90 += rec.in90 ? 1 : 0;
        n95 += rec.in95 ? 1 : 0;
      }
      if (rec.offset >= static_cast<int>(horizon_n.size())) {
        horizon_crps_sum.resize(rec.offset + 1, 0.0);
        horizon_logs_sum.resize(rec.offset + 1, 0.0);
        horizon_n.resize(rec.offset + 1, 0);
      }
      horizon_crps_sum[rec.offset] += rec.crps;
      horizon_logs_sum[rec.offset] += rec.logs;
      ++horizon_n[rec.offset];
    }
    if (used == 0) throw Error("aggregate_scores: a date has no scored offsets");
    agg.mean_crps += crps_sum / used;
    agg.mean_logs += logs_sum / used;
    agg.rmse += std::sqrt(se_sum / used);
  }
  const double nd = static_cast<double>(dates.size());
  agg.mean_crps /= nd;
  agg.mean_logs /= nd;
  agg.rmse /= nd;
  agg.cov75 = static_cast<double>(n75) / pooled;
  agg.cov90 = static_cast<double>(n90) / pooled;
  agg.cov95 = static_cast<double>(n95) / pooled;
  agg.horizon_crps.resize(horizon_n.size());
  agg.horizon_logs.resize(horizon_n.size());
  for (size_t k = 0; k < horizon_n.size(); ++k) {
    agg.horizon_crps[k] = horizon_crps_sum[k] / horizon_n[k];
    agg.horizon_logs[k] = horizon_logs_sum[k] / horizon_n[k];
  }
  return agg;
}

inline void finalize_report(ScoreReport& report) {
  report.aggregates = aggregate_scores(report.dates, report.scored_offsets);
}

inline void write_scores_csv(const ScoreReport& report, const std::string& path) {
  CsvWriter out(path);
  out.row({"reporting_date", "offset", "crps", "logs", "se", "in75", "in90", "in95"});
  for (const auto& date : report.dates) {
    for (const auto& rec : date.records) {
      out.row({rec.reporting_date.iso(), std::to_string(rec.offset), fmt_double(rec.crps),
               fmt_double(rec.logs), fmt_double(rec.se), rec.in75 ? "1" : "0",
               rec.in90 ? "1" : "0", rec.in95 ? "1" : "0"});
    }
  }
}

inline nlohmann::json aggregate_to_json(const ScoreReport& report) {
  const auto& a = report.aggregates;
  nlohmann::json root;
  root["dates_evaluated"] = report.dates.size();
  root["scored_offsets"] = report.scored_offsets;
  root["crps"] = a.mean_crps;
  root["logs"] = a.mean_logs;
  root["rmse"] = a.rmse;
  root["coverage"] = {{"pi75", a.cov75}, {"pi90", a.cov90}, {"pi95", a.cov95}};
  root["horizon_crps"] = a.horizon_crps;
  root["horizon_logs"] = a.horizon_logs;
  return root;
}

// Fig 5 data: mean score by days since the reporting date.
inline void write_horizon_csv(const ScoreReport& report, const std::string& path) {
  CsvWriter out(path);
  out.row({"offset", "mean_crps", "mean_logs"});
  for (size_t k = 0; k < report.aggregates.horizon_crps.size(); ++k) {
    out.row({std::to_string(k), fmt_double(report.aggregates.horizon_crps[k]),
             fmt_double(report.aggregates.horizon_logs[k])});
  }
}

// Fig 6 data: same-day nowcast median and 95% interval per reporting date.
inline void write_nowcast_series_csv(const ScoreReport& report, const std::string& path) {
  CsvWriter out(path);
  out.row({"reporting_date", "truth", "median", "lo95", "hi95"});
  for (const auto& date : report.dates) {
    out.row({date.reporting_date.iso(), std::to_string(date.truth_now),
             fmt_double(date.median_now), fmt_double(date.lo95_now), fmt_double(date.hi95_now)});
  }
}

// Fig 7 data: rolling 7-reporting-date mean of the per-date average scores.
inline void write_rolling_scores_csv(const ScoreReport& report, const std::string& path) {
  std::vector<double> date_crps, date_logs;
  for (const auto& date : report.dates) {
    double crps_sum = 0.0, logs_sum = 0.0;
    int used = 0;
    for (const auto& rec : date.records) {
      if (rec.offset < report.scored_offsets) {
        crps_sum += rec.crps;
        logs_sum += rec.logs;
        ++used;
      }
    }
    date_crps.push_back(crps_sum / used);
    date_logs.push_back(logs_sum / used);
  }
  CsvWriter out(path);
  out.row({"reporting_date", "crps7", "logs7"});
  for (size_t i = 0; i < report.dates.size(); ++i) {
    const size_t from = i + 1 >= 7 ? i + 1 - 7 : 0;
    double c = 0.0, l = 0.0;
    for (size_t j = from; j <= i; ++j) {
      c += date_crps[j];
      l += date_logs[j];
    }
    const double span = static_cast<double>(i - from + 1);
    out.row({report.dates[i].reporting_date.iso(), fmt_double(c / span), fmt_double(l / span)});
  }
}

// Regression-coefficient trajectories across reporting dates.
inline void write_beta_trajectories_csv(const ScoreReport& report, const std::string& path) {
  CsvWriter out(path);
  out.row({"reporting_date", "coefficient", "mean", "q2.5", "q97.5"});
  for (const auto& date : report.dates) {
    for (const auto& beta : date.betas) {
      out.row({date.reporting_date.iso(), beta.name, fmt_double(beta.mean),
               fmt_double(beta.q025), fmt_double(beta.q975)});
    }
  }
}

}  // namespace nowcast
