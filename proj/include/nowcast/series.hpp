#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nowcast/csv.hpp"
#include "nowcast/date.hpp"

namespace nowcast {

using DatedSeries = std::map<Date, double>;

enum class Transform { raw, log, relative_weekly_change };

inline Transform parse_transform(const std::string& s) {
  if (s == "raw") return Transform::raw;
  if (s == "log") return Transform::log;
  if (s == "relative_weekly_change") return Transform::relative_weekly_change;
  throw ConfigError("unknown transform '" + s + "'");
}

inline const char* transform_name(Transform t) {
  switch (t) {
    case Transform::raw: return "raw";
    case Transform::log: return "log";
    default: return "relative_weekly_change";
  }
}

// A covariate stream: raw daily values plus the preprocessing recipe that
// turns it into a model covariate (smooth -> transform -> lag).
struct IndicatorSeries {
  std::string name;
  DatedSeries values;
  int smoothing_width = 7;
  int lag = 0;
  Transform transform = Transform::raw;
};

// Indicator file: CSV with header `date,value`.
inline DatedSeries read_series_csv(const std::filesystem::path& path) {
  CsvTable table = read_csv(path);
  expect_header(table, {"date", "value"});
  DatedSeries out;
  for (const auto& row : table.rows) {
    const std::string ctx = strf("%s:%d", table.path.c_str(), row.line_no);
    if (row.fields.size() != 2) throw DataError(ctx + ": expected 2 fields");
    Date d = Date::parse(row.fields[0]);
    if (out.contains(d)) throw DataError(ctx + ": duplicate date " + d.iso());
    out[d] = parse_double(row.fields[1], ctx);
  }
  return out;
}

inline void write_series_csv(const std::filesystem::path& path, const DatedSeries& s) {
  CsvWriter w(path);
  w.row({"date", "value"});
  for (const auto& [d, v] : s) w.row({d.iso(), fmt_double(v)});
}

// Centered rolling average of odd width. Dates whose window is incomplete
// (missing any raw value) are dropped.
inline DatedSeries smooth(const DatedSeries& raw, int width) {
  if (width < 1 || width % 2 == 0) {
    throw ConfigError(strf("smoothing width must be odd and >= 1, got %d", width));
  }
  const int half = (width - 1) / 2;
  DatedSeries out;
  for (const auto& [d, _] : raw) {
    double sum = 0.0;
    bool complete = true;
    for (int k = -half; k <= half; ++k) {
      auto it = raw.find(d + k);
      if (it == raw.end()) {
        complete = false;
        break;
      }
      sum += it->second;
    }
    if (complete) out[d] = sum / width;
  }
  return out;
}

inline IndicatorSeries smooth(const IndicatorSeries& series) {
  IndicatorSeries out = series;
  out.values = smooth(series.values, series.smoothing_width);
  return out;
}

namespace detail {
// Series-wide continuity correction: if any value is exactly zero, add 0.5
// to every value before taking logs.
inline DatedSeries apply_zero_offset(const DatedSeries& s) {
  bool has_zero = false;
  for (const auto& [_, v] : s) has_zero = has_zero || v == 0.0;
  if (!has_zero) return s;
  DatedSeries out;
  for (const auto& [d, v] : s) out[d] = v + 0.5;
  return out;
}
}  // namespace detail

inline DatedSeries apply_transform(const DatedSeries& values, Transform transform,
                                   const std::string& name = "") {
  const std::string label = name.empty() ? "series" : name;
  if (transform == Transform::raw) return values;
  DatedSeries offset = detail::apply_zero_offset(values);
  for (const auto& [d, v] : offset) {
    if (v <= 0.0) {
      throw DataError(strf("%s: non-positive value %g at %s after zero-offset rule",
                           label.c_str(), v, d.iso().c_str()));
    }
  }
  DatedSeries out;
  if (transform == Transform::log) {
    for (const auto& [d, v] : offset) out[d] = std::log(v);
  } else {
    for (const auto& [d, v] : offset) {
      auto prev = offset.find(d - 7);
      if (prev != offset.end()) out[d] = std::log(v / prev->second);
    }
  }
  return out;
}

inline IndicatorSeries apply_transform(const IndicatorSeries& series) {
  IndicatorSeries out = series;
  out.values = apply_transform(series.values, series.transform, series.name);
  return out;
}

// Fully preprocessed covariate stream: smoothed, transformed, ready for
// lagged lookup m(t) = x(t - lag).
inline IndicatorSeries preprocess(const IndicatorSeries& series) {
  return apply_transform(smooth(series));
}

struct LagSelection {
  int lag = 0;
  // (lag, residual sum of squares), one entry per grid point in order.
  std::vector<std::pair<int, double>> rss_table;
};

enum class LagModelForm { L, RL };

inline LagModelForm parse_lag_model_form(const std::string& s) {
  if (s == "L") return LagModelForm::L;
  if (s == "RL") return LagModelForm::RL;
  throw ConfigError("unknown lag model form '" + s + "' (expected L or RL)");
}

// Pre-fit lag selection: ordinary least squares of the model-form mean
// structure over the fit window, for every lag in the grid. Form L regresses
// log target on an intercept plus the log-transformed indicator; form RL
// regresses the day-over-day difference of log target on the indicator's
// relative weekly change, without an intercept. Ties break toward the
// smaller lag.
inline LagSelection select_lag(const DatedSeries& target, const IndicatorSeries& indicator,
                               int lag_min, int lag_max, Date window_start, Date window_end,
                               LagModelForm form) {
  if (lag_min > lag_max) throw ConfigError("empty lag grid");
  if (lag_min < 0) throw ConfigError("lags must be >= 0");
  if (window_start > window_end) throw ConfigError("empty lag-selection window");

  IndicatorSeries prepared = indicator;
  prepared.transform =
      form == LagModelForm::L ? Transform::log : Transform::relative_weekly_change;
  const DatedSeries x = apply_transform(smooth(prepared.values, prepared.smoothing_width),
                                        prepared.transform, prepared.name);

  // log of the target over the window it is actually read on, with the same
  // series-wide zero-offset rule as the indicators.
  DatedSeries target_window;
  for (Date d = window_start - 1; d <= window_end; ++d) {
    auto it = target.find(d);
    if (it != target.end()) target_window[d] = it->second;
  }
  const DatedSeries y = apply_transform(target_window, Transform::log, "lag-selection target");

  LagSelection result;
  bool have_best = false;
  double best_rss = 0.0;
  for (int lag = lag_min; lag <= lag_max; ++lag) {
    // Gather the regression sample for this lag.
    std::vector<double> ys, xs;
    for (Date t = window_start; t <= window_end; ++t) {
      auto yt = y.find(t);
      auto xt = x.find(t - lag);
      if (yt == y.end() || xt == x.end()) {
        throw DataError(strf("insufficient overlap at lag %d: missing data for %s", lag,
                             (yt == y.end() ? t : t - lag).iso().c_str()));
      }
      if (form == LagModelForm::L) {
        ys.push_back(yt->second);
        xs.push_back(xt->second);
      } else {
        auto yprev = y.find(t - 1);
        if (yprev == y.end()) {
          throw DataError(strf("insufficient overlap at lag %d: missing target for %s", lag,
                               (t - 1).iso().c_str()));
        }
        ys.push_back(yt->second - yprev->second);
        xs.push_back(xt->second);
      }
    }
    const size_t n = ys.size();
    if (n < 2) throw DataError(strf("insufficient overlap at lag %d", lag));

    double rss = 0.0;
    if (form == LagModelForm::L) {
      // y = a + b x
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      for (size_t i = 0; i < n; ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
      }
      double det = n * sxx - sx * sx;
      double b = det != 0.0 ? (n * sxy - sx * sy) / det : 0.0;
      double a = (sy - b * sx) / n;
      for (size_t i = 0; i < n; ++i) {
        double r = ys[i] - a - b * xs[i];
        rss += r * r;
      }
    } else {
      // y = b x, no intercept
      double sxx = 0, sxy = 0;
      for (size_t i = 0; i < n; ++i) {
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
      }
      double b = sxx != 0.0 ? sxy / sxx : 0.0;
      for (size_t i = 0; i < n; ++i) {
        double r = ys[i] - b * xs[i];
        rss += r * r;
      }
    }
    result.rss_table.emplace_back(lag, rss);
    if (!have_best || rss < best_rss) {
      have_best = true;
      best_rss = rss;
      result.lag = lag;
    }
  }
  return result;
}

}  // namespace nowcast
