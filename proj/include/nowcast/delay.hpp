#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nowcast/calendar.hpp"
#include "nowcast/date.hpp"

namespace nowcast {

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Baseline logit hazards per delay plus covariate effects.
struct DelayParams {
  std::vector<double> gamma;  // length D
  std::vector<double> eta;    // length HazardDesign::n_cols()
};

// Covariates of the discrete-time hazard model: continuous piecewise-linear
// time effects with knots every `spacing` days counted back from `now`, and
// one-hot weekday contrasts of the report day t+d against the first
// reporting weekday of the calendar.
struct HazardDesign {
  Date window_start;
  Date now;
  int max_delay = 0;
  int spacing = 0;
  int reference_weekday = 2;       // ISO weekday of the contrast reference level
  std::vector<Date> knots;         // ascending, strictly inside the window
  std::vector<double> time_cols;   // [n_days][n_time_cols], row-major, standardized
  std::vector<int> weekday_col;    // per report day r in [start, now+D]: contrast col or -1

  int n_days() const { return now - window_start + 1; }
  int n_time_cols() const { return static_cast<int>(knots.size()) + 1; }
  static constexpr int n_weekday_cols() { return 6; }
  int n_cols() const { return n_time_cols() + n_weekday_cols(); }

  double time_col(int t_idx, int j) const {
    return time_cols[static_cast<size_t>(t_idx) * n_time_cols() + j];
  }

  // Contribution of the time covariates of event day t to the hazard logit.
  double time_dot(int t_idx, std::span<const double> eta) const {
    const int p = n_time_cols();
    double dot = 0.0;
    for (int j = 0; j < p; ++j) dot += time_col(t_idx, j) * eta[j];
    return dot;
  }

  // Contribution of the weekday contrast of report day t+d.
  double weekday_dot(int t_idx, int d, std::span<const double> eta) const {
    const int col = weekday_col[static_cast<size_t>(t_idx) + d];
    return col >= 0 ? eta[n_time_cols() + col] : 0.0;
  }

  // Full covariate row W[t][d]; used by tests and the gradient code.
  std::vector<double> row(int t_idx, int d) const {
    std::vector<double> w(n_cols(), 0.0);
    for (int j = 0; j < n_time_cols(); ++j) w[j] = time_col(t_idx, j);
    const int col = weekday_col[static_cast<size_t>(t_idx) + d];
    if (col >= 0) w[n_time_cols() + col] = 1.0;
    return w;
  }

  bool covers(Date t) const { return t >= window_start && t <= now; }

  std::vector<std::string> column_names() const {
    std::vector<std::string> names;
    names.push_back("time_linear");
    for (const Date& k : knots) names.push_back("time_hinge_" + k.iso());
    for (int w = 1; w <= 7; ++w) {
      if (w != reference_weekday) names.push_back(std::string("wd_") + weekday_abbrev(w));
    }
    return names;
  }
};

inline HazardDesign build_design(Date window_start, Date now, int max_delay, int spacing,
                                 const ReportingCalendar& calendar) {
  if (spacing < 1) throw ConfigError("breakpoint spacing must be >= 1");
  if (max_delay < 1) throw ConfigError("max_delay must be >= 1");
  const int n_days = now - window_start + 1;
  if (n_days < 2 || n_days < spacing) {
    throw ConfigError(strf("hazard design window of %d days is shorter than one %d-day segment",
                           n_days, spacing));
  }

  HazardDesign design;
  design.window_start = window_start;
  design.now = now;
  design.max_delay = max_delay;
  design.spacing = spacing;
  design.reference_weekday = calendar.first_reporting_weekday();

  for (Date knot = now - spacing; knot > window_start; knot = knot - spacing) {
    design.knots.push_back(knot);
  }
  std::reverse(design.knots.begin(), design.knots.end());

  const int p = design.n_time_cols();
  const double scale = static_cast<double>(n_days);
  design.time_cols.assign(static_cast<size_t>(n_days) * p, 0.0);
  for (int i = 0; i < n_days; ++i) {
    const Date t = window_start + i;
    design.time_cols[static_cast<size_t>(i) * p] = static_cast<double>(t - now) / scale;
    // Hinges ramp into the past so that every time covariate vanishes at
    // `now` and the gamma intercepts alone set the level of the freshest rows.
    for (size_t k = 0; k < design.knots.size(); ++k) {
      const int below = design.knots[k] - t;
      design.time_cols[static_cast<size_t>(i) * p + 1 + k] =
          below > 0 ? static_cast<double>(below) / scale : 0.0;
    }
  }

  design.weekday_col.assign(static_cast<size_t>(n_days) + max_delay, -1);
  for (int i = 0; i < n_days + max_delay; ++i) {
    const int wd = (window_start + i).iso_weekday();
    if (wd == design.reference_weekday) continue;
    // contrast columns in ISO weekday order, skipping the reference
    int col = wd < design.reference_weekday ? wd - 1 : wd - 2;
    design.weekday_col[i] = col;
  }
  return design;
}

// Discrete-time hazards for event day t: h[d] = logistic(gamma_d + W'eta)
// for d < D, forced to zero on non-reporting report days; h[D] = 1.
inline std::vector<double> hazards(const DelayParams& params, const HazardDesign& design,
                                   const ReportingCalendar& calendar, Date t) {
  if (!design.covers(t)) {
    throw DataError("hazards: event date " + t.iso() + " outside the design window");
  }
  const int t_idx = t - design.window_start;
  const int D = design.max_delay;
  std::vector<double> h(static_cast<size_t>(D) + 1);
  const double tdot = design.time_dot(t_idx, params.eta);
  for (int d = 0; d < D; ++d) {
    if (!calendar.is_reporting_day(t + d)) {
      h[d] = 0.0;
    } else {
      h[d] = logistic(params.gamma[d] + tdot + design.weekday_dot(t_idx, d, params.eta));
    }
  }
  h[D] = 1.0;
  return h;
}

// p[d] = h[d] * prod_{k<d} (1 - h[k]); sums to one when h[D] = 1.
inline std::vector<double> delay_probabilities(std::span<const double> h) {
  std::vector<double> p(h.size());
  double survival = 1.0;
  for (size_t d = 0; d < h.size(); ++d) {
    if (!(h[d] >= 0.0 && h[d] <= 1.0)) {
      throw DataError(strf("hazard out of [0,1] at delay %zu: %g", d, h[d]));
    }
    p[d] = h[d] * survival;
    survival *= 1.0 - h[d];
  }
  return p;
}

inline std::vector<double> cumulative_reporting_probability(std::span<const double> p) {
  std::vector<double> cum(p.size());
  double acc = 0.0;
  for (size_t d = 0; d < p.size(); ++d) {
    acc += p[d];
    cum[d] = acc;
  }
  return cum;
}

// First delay whose cumulative reporting probability reaches the level.
inline int delay_quantile(std::span<const double> cumulative, double level) {
  for (size_t d = 0; d < cumulative.size(); ++d) {
    if (cumulative[d] >= level) return static_cast<int>(d);
  }
  return static_cast<int>(cumulative.size()) - 1;
}

}  // namespace nowcast
