#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "nowcast/calendar.hpp"
#include "nowcast/delay.hpp"
#include "nowcast/epi.hpp"
#include "nowcast/rng.hpp"
#include "nowcast/triangle.hpp"

namespace nowcast {

struct SimulationConfig {
  Date start = Date::parse("2020-04-01");
  int n_days = 120;
  int max_delay = 35;
  int breakpoint_spacing = 14;
  ReportingCalendar calendar = ReportingCalendar::weekdays_tue_fri();
  Variant variant = Variant::R;
  double init_log_lambda = std::log(30.0);
  double sigma = 0.1;
  std::vector<double> beta;                     // L: intercept first; RL: one per indicator
  std::vector<std::vector<double>> covariates;  // [indicator][day], already transformed
  std::vector<double> gamma;                    // empty picks a front-loaded default
  std::vector<double> eta;                      // empty picks a weekday-only default
  double phi = 10.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_days < 2) throw ConfigError("simulate: n_days must be >= 2");
    if (max_delay < 1) throw ConfigError("simulate: max_delay must be >= 1");
    if (!(sigma >= 0.0)) throw ConfigError("simulate: sigma must be >= 0");
    if (!(phi > 0.0)) throw ConfigError("simulate: phi must be > 0");
    const size_t want_beta =
        variant == Variant::L ? covariates.size() + 1 : (variant == Variant::RL ? covariates.size() : 0);
    if (beta.size() != want_beta) {
      throw ConfigError(strf("simulate: variant %s with %zu indicators needs %zu beta values, got %zu",
                             variant_name(variant), covariates.size(), want_beta,
                             beta.size()));
    }
    if (variant != Variant::R && covariates.empty()) {
      throw ConfigError("simulate: indicator-driven variants need covariates");
    }
    for (const auto& series : covariates) {
      if (static_cast<int>(series.size()) != n_days) {
        throw ConfigError("simulate: covariate series length must equal n_days");
      }
    }
    if (!gamma.empty() && static_cast<int>(gamma.size()) != max_delay) {
      throw ConfigError("simulate: gamma must have max_delay entries");
    }
  }
};

struct SimulationResult {
  Date start;
  int n_days = 0;
  int max_delay = 0;
  std::vector<long> cells;  // [n_days][max_delay+1] ground-truth increments
  std::vector<Snapshot> snapshots;
  std::vector<double> lambda;
  ParameterState params;
  HazardDesign design;

  long cell(int t, int d) const {
    return cells[static_cast<size_t>(t) * (max_delay + 1) + d];
  }

  long final_count(int t) const {
    long sum = 0;
    for (int d = 0; d <= max_delay; ++d) sum += cell(t, d);
    return sum;
  }

  Date last_report_date() const { return snapshots.back().report_date; }
};

inline std::vector<double> default_sim_gamma(int max_delay) {
  std::vector<double> g(max_delay);
  for (int d = 0; d < max_delay; ++d) g[d] = std::max(0.5 - 0.3 * d, -4.0);
  return g;
}

inline std::vector<double> default_sim_eta(const HazardDesign& design) {
  std::vector<double> eta(design.n_cols(), 0.0);
  const double weekday[6] = {0.25, 0.0, -0.3, 0.15, -0.5, -1.0};
  for (int j = 0; j < design.n_weekday_cols(); ++j) eta[design.n_time_cols() + j] = weekday[j];
  return eta;
}

// Draws a full synthetic surveillance history from the fitted model family:
// a log-lambda path per variant, hazard-based delay probabilities, NB cell
// counts, and the cumulative snapshot files an authority would have
// published on each reporting day.
inline SimulationResult simulate_surveillance(const SimulationConfig& config) {
  config.validate();
  const int n = config.n_days;
  const int D = config.max_delay;
  const Date last_event = config.start + (n - 1);
  RngStream rng(derive_seed(config.seed, 0, 7));

  SimulationResult result;
  result.start = config.start;
  result.n_days = n;
  result.max_delay = D;
  result.design =
      build_design(config.start, last_event, D, config.breakpoint_spacing, config.calendar);

  std::vector<double> log_lambda(n);
  for (int t = 0; t < n; ++t) {
    double mean = 0.0;
    switch (config.variant) {
      case Variant::R:
        mean = t == 0 ? config.init_log_lambda : log_lambda[t - 1];
        break;
      case Variant::L:
        mean = config.beta[0];
        for (size_t i = 0; i < config.covariates.size(); ++i) {
          mean += config.beta[i + 1] * config.covariates[i][t];
        }
        break;
      case Variant::RL:
        if (t == 0) {
          mean = config.init_log_lambda;
        } else {
          mean = log_lambda[t - 1];
          for (size_t i = 0; i < config.covariates.size(); ++i) {
            mean += config.beta[i] * config.covariates[i][t];
          }
        }
        break;
    }
    log_lambda[t] = mean + config.sigma * rng.normal();
  }

  result.params.path.log_lambda = log_lambda;
  result.params.path.sigma = config.sigma;
  result.params.path.beta = config.beta;
  result.params.delay.gamma = config.gamma.empty() ? default_sim_gamma(D) : config.gamma;
  result.params.delay.eta = config.eta.empty() ? default_sim_eta(result.design) : config.eta;
  if (static_cast<int>(result.params.delay.eta.size()) != result.design.n_cols()) {
    throw ConfigError(strf("simulate: eta must have %d entries for this design",
                           result.design.n_cols()));
  }
  result.params.phi = config.phi;
  result.lambda.resize(n);
  for (int t = 0; t < n; ++t) result.lambda[t] = std::exp(log_lambda[t]);

  result.cells.assign(static_cast<size_t>(n) * (D + 1), 0);
  for (int t = 0; t < n; ++t) {
    const std::vector<double> h =
        hazards(result.params.delay, result.design, config.calendar, config.start + t);
    const std::vector<double> p = delay_probabilities(h);
    for (int d = 0; d <= D; ++d) {
      if (d < D && !config.calendar.is_reporting_day(config.start + t + d)) continue;
      result.cells[static_cast<size_t>(t) * (D + 1) + d] =
          rng.negative_binomial(result.lambda[t] * p[d], config.phi);
    }
  }

  // visibility calendar: cell (t, d<D) becomes public on day t+d; the folded
  // cell on the first reporting day at or after t+D
  std::map<Date, std::map<Date, long>> visible;  // day -> event date -> increment
  for (int t = 0; t < n; ++t) {
    const Date event = config.start + t;
    for (int d = 0; d <= D; ++d) {
      const long y = result.cell(t, d);
      if (y == 0) continue;
      Date day = event + d;
      if (d == D && !config.calendar.is_reporting_day(day)) {
        day = config.calendar.next_reporting_day(day);
      }
      visible[day][event] += y;
    }
  }

  Date first_report = config.start;
  if (!config.calendar.is_reporting_day(first_report)) {
    first_report = config.calendar.next_reporting_day(first_report);
  }
  Date final_report = last_event + D;
  if (!config.calendar.is_reporting_day(final_report)) {
    final_report = config.calendar.next_reporting_day(final_report);
  }

  std::map<Date, long> cumulative;
  auto vis_it = visible.begin();
  for (Date r = first_report; r <= final_report; r = r + 1) {
    while (vis_it != visible.end() && vis_it->first <= r) {
      for (const auto& [event, y] : vis_it->second) cumulative[event] += y;
      ++vis_it;
    }
    if (!config.calendar.is_reporting_day(r)) continue;
    Snapshot snap;
    snap.report_date = r;
    const Date upto = std::min(r, last_event);
    for (Date event = config.start; event <= upto; event = event + 1) {
      const auto found = cumulative.find(event);
      snap.counts[event] = found == cumulative.end() ? 0 : found->second;
    }
    result.snapshots.push_back(std::move(snap));
  }
  return result;
}

}  // namespace nowcast
