#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nowcast/csv.hpp"
#include "nowcast/mcmc.hpp"
#include "nowcast/posterior.hpp"

namespace nowcast {

// Nearest-rank empirical quantile: the element at 1-based rank ceil(level * S)
// of the sorted sample.
inline double nearest_rank_quantile(std::span<const long> sorted_draws, double level) {
  if (sorted_draws.empty()) throw Error("quantile of empty draw vector");
  if (!(level > 0.0) || !(level < 1.0)) {
    throw ConfigError(strf("quantile level %g outside (0, 1)", level));
  }
  const size_t s = sorted_draws.size();
  size_t rank = static_cast<size_t>(std::ceil(level * static_cast<double>(s)));
  if (rank < 1) rank = 1;
  if (rank > s) rank = s;
  return static_cast<double>(sorted_draws[rank - 1]);
}

struct DateNowcast {
  Date event_date;
  long observed_partial = 0;
  std::vector<long> draws;         // total count per posterior draw, sorted ascending
  std::vector<double> delay_days;  // delay quantiles at 5% / 50% / 95%

  double quantile(double level) const { return nearest_rank_quantile(draws, level); }

  double mean() const {
    double sum = 0.0;
    for (long v : draws) sum += static_cast<double>(v);
    return sum / static_cast<double>(draws.size());
  }
};

struct NowcastResult {
  Date now;
  std::vector<DateNowcast> dates;
  std::vector<std::vector<double>> mean_cum_prob;  // [t][d], posterior mean

  std::map<double, double> quantiles(int t, const std::vector<double>& levels) const {
    std::map<double, double> out;
    for (double level : levels) out[level] = dates[t].quantile(level);
    return out;
  }
};

// For every posterior draw, complete the unobserved non-structural cells of
// each event date with NB draws and add them to the observed partial sum.
// Draw j reads only the substream derived from (seed, j), so results do not
// depend on evaluation order.
inline NowcastResult predictive_draws(const NowcastPosterior& posterior,
                                      const PosteriorSamples& samples, std::uint64_t seed) {
  if (samples.n_params != posterior.dim()) {
    throw Error(strf("posterior samples have %d parameters but the model has %d",
                     samples.n_params, posterior.dim()));
  }
  const ReportingTriangle& tri = posterior.triangle();
  const int n = tri.n_days();
  const int D = tri.max_delay;
  const int total = samples.total_draws();
  if (total == 0) throw Error("no posterior draws");

  NowcastResult result;
  result.now = tri.now;
  result.dates.resize(n);
  result.mean_cum_prob.assign(n, std::vector<double>(D + 1, 0.0));
  for (int t = 0; t < n; ++t) {
    result.dates[t].event_date = tri.date(t);
    result.dates[t].observed_partial = tri.observed_partial(t);
    result.dates[t].draws.assign(total, 0);
  }

  const auto& layout = posterior.layout();
  for (int c = 0; c < samples.n_chains; ++c) {
    for (int i = 0; i < samples.n_iters; ++i) {
      const int j = c * samples.n_iters + i;
      RngStream rng(derive_seed(seed, static_cast<std::uint64_t>(j) + 1, 3));
      std::span<const double> theta = samples.draw(c, i);
      const double phi = std::exp(theta[layout.log_phi_index()]);
      for (int t = 0; t < n; ++t) {
        const std::vector<double> p = posterior.delay_prob_row(theta, t);
        auto& cum = result.mean_cum_prob[t];
        double acc = 0.0;
        for (int d = 0; d <= D; ++d) {
          acc += p[d];
          cum[d] += acc;
        }
        long drawn = result.dates[t].observed_partial;
        const double lambda = std::exp(theta[t]);
        for (int d : posterior.predictive_cells(t)) {
          drawn += rng.negative_binomial(lambda * p[d], phi);
        }
        result.dates[t].draws[j] = drawn;
      }
    }
  }

  const std::vector<double> levels = {0.05, 0.5, 0.95};
  for (int t = 0; t < n; ++t) {
    auto& cum = result.mean_cum_prob[t];
    for (double& v : cum) v /= static_cast<double>(total);
    for (double level : levels) {
      result.dates[t].delay_days.push_back(static_cast<double>(delay_quantile(cum, level)));
    }
    std::sort(result.dates[t].draws.begin(), result.dates[t].draws.end());
  }
  return result;
}

inline void write_nowcast_csv(const NowcastResult& result, const std::string& path) {
  CsvWriter out(path);
  out.row({"event_date", "observed", "q2.5", "q25", "q50", "q75", "q97.5", "mean"});
  for (const auto& d : result.dates) {
    out.row({d.event_date.iso(), std::to_string(d.observed_partial),
             fmt_double(d.quantile(0.025)), fmt_double(d.quantile(0.25)),
             fmt_double(d.quantile(0.5)), fmt_double(d.quantile(0.75)),
             fmt_double(d.quantile(0.975)), fmt_double(d.mean())});
  }
}

inline void write_delay_summary_csv(const NowcastResult& result, const std::string& path) {
  CsvWriter out(path);
  out.row({"event_date", "delay_q5", "delay_q50", "delay_q95"});
  for (const auto& d : result.dates) {
    out.row({d.event_date.iso(), fmt_double(d.delay_days[0]), fmt_double(d.delay_days[1]),
             fmt_double(d.delay_days[2])});
  }
}

inline void write_cumulative_probability_csv(const NowcastResult& result,
                                             const std::string& path) {
  CsvWriter out(path);
  out.row({"event_date", "delay", "cumulative_probability"});
  for (size_t t = 0; t < result.dates.size(); ++t) {
    const auto& cum = result.mean_cum_prob[t];
    for (size_t d = 0; d < cum.size(); ++d) {
      out.row({result.dates[t].event_date.iso(), std::to_string(d), fmt_double(cum[d])});
    }
  }
}

inline nlohmann::json nowcast_to_json(const NowcastResult& result, bool include_draws) {
  nlohmann::json root;
  root["now"] = result.now.iso();
  nlohmann::json dates = nlohmann::json::array();
  for (const auto& d : result.dates) {
    nlohmann::json entry;
    entry["event_date"] = d.event_date.iso();
    entry["observed"] = d.observed_partial;
    entry["mean"] = d.mean();
    entry["quantiles"] = {{"q2.5", d.quantile(0.025)}, {"q25", d.quantile(0.25)},
                          {"q50", d.quantile(0.5)},    {"q75", d.quantile(0.75)},
                          {"q97.5", d.quantile(0.975)}};
    entry["delay_days"] = {{"q5", d.delay_days[0]},
                           {"q50", d.delay_days[1]},
                           {"q95", d.delay_days[2]}};
    if (include_draws) entry["draws"] = d.draws;
    dates.push_back(std::move(entry));
  }
  root["dates"] = std::move(dates);
  return root;
}

}  // namespace nowcast
