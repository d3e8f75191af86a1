#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "nowcast/config.hpp"
#include "nowcast/predict.hpp"
#include "nowcast/report.hpp"
#include "nowcast/simulate.hpp"

namespace nowcast {

inline ReportingCalendar load_config_calendar(const RunConfig& cfg) {
  if (!cfg.data.calendar_path.empty()) return load_calendar(cfg.data.calendar_path);
  return ReportingCalendar::weekdays_tue_fri();
}

inline std::vector<Snapshot> load_snapshot_store(const std::string& dir,
                                                 const ReportingCalendar& calendar) {
  if (dir.empty()) throw ConfigError("data.snapshot_dir is not set");
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("snapshot directory '" + dir + "' does not exist");
  }
  std::vector<Snapshot> store;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
    store.push_back(ingest_snapshot(entry.path(), calendar));
  }
  if (store.empty()) throw DataError("snapshot directory '" + dir + "' holds no .csv snapshots");
  std::sort(store.begin(), store.end(),
            [](const Snapshot& a, const Snapshot& b) { return a.report_date < b.report_date; });
  return store;
}

inline std::vector<IndicatorSeries> load_indicators(const RunConfig& cfg) {
  std::vector<IndicatorSeries> out;
  for (const auto& ind : cfg.indicators) {
    IndicatorSeries series;
    series.name = ind.name;
    series.values = read_series_csv(ind.path);
    series.smoothing_width = ind.smoothing_width;
    series.lag = ind.lag;
    series.transform = cfg.indicator_transform(ind);
    out.push_back(preprocess(series));
  }
  return out;
}

inline double quantile_sorted_doubles(std::vector<double> values, double level) {
  if (values.empty()) throw Error("quantile of empty vector");
  std::sort(values.begin(), values.end());
  size_t rank = static_cast<size_t>(std::ceil(level * static_cast<double>(values.size())));
  rank = std::min(std::max<size_t>(rank, 1), values.size());
  return values[rank - 1];
}

struct FitResult {
  std::unique_ptr<NowcastPosterior> posterior;
  PosteriorSamples samples;
  NowcastResult nowcast;
};

// Build the as-of-`now` triangle over the training window, fit the model and
// draw the posterior predictive. Seeds for sampling and prediction derive
// from (master seed, reporting date), so every reporting date is a
// self-contained reproducible unit.
inline FitResult fit_window(const RunConfig& cfg, const std::vector<Snapshot>& store,
                            const ReportingCalendar& calendar,
                            const std::vector<IndicatorSeries>& prepared, Date now,
                            int sampler_workers) {
  std::vector<Snapshot> upto;
  for (const auto& snap : store) {
    if (snap.report_date <= now) upto.push_back(snap);
  }
  if (upto.empty() || upto.back().report_date != now) {
    throw DataError("no snapshot for reporting date " + now.iso());
  }
  Date earliest = now;
  for (const auto& snap : upto) {
    if (!snap.counts.empty()) earliest = std::min(earliest, snap.counts.begin()->first);
  }
  const Date window_start = std::max(earliest, now - (cfg.window_length - 1));

  ReportingTriangle triangle =
      build_triangle(upto, now, cfg.max_delay, calendar, window_start);
  HazardDesign design =
      build_design(window_start, now, cfg.max_delay, cfg.breakpoint_spacing, calendar);
  EpiCurveModel epi = make_epi_model(cfg.variant, triangle, prepared);

  PosteriorOptions options;
  options.priors = cfg.priors;
  options.freeze_beta_at_zero = cfg.freeze_beta_at_zero;
  options.lambda_block_size = cfg.lambda_block_size;
  options.gamma_block_size = cfg.gamma_block_size;
  std::vector<std::string> names;
  for (const auto& ind : prepared) names.push_back(ind.name);

  FitResult result;
  result.posterior = std::make_unique<NowcastPosterior>(std::move(triangle), std::move(design),
                                                        std::move(epi), names, options);
  SamplerConfig sampler = cfg.sampler;
  sampler.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(now.days_since_epoch()), 11);
  sampler.workers = sampler_workers;
  result.samples = sample_posterior(*result.posterior, sampler);
  result.nowcast = predictive_draws(
      *result.posterior, result.samples,
      derive_seed(cfg.seed, static_cast<std::uint64_t>(now.days_since_epoch()), 13));
  return result;
}

inline std::vector<BetaSummary> summarize_betas(const NowcastPosterior& posterior,
                                                const PosteriorSamples& samples) {
  std::vector<BetaSummary> out;
  const auto& layout = posterior.layout();
  for (int j = 0; j < layout.n_beta; ++j) {
    const int p = layout.beta_offset() + j;
    std::vector<double> pooled = samples.pooled(p);
    BetaSummary s;
    s.name = samples.parameter_names[p];
    double sum = 0.0;
    for (double v : pooled) sum += v;
    s.mean = sum / static_cast<double>(pooled.size());
    s.q025 = quantile_sorted_doubles(pooled, 0.025);
    s.q975 = quantile_sorted_doubles(pooled, 0.975);
    out.push_back(std::move(s));
  }
  return out;
}

struct LambdaDiagnostics {
  double max_rhat = 0.0;
  double min_ess = std::numeric_limits<double>::infinity();
  int degenerate = 0;
};

inline LambdaDiagnostics lambda_diagnostics(const NowcastPosterior& posterior,
                                            const PosteriorSamples& samples) {
  LambdaDiagnostics out;
  if (samples.diagnostics.empty()) return out;
  for (int t = 0; t < posterior.layout().n_days; ++t) {
    const auto& d = samples.diagnostics[t];
    if (d.degenerate) {
      ++out.degenerate;
      continue;
    }
    out.max_rhat = std::max(out.max_rhat, d.rhat);
    out.min_ess = std::min(out.min_ess, d.ess);
  }
  if (!std::isfinite(out.min_ess)) out.min_ess = 0.0;
  return out;
}

inline void ensure_output_dir(const std::string& out_dir) {
  if (out_dir.empty()) throw ConfigError("output directory is not set");
  std::filesystem::create_directories(out_dir);
}

inline void write_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

inline void run_nowcast_command(const RunConfig& cfg, Date now, const std::string& out_dir,
                                int workers) {
  ensure_output_dir(out_dir);
  const ReportingCalendar calendar = load_config_calendar(cfg);
  const std::vector<Snapshot> store = load_snapshot_store(cfg.data.snapshot_dir, calendar);
  const std::vector<IndicatorSeries> prepared = load_indicators(cfg);
  FitResult fit = fit_window(cfg, store, calendar, prepared, now, workers);

  const std::filesystem::path out(out_dir);
  write_nowcast_csv(fit.nowcast, (out / "nowcast.csv").string());
  write_json_file(nowcast_to_json(fit.nowcast, cfg.output.emit_draws_json),
                  (out / "nowcast.json").string());
  write_delay_summary_csv(fit.nowcast, (out / "delay_summary.csv").string());
  write_cumulative_probability_csv(fit.nowcast, (out / "cumulative_probability.csv").string());
  if (cfg.variant != Variant::R && !cfg.freeze_beta_at_zero) {
    CsvWriter betas((out / "betas.csv").string());
    betas.row({"reporting_date", "coefficient", "mean", "q2.5", "q97.5"});
    for (const auto& b : summarize_betas(*fit.posterior, fit.samples)) {
      betas.row({now.iso(), b.name, fmt_double(b.mean), fmt_double(b.q025), fmt_double(b.q975)});
    }
  }
  const LambdaDiagnostics diag = lambda_diagnostics(*fit.posterior, fit.samples);
  nlohmann::json djson;
  djson["max_rhat_lambda"] = diag.max_rhat;
  djson["min_ess_lambda"] = diag.min_ess;
  djson["degenerate_lambda_parameters"] = diag.degenerate;
  djson["mean_accept_rate"] = fit.samples.mean_accept_rate();
  write_json_file(djson, (out / "diagnostics.json").string());
}

// Scores one fitted reporting date against the final-truth counts for
// offsets 0..max_delay.
inline DateEvaluation evaluate_one_date(const RunConfig& cfg, const FitResult& fit, Date now,
                                        const Snapshot& truth) {
  DateEvaluation ev;
  ev.reporting_date = now;
  const NowcastResult& nc = fit.nowcast;
  const int n = static_cast<int>(nc.dates.size());
  for (int offset = 0; offset <= cfg.max_delay && offset < n; ++offset) {
    const int t = n - 1 - offset;
    const DateNowcast& dn = nc.dates[t];
    const auto found = truth.counts.find(dn.event_date);
    if (found == truth.counts.end()) {
      throw DataError("truth snapshot has no entry for event date " + dn.event_date.iso());
    }
    const long truth_count = found->second;
    ScoreRecord rec;
    rec.reporting_date = now;
    rec.offset = offset;
    rec.crps = crps(dn.draws, truth_count);
    rec.logs = log_score(dn.draws, truth_count);
    const double median = dn.quantile(0.5);
    rec.se = (median - truth_count) * (median - truth_count);
    const double truth_val = static_cast<double>(truth_count);
    rec.in75 = dn.quantile(0.125) <= truth_val && truth_val <= dn.quantile(0.875);
    rec.in90 = dn.quantile(0.05) <= truth_val && truth_val <= dn.quantile(0.95);
    rec.in95 = dn.quantile(0.025) <= truth_val && truth_val <= dn.quantile(0.975);
    if (offset == 0) {
      ev.median_now = median;
      ev.lo95_now = dn.quantile(0.025);
      ev.hi95_now = dn.quantile(0.975);
      ev.truth_now = truth_count;
    }
    ev.records.push_back(rec);
  }
  ev.betas = summarize_betas(*fit.posterior, fit.samples);
  const LambdaDiagnostics diag = lambda_diagnostics(*fit.posterior, fit.samples);
  ev.max_rhat = diag.max_rhat;
  ev.min_ess = diag.min_ess;
  return ev;
}

inline ScoreReport retrospective_evaluate(const RunConfig& cfg,
                                          const std::vector<Snapshot>& store,
                                          const ReportingCalendar& calendar,
                                          const std::vector<IndicatorSeries>& prepared,
                                          const std::vector<Date>& reporting_dates,
                                          const Snapshot& truth, int workers) {
  if (reporting_dates.empty()) throw ConfigError("no reporting dates to evaluate");
  for (Date d : reporting_dates) {
    if (!(d < truth.report_date)) {
      throw DataError("truth snapshot (" + truth.report_date.iso() +
                      ") must be strictly later than reporting date " + d.iso());
    }
  }
  std::vector<Date> dates = reporting_dates;
  std::sort(dates.begin(), dates.end());

  ScoreReport report;
  report.dates.resize(dates.size());
  std::vector<std::exception_ptr> failures(dates.size());
  std::atomic<size_t> next{0};
  auto work = [&] {
    for (size_t i = next.fetch_add(1); i < dates.size(); i = next.fetch_add(1)) {
      try {
        FitResult fit = fit_window(cfg, store, calendar, prepared, dates[i], 1);
        report.dates[i] = evaluate_one_date(cfg, fit, dates[i], truth);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const int n_workers = std::min<int>(workers, static_cast<int>(dates.size()));
  if (n_workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& failure : failures) {
    if (failure) std::rethrow_exception(failure);
  }
  finalize_report(report);
  return report;
}

inline Snapshot load_truth_snapshot(const RunConfig& cfg, const std::vector<Snapshot>& store,
                                    const ReportingCalendar& calendar) {
  if (!cfg.data.truth_snapshot.empty()) {
    return ingest_snapshot(cfg.data.truth_snapshot, calendar);
  }
  return store.back();
}

inline std::vector<Date> evaluation_dates(const RunConfig& cfg) {
  std::vector<Date> dates = cfg.evaluate.dates;
  if (!cfg.evaluate.dates_file.empty()) {
    std::ifstream in(cfg.evaluate.dates_file);
    if (!in) throw DataError("cannot open dates file '" + cfg.evaluate.dates_file + "'");
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      dates.push_back(Date::parse(line));
    }
  }
  if (dates.empty()) throw ConfigError("evaluate needs dates (evaluate.dates or a dates file)");
  return dates;
}

inline void run_evaluate_command(const RunConfig& cfg, const std::string& out_dir, int workers) {
  ensure_output_dir(out_dir);
  const ReportingCalendar calendar = load_config_calendar(cfg);
  const std::vector<Snapshot> store = load_snapshot_store(cfg.data.snapshot_dir, calendar);
  const std::vector<IndicatorSeries> prepared = load_indicators(cfg);
  const Snapshot truth = load_truth_snapshot(cfg, store, calendar);
  const std::vector<Date> dates = evaluation_dates(cfg);
  const ScoreReport report =
      retrospective_evaluate(cfg, store, calendar, prepared, dates, truth, workers);

  const std::filesystem::path out(out_dir);
  write_scores_csv(report, (out / "scores.csv").string());
  write_json_file(aggregate_to_json(report), (out / "aggregate.json").string());
  write_horizon_csv(report, (out / "horizon.csv").string());
  write_nowcast_series_csv(report, (out / "nowcast_series.csv").string());
  write_rolling_scores_csv(report, (out / "rolling_scores.csv").string());
  if (cfg.variant != Variant::R && !cfg.freeze_beta_at_zero) {
    write_beta_trajectories_csv(report, (out / "beta_trajectories.csv").string());
  }
}

// Simulation settings assembled from the shared model fields plus the
// simulate section; indicator-driven variants read their covariates from the
// configured indicator files.
inline SimulationConfig simulation_config(const RunConfig& cfg) {
  SimulationConfig sim;
  sim.start = cfg.simulate.start;
  sim.n_days = cfg.simulate.n_days;
  sim.max_delay = cfg.max_delay;
  sim.breakpoint_spacing = cfg.breakpoint_spacing;
  sim.calendar = load_config_calendar(cfg);
  sim.variant = cfg.variant;
  sim.init_log_lambda = cfg.simulate.init_log_lambda;
  sim.sigma = cfg.simulate.sigma;
  sim.phi = cfg.simulate.phi;
  sim.gamma = cfg.simulate.gamma;
  sim.eta = cfg.simulate.eta;
  sim.beta = cfg.simulate.beta;
  sim.seed = cfg.seed;
  if (cfg.variant != Variant::R) {
    const std::vector<IndicatorSeries> prepared = load_indicators(cfg);
    sim.covariates = align_covariates(prepared, sim.start, sim.n_days);
  }
  return sim;
}

inline void run_simulate_command(const RunConfig& cfg, const std::string& out_dir) {
  ensure_output_dir(out_dir);
  const SimulationConfig sim_cfg = simulation_config(cfg);
  const SimulationResult sim = simulate_surveillance(sim_cfg);

  const std::filesystem::path out(out_dir);
  std::filesystem::create_directories(out / "snapshots");
  for (const auto& snap : sim.snapshots) write_snapshot_csv(out / "snapshots", snap);
  write_calendar((out / "calendar.csv").string(), sim_cfg.calendar);

  CsvWriter cells((out / "truth_cells.csv").string());
  cells.row({"event_date", "delay", "count"});
  for (int t = 0; t < sim.n_days; ++t) {
    for (int d = 0; d <= sim.max_delay; ++d) {
      cells.row({(sim.start + t).iso(), std::to_string(d), std::to_string(sim.cell(t, d))});
    }
  }
  CsvWriter lambda((out / "true_lambda.csv").string());
  lambda.row({"event_date", "lambda", "final_count"});
  for (int t = 0; t < sim.n_days; ++t) {
    lambda.row({(sim.start + t).iso(), fmt_double(sim.lambda[t]),
                std::to_string(sim.final_count(t))});
  }
  nlohmann::json params;
  params["sigma"] = sim.params.path.sigma;
  params["phi"] = sim.params.phi;
  params["gamma"] = sim.params.delay.gamma;
  params["eta"] = sim.params.delay.eta;
  params["beta"] = sim.params.path.beta;
  params["init_log_lambda"] = sim_cfg.init_log_lambda;
  params["variant"] = variant_name(sim_cfg.variant);
  write_json_file(params, (out / "params.json").string());
}

inline LagSelection select_lag_files(const std::string& target_path,
                                     const std::string& indicator_path, int smoothing_width,
                                     int lag_min, int lag_max, Date window_start, Date window_end,
                                     LagModelForm form) {
  const DatedSeries target = read_series_csv(target_path);
  IndicatorSeries indicator;
  indicator.name = std::filesystem::path(indicator_path).stem().string();
  indicator.values = read_series_csv(indicator_path);
  indicator.smoothing_width = smoothing_width;
  const DatedSeries smoothed_target = smooth(target, smoothing_width);
  return select_lag(smoothed_target, indicator, lag_min, lag_max, window_start, window_end, form);
}

}  // namespace nowcast
