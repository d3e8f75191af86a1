#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "nowcast/nowcast.hpp"

namespace {

void print_error(const char* kind, const std::string& message) {
  nlohmann::json err;
  err["error"] = {{"kind", kind}, {"message", message}};
  std::cerr << err.dump() << "\n";
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const nowcast::ConfigError& e) {
    print_error("config", e.what());
    return 2;
  } catch (const nowcast::DataError& e) {
    print_error("data", e.what());
    return 3;
  } catch (const nowcast::InferenceError& e) {
    print_error("inference", e.what());
    return 4;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 4;
  }
}

nowcast::Date parse_cli_date(const std::string& value, const char* flag) {
  try {
    return nowcast::Date::parse(value);
  } catch (const nowcast::Error& e) {
    throw nowcast::ConfigError(std::string(flag) + ": " + e.what());
  }
}

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  int workers = 1;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd, bool config_required) {
    auto* opt = cmd->add_option("--config", config_path, "JSON configuration file");
    if (config_required) opt->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--workers", workers, "parallel worker budget")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", seed, "override the config seed");
  }

  nowcast::RunConfig load() const {
    nowcast::RunConfig cfg = nowcast::load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian nowcasting of delay-reported daily event counts"};
  app.require_subcommand(1);

  CommonArgs nowcast_args;
  std::string now_str;
  auto* cmd_nowcast =
      app.add_subcommand("nowcast", "fit one reporting date and write the nowcast");
  nowcast_args.attach(cmd_nowcast, true);
  cmd_nowcast->add_option("--now", now_str, "reporting date (YYYY-MM-DD)");

  CommonArgs evaluate_args;
  std::string dates_file;
  auto* cmd_evaluate =
      app.add_subcommand("evaluate", "retrospective evaluation over reporting dates");
  evaluate_args.attach(cmd_evaluate, true);
  cmd_evaluate->add_option("--dates", dates_file, "file with one reporting date per line");

  CommonArgs simulate_args;
  auto* cmd_simulate =
      app.add_subcommand("simulate", "generate a synthetic surveillance dataset");
  simulate_args.attach(cmd_simulate, true);

  CommonArgs lag_args;
  std::string target_path, indicator_path, form_str = "L";
  std::string window_start_str, window_end_str;
  int min_lag = 0, max_lag = 28, smoothing_width = 7;
  auto* cmd_lag = app.add_subcommand("select-lag", "pick an indicator lag by least squares");
  lag_args.attach(cmd_lag, false);
  cmd_lag->add_option("--target", target_path, "target series CSV (date,value)")->required();
  cmd_lag->add_option("--indicator", indicator_path, "indicator series CSV (date,value)")
      ->required();
  cmd_lag->add_option("--min-lag", min_lag, "smallest lag in the grid");
  cmd_lag->add_option("--max-lag", max_lag, "largest lag in the grid");
  cmd_lag->add_option("--window-start", window_start_str, "first regression date")->required();
  cmd_lag->add_option("--window-end", window_end_str, "last regression date")->required();
  cmd_lag->add_option("--form", form_str, "mean structure: L or RL");
  cmd_lag->add_option("--smoothing-width", smoothing_width, "rolling mean width in days");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("config", e.what());
    return 2;
  }

  if (cmd_nowcast->parsed()) {
    return run_guarded([&] {
      nowcast::RunConfig cfg = nowcast_args.load();
      std::optional<nowcast::Date> now = cfg.nowcast.now;
      if (!now_str.empty()) now = parse_cli_date(now_str, "--now");
      if (!now) throw nowcast::ConfigError("nowcast needs --now or the nowcast.now config key");
      nowcast::run_nowcast_command(cfg, *now, nowcast_args.out_dir, nowcast_args.workers);
      std::cout << "nowcast written to " << nowcast_args.out_dir << "\n";
      return 0;
    });
  }
  if (cmd_evaluate->parsed()) {
    return run_guarded([&] {
      nowcast::RunConfig cfg = evaluate_args.load();
      if (!dates_file.empty()) cfg.evaluate.dates_file = dates_file;
      nowcast::run_evaluate_command(cfg, evaluate_args.out_dir, evaluate_args.workers);
      std::cout << "evaluation written to " << evaluate_args.out_dir << "\n";
      return 0;
    });
  }
  if (cmd_simulate->parsed()) {
    return run_guarded([&] {
      nowcast::RunConfig cfg = simulate_args.load();
      nowcast::run_simulate_command(cfg, simulate_args.out_dir);
      std::cout << "simulation written to " << simulate_args.out_dir << "\n";
      return 0;
    });
  }
  return run_guarded([&] {
    const nowcast::Date window_start = parse_cli_date(window_start_str, "--window-start");
    const nowcast::Date window_end = parse_cli_date(window_end_str, "--window-end");
    const nowcast::LagModelForm form = nowcast::parse_lag_model_form(form_str);
    const nowcast::LagSelection selection = nowcast::select_lag_files(
        target_path, indicator_path, smoothing_width, min_lag, max_lag, window_start, window_end,
        form);
    std::printf("lag rss\n");
    for (const auto& [lag, rss] : selection.rss_table) {
      std::printf("%d %s\n", lag, nowcast::fmt_double(rss).c_str());
    }
    std::printf("selected lag: %d\n", selection.lag);
    if (cmd_lag->count("--out") > 0) {
      nowcast::ensure_output_dir(lag_args.out_dir);
      nowcast::CsvWriter csv(
          (std::filesystem::path(lag_args.out_dir) / "lag_selection.csv").string());
      csv.row({"lag", "rss"});
      for (const auto& [lag, rss] : selection.rss_table) {
        csv.row({std::to_string(lag), nowcast::fmt_double(rss)});
      }
    }
    return 0;
  });
}
