#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <json.hpp>

#include "nowcast/calendar.hpp"
#include "nowcast/date.hpp"
#include "nowcast/series.hpp"
#include "helpers.hpp"

using namespace nowcast;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string nowcaster_bin() {
  if (const char* env = std::getenv("NOWCASTER_BIN"); env && *env) return env;
  const std::string fallback = "build/nowcaster";
  if (std::filesystem::exists(fallback)) return fallback;
  throw std::runtime_error("set NOWCASTER_BIN to the nowcaster binary");
}

struct CmdResult {
  int exit_code = -1;
  std::string out;
  std::string err;

  nlohmann::json error_json() const { return nlohmann::json::parse(err); }
};

CmdResult run_cli(const std::string& args) {
  static std::atomic<int> counter{0};
  const auto base = std::filesystem::temp_directory_path() /
                    ("nowcaster_io_" + std::to_string(::getpid()) + "_" +
                     std::to_string(counter.fetch_add(1)));
  std::filesystem::create_directories(base);
  const auto out_path = base / "stdout";
  const auto err_path = base / "stderr";
  const std::string cmd =
      nowcaster_bin() + " " + args + " >" + out_path.string() + " 2>" + err_path.string();
  const int raw = std::system(cmd.c_str());
  CmdResult result;
  result.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  result.out = read_text(out_path);
  result.err = read_text(err_path);
  std::error_code ec;
  std::filesystem::remove_all(base, ec);
  return result;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  std::string text = read_text(path);
  size_t pos = 0;
  while (pos < text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (true) {
    size_t comma = line.find(',', pos);
    if (comma == std::string::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
}

// Shared scratch tree: one simulated dataset plus the configs the command
// tests point at. Built once per process through the real CLI.
struct CliWorld {
  TempDir dir;
  std::string sim_json;
  std::string sim_dir;
  std::string sim_dir2;
  std::string run_json;
  std::string eval_json;
  std::string target_csv;
  std::string indicator_csv;

  CliWorld() {
    CliWorld& w = *this;
    nlohmann::json sim;
    sim["window_length"] = 28;
    sim["max_delay"] = 7;
    sim["seed"] = 31;
    sim["simulate"] = {{"start", "2020-04-01"}, {"n_days", 42}, {"sigma", 0.05},
                       {"phi", 20.0},           {"init_log_lambda", 3.6888794541139363}};
    w.sim_json = w.dir.file("sim.json").string();
    write_text(w.sim_json, sim.dump(2));
    w.sim_dir = (w.dir.path / "sim").string();
    w.sim_dir2 = (w.dir.path / "sim2").string();

    for (const std::string& out : {w.sim_dir, w.sim_dir2}) {
      CmdResult r = run_cli("simulate --config " + w.sim_json + " --out " + out);
      if (r.exit_code != 0) {
        throw std::runtime_error("simulate failed while preparing CLI fixtures: " + r.err);
      }
    }

    nlohmann::json run;
    run["window_length"] = 28;
    run["max_delay"] = 7;
    run["seed"] = 5;
    run["sampler"] = {{"chains", 2}, {"warmup_iters", 150}, {"sampling_iters", 100}};
    run["data"] = {{"snapshot_dir", w.sim_dir + "/snapshots"}};
    w.run_json = w.dir.file("run.json").string();
    write_text(w.run_json, run.dump(2));

    nlohmann::json eval = run;
    eval["evaluate"] = {{"dates", nlohmann::json::array({"2020-05-05", "2020-05-08"})}};
    w.eval_json = w.dir.file("eval.json").string();
    write_text(w.eval_json, eval.dump(2));

    Date start = Date::parse("2020-03-01");
    DatedSeries target, indicator;
    for (int i = 0; i < 150; ++i) {
      double x = 4.0 + std::sin(i / 5.0) + 0.4 * std::cos(i / 11.3) + 0.2 * std::sin(i / 2.7);
      target[start + i] = std::exp(x);
      indicator[start + i - 4] = 8.0 * std::exp(x);
    }
    w.target_csv = w.dir.file("deaths.csv").string();
    w.indicator_csv = w.dir.file("icu.csv").string();
    write_series_csv(w.target_csv, target);
    write_series_csv(w.indicator_csv, indicator);
  }
};

const CliWorld& cli_world() {
  static const CliWorld world;
  return world;
}

}  // namespace

TEST_CASE("help is printed and parse failures exit with 2", "[cli]") {
  CmdResult help = run_cli("--help");
  REQUIRE(help.exit_code == 0);
  REQUIRE_THAT(help.out, ContainsSubstring("nowcast"));
  REQUIRE_THAT(help.out, ContainsSubstring("simulate"));
  REQUIRE_THAT(help.out, ContainsSubstring("select-lag"));

  CmdResult none = run_cli("");
  REQUIRE(none.exit_code == 2);
  REQUIRE(none.error_json()["error"]["kind"] == "config");

  CmdResult unknown = run_cli("frobnicate");
  REQUIRE(unknown.exit_code == 2);

  CmdResult bad_workers = run_cli("nowcast --config x.json --workers 0");
  REQUIRE(bad_workers.exit_code == 2);
  REQUIRE_THAT(bad_workers.error_json()["error"]["message"].get<std::string>(),
               ContainsSubstring("--workers"));
}

TEST_CASE("simulate writes a complete synthetic dataset", "[cli]") {
  const CliWorld& w = cli_world();
  const std::filesystem::path sim(w.sim_dir);
  REQUIRE(std::filesystem::is_directory(sim / "snapshots"));
  REQUIRE(std::filesystem::exists(sim / "calendar.csv"));
  REQUIRE(std::filesystem::exists(sim / "truth_cells.csv"));
  REQUIRE(std::filesystem::exists(sim / "true_lambda.csv"));
  REQUIRE(std::filesystem::exists(sim / "params.json"));

  nlohmann::json params = nlohmann::json::parse(read_text(sim / "params.json"));
  REQUIRE(params["sigma"] == 0.05);
  REQUIRE(params["phi"] == 20.0);
  REQUIRE(params["variant"] == "R");

  // One snapshot per reporting day from the first event through the final
  // report a full delay window later.
  const ReportingCalendar cal = ReportingCalendar::weekdays_tue_fri();
  int expected = 0;
  for (Date d = Date::parse("2020-04-01"); d <= Date::parse("2020-05-19"); d = d + 1) {
    if (cal.is_reporting_day(d)) ++expected;
  }
  int found = 0;
  for (const auto& entry : std::filesystem::directory_iterator(sim / "snapshots")) {
    if (entry.path().extension() == ".csv") ++found;
  }
  REQUIRE(found == expected);

  SECTION("simulation output is byte-for-byte reproducible") {
    const std::filesystem::path sim2(w.sim_dir2);
    REQUIRE(read_text(sim / "truth_cells.csv") == read_text(sim2 / "truth_cells.csv"));
    REQUIRE(read_text(sim / "params.json") == read_text(sim2 / "params.json"));
    REQUIRE(read_text(sim / "snapshots/2020-05-19.csv") ==
            read_text(sim2 / "snapshots/2020-05-19.csv"));
  }
}

TEST_CASE("nowcast command fits one date and writes its outputs", "[cli]") {
  const CliWorld& w = cli_world();
  TempDir out;
  const std::string out_a = (out.path / "a").string();
  CmdResult r = run_cli("nowcast --config " + w.run_json + " --now 2020-05-05 --out " + out_a);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE_THAT(r.out, ContainsSubstring("nowcast written to"));

  auto lines = read_lines(out_a + "/nowcast.csv");
  REQUIRE(lines[0] == "event_date,observed,q2.5,q25,q50,q75,q97.5,mean");
  REQUIRE(lines.size() == 29);  // 28-day window plus the header
  for (size_t i = 1; i < lines.size(); ++i) {
    auto fields = split_line(lines[i]);
    REQUIRE(fields.size() == 8);
    const double observed = std::stod(fields[1]);
    const double q025 = std::stod(fields[2]);
    const double q50 = std::stod(fields[4]);
    const double q975 = std::stod(fields[6]);
    REQUIRE(observed <= q025);  // completions only ever add counts
    REQUIRE(q025 <= q50);
    REQUIRE(q50 <= q975);
  }
  REQUIRE(split_line(lines.back())[0] == "2020-05-05");

  nlohmann::json js = nlohmann::json::parse(read_text(out_a + "/nowcast.json"));
  REQUIRE(js["now"] == "2020-05-05");
  REQUIRE(js["dates"].size() == 28);
  REQUIRE(!js["dates"][0].contains("draws"));

  REQUIRE(std::filesystem::exists(out_a + "/delay_summary.csv"));
  REQUIRE(std::filesystem::exists(out_a + "/cumulative_probability.csv"));
  REQUIRE(!std::filesystem::exists(out_a + "/betas.csv"));  // variant R has no betas

  nlohmann::json diag = nlohmann::json::parse(read_text(out_a + "/diagnostics.json"));
  REQUIRE(diag["max_rhat_lambda"].get<double>() > 0.0);
  REQUIRE(diag["min_ess_lambda"].get<double>() > 0.0);
  REQUIRE(diag["mean_accept_rate"].get<double>() > 0.0);

  SECTION("reruns are byte-identical, a new seed is not") {
    const std::string out_b = (out.path / "b").string();
    CmdResult again =
        run_cli("nowcast --config " + w.run_json + " --now 2020-05-05 --out " + out_b);
    REQUIRE(again.exit_code == 0);
    REQUIRE(read_text(out_a + "/nowcast.csv") == read_text(out_b + "/nowcast.csv"));
    REQUIRE(read_text(out_a + "/nowcast.json") == read_text(out_b + "/nowcast.json"));
    REQUIRE(read_text(out_a + "/diagnostics.json") == read_text(out_b + "/diagnostics.json"));

    const std::string out_c = (out.path / "c").string();
    CmdResult reseeded = run_cli("nowcast --config " + w.run_json +
                                 " --now 2020-05-05 --seed 6 --out " + out_c);
    REQUIRE(reseeded.exit_code == 0);
    REQUIRE(read_text(out_a + "/nowcast.csv") != read_text(out_c + "/nowcast.csv"));
  }
}

TEST_CASE("nowcast command rejects bad input with the right exit codes", "[cli]") {
  const CliWorld& w = cli_world();
  TempDir out;
  const std::string out_dir = (out.path / "x").string();

  SECTION("a reporting date is required") {
    CmdResult r = run_cli("nowcast --config " + w.run_json + " --out " + out_dir);
    REQUIRE(r.exit_code == 2);
    REQUIRE_THAT(r.error_json()["error"]["message"].get<std::string>(),
                 ContainsSubstring("--now"));
  }

  SECTION("a malformed reporting date is a config error") {
    CmdResult r =
        run_cli("nowcast --config " + w.run_json + " --now 2020-13-40 --out " + out_dir);
    REQUIRE(r.exit_code == 2);
    REQUIRE(r.error_json()["error"]["kind"] == "config");
    REQUIRE_THAT(r.error_json()["error"]["message"].get<std::string>(),
                 ContainsSubstring("--now"));
  }

  SECTION("unknown config keys are named") {
    nlohmann::json bad = nlohmann::json::parse(read_text(w.run_json));
    bad["sampler"]["foo"] = 1;
    TempDir cfg;
    write_text(cfg.file("bad.json"), bad.dump());
    CmdResult r = run_cli("nowcast --config " + cfg.file("bad.json").string() +
                          " --now 2020-05-05 --out " + out_dir);
    REQUIRE(r.exit_code == 2);
    REQUIRE_THAT(r.error_json()["error"]["message"].get<std::string>(),
                 ContainsSubstring("sampler.foo"));
  }

  SECTION("variant R with indicators is rejected") {
    nlohmann::json bad = nlohmann::json::parse(read_text(w.run_json));
    bad["model"] = {{"variant", "R"},
                    {"indicators", nlohmann::json::array(
                                       {{{"name", "icu"}, {"path", w.indicator_csv}}})}};
    TempDir cfg;
    write_text(cfg.file("bad.json"), bad.dump());
    CmdResult r = run_cli("nowcast --config " + cfg.file("bad.json").string() +
                          " --now 2020-05-05 --out " + out_dir);
    REQUIRE(r.exit_code == 2);
    REQUIRE_THAT(r.error_json()["error"]["message"].get<std::string>(),
                 ContainsSubstring("no indicators"));
  }

  SECTION("a missing snapshot directory is a data error") {
    nlohmann::json bad = nlohmann::json::parse(read_text(w.run_json));
    bad["data"]["snapshot_dir"] = w.sim_dir + "/not-there";
    TempDir cfg;
    write_text(cfg.file("bad.json"), bad.dump());
    CmdResult r = run_cli("nowcast --config " + cfg.file("bad.json").string() +
                          " --now 2020-05-05 --out " + out_dir);
    REQUIRE(r.exit_code == 3);
    REQUIRE(r.error_json()["error"]["kind"] == "data");
  }

  SECTION("a date without a snapshot is a data error") {
    CmdResult r =
        run_cli("nowcast --config " + w.run_json + " --now 2020-05-09 --out " + out_dir);
    REQUIRE(r.exit_code == 3);
    REQUIRE_THAT(r.error_json()["error"]["message"].get<std::string>(),
                 ContainsSubstring("2020-05-09"));
  }
}

TEST_CASE("evaluate command scores reporting dates retrospectively", "[cli]") {
  const CliWorld& w = cli_world();
  TempDir out;
  const std::string out_a = (out.path / "a").string();
  CmdResult r = run_cli("evaluate --config " + w.eval_json + " --out " + out_a);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE_THAT(r.out, ContainsSubstring("evaluation written to"));

  REQUIRE(read_lines(out_a + "/scores.csv")[0] ==
          "reporting_date,offset,crps,logs,se,in75,in90,in95");
  REQUIRE(std::filesystem::exists(out_a + "/horizon.csv"));
  REQUIRE(std::filesystem::exists(out_a + "/nowcast_series.csv"));
  REQUIRE(std::filesystem::exists(out_a + "/rolling_scores.csv"));
  nlohmann::json agg = nlohmann::json::parse(read_text(out_a + "/aggregate.json"));
  REQUIRE(agg["dates_evaluated"] == 2);
  REQUIRE(agg["crps"].get<double>() >= 0.0);
  REQUIRE(agg["horizon_crps"].size() == 8);  // offsets 0..max_delay

  SECTION("parallel evaluation writes identical results") {
    const std::string out_b = (out.path / "b").string();
    CmdResult threaded =
        run_cli("evaluate --config " + w.eval_json + " --workers 3 --out " + out_b);
    REQUIRE(threaded.exit_code == 0);
    REQUIRE(read_text(out_a + "/scores.csv") == read_text(out_b + "/scores.csv"));
    REQUIRE(read_text(out_a + "/aggregate.json") == read_text(out_b + "/aggregate.json"));
  }

  SECTION("a reporting date at or past the truth snapshot is rejected") {
    nlohmann::json bad = nlohmann::json::parse(read_text(w.eval_json));
    bad["evaluate"]["dates"].push_back("2020-05-19");
    TempDir cfg;
    write_text(cfg.file("bad.json"), bad.dump());
    CmdResult err = run_cli("evaluate --config " + cfg.file("bad.json").string() + " --out " +
                            (out.path / "c").string());
    REQUIRE(err.exit_code == 3);
    REQUIRE_THAT(err.error_json()["error"]["message"].get<std::string>(),
                 ContainsSubstring("strictly later"));
  }
}

TEST_CASE("select-lag command reports the least-squares lag", "[cli]") {
  const CliWorld& w = cli_world();
  const std::string window = " --window-start 2020-04-15 --window-end 2020-06-15";

  CmdResult r = run_cli("select-lag --target " + w.target_csv + " --indicator " +
                        w.indicator_csv + " --min-lag 0 --max-lag 14" + window);
  INFO(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE_THAT(r.out, ContainsSubstring("lag rss"));
  REQUIRE_THAT(r.out, ContainsSubstring("selected lag: 4"));

  SECTION("--out adds a csv table") {
    TempDir out;
    const std::string out_dir = (out.path / "lag").string();
    CmdResult with_out =
        run_cli("select-lag --target " + w.target_csv + " --indicator " + w.indicator_csv +
                " --min-lag 0 --max-lag 14" + window + " --out " + out_dir);
    REQUIRE(with_out.exit_code == 0);
    auto lines = read_lines(out_dir + "/lag_selection.csv");
    REQUIRE(lines[0] == "lag,rss");
    REQUIRE(lines.size() == 16);
    REQUIRE(split_line(lines[5])[0] == "4");
  }

  SECTION("an empty lag grid is a config error") {
    CmdResult bad = run_cli("select-lag --target " + w.target_csv + " --indicator " +
                            w.indicator_csv + " --min-lag 5 --max-lag 4" + window);
    REQUIRE(bad.exit_code == 2);
    REQUIRE_THAT(bad.error_json()["error"]["message"].get<std::string>(),
                 ContainsSubstring("empty lag grid"));
  }

  SECTION("malformed window dates are config errors") {
    CmdResult bad = run_cli("select-lag --target " + w.target_csv + " --indicator " +
                            w.indicator_csv +
                            " --window-start not-a-date --window-end 2020-06-15");
    REQUIRE(bad.exit_code == 2);
    REQUIRE_THAT(bad.error_json()["error"]["message"].get<std::string>(),
                 ContainsSubstring("--window-start"));
  }
}
