#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nowcast/calendar.hpp"
#include "nowcast/epi.hpp"
#include "nowcast/mcmc.hpp"
#include "nowcast/posterior.hpp"
#include "nowcast/series.hpp"
#include "nowcast/simulate.hpp"

namespace nowcast {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj,
                                std::initializer_list<const char*> allowed,
                                const std::string& context) {
  if (!obj.is_object()) {
    throw ConfigError("config section '" + context + "' must be an object");
  }
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* k) { return it.key() == k; }) == allowed.end()) {
      throw ConfigError("unknown config key '" + context + it.key() + "'");
    }
  }
}

template <class T>
T get_as(const nlohmann::json& obj, const char* key, const std::string& context, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + context + key + "' has the wrong type");
  }
}

template <class T>
T get_required(const nlohmann::json& obj, const char* key, const std::string& context) {
  if (!obj.contains(key)) {
    throw ConfigError("missing required config key '" + context + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + context + key + "' has the wrong type");
  }
}

inline std::string resolve_path(const std::string& path, const std::filesystem::path& base) {
  if (path.empty() || std::filesystem::path(path).is_absolute() || base.empty()) return path;
  return (base / path).string();
}

}  // namespace detail

struct IndicatorConfig {
  std::string name;
  std::string path;
  int lag = 0;
  int smoothing_width = 7;
  std::optional<Transform> transform;  // unset picks the variant default
};

struct DataConfig {
  std::string snapshot_dir;
  std::string calendar_path;    // empty: Tuesday..Friday, no holidays
  std::string truth_snapshot;   // empty: latest snapshot in the store
};

struct OutputConfig {
  bool emit_draws_json = false;
};

struct NowcastSection {
  std::optional<Date> now;
};

struct EvaluateSection {
  std::vector<Date> dates;
  std::string dates_file;
};

struct SimulateSection {
  Date start = Date::parse("2020-04-01");
  int n_days = 120;
  double sigma = 0.1;
  double phi = 10.0;
  double init_log_lambda = std::log(30.0);
  std::vector<double> gamma;
  std::vector<double> eta;
  std::vector<double> beta;
};

struct RunConfig {
  Variant variant = Variant::R;
  std::vector<IndicatorConfig> indicators;
  bool freeze_beta_at_zero = false;
  int window_length = 84;
  int max_delay = 35;
  int breakpoint_spacing = 14;
  PriorConfig priors;
  SamplerConfig sampler;
  int lambda_block_size = 1;
  int gamma_block_size = 7;
  DataConfig data;
  OutputConfig output;
  NowcastSection nowcast;
  EvaluateSection evaluate;
  SimulateSection simulate;
  std::uint64_t seed = 1;

  Transform indicator_transform(const IndicatorConfig& ind) const {
    if (ind.transform) return *ind.transform;
    return variant == Variant::RL ? Transform::relative_weekly_change : Transform::log;
  }

  void validate() const {
    if (variant == Variant::R && !indicators.empty()) {
      throw ConfigError("variant R takes no indicators");
    }
    if (variant != Variant::R && indicators.empty()) {
      throw ConfigError(strf("variant %s needs at least one indicator",
                             variant_name(variant)));
    }
    if (max_delay < 1) throw ConfigError("max_delay must be >= 1");
    if (window_length <= max_delay) {
      throw ConfigError(strf("window_length (%d) must exceed max_delay (%d)", window_length,
                             max_delay));
    }
    if (breakpoint_spacing < 1) throw ConfigError("breakpoint_spacing must be >= 1");
    if (lambda_block_size < 1) throw ConfigError("lambda_block_size must be >= 1");
    if (gamma_block_size < 1) throw ConfigError("gamma_block_size must be >= 1");
    priors.validate();
    sampler.validate();
    for (const auto& ind : indicators) {
      if (ind.name.empty()) throw ConfigError("indicator name must not be empty");
      if (ind.path.empty()) throw ConfigError("indicator '" + ind.name + "' needs a path");
      if (ind.lag < 0) throw ConfigError("indicator '" + ind.name + "' has a negative lag");
    }
  }
};

inline Date parse_config_date(const std::string& value, const std::string& context) {
  try {
    return Date::parse(value);
  } catch (const Error& e) {
    throw ConfigError("config key '" + context + "': " + e.what());
  }
}

inline RunConfig parse_run_config(const nlohmann::json& root,
                                  const std::filesystem::path& base_dir) {
  using detail::get_as;
  using detail::get_required;
  using detail::reject_unknown_keys;
  reject_unknown_keys(root,
                      {"model", "window_length", "max_delay", "breakpoint_spacing", "priors",
                       "sampler", "data", "output", "nowcast", "evaluate", "simulate", "seed"},
                      "");
  RunConfig cfg;
  cfg.window_length = get_as<int>(root, "window_length", "", cfg.window_length);
  cfg.max_delay = get_as<int>(root, "max_delay", "", cfg.max_delay);
  cfg.breakpoint_spacing = get_as<int>(root, "breakpoint_spacing", "", cfg.breakpoint_spacing);
  cfg.seed = get_as<std::uint64_t>(root, "seed", "", cfg.seed);

  if (root.contains("model")) {
    const auto& model = root.at("model");
    reject_unknown_keys(model, {"variant", "indicators", "freeze_beta_at_zero"}, "model.");
    cfg.variant = parse_variant(get_as<std::string>(model, "variant", "model.", "R"));
    cfg.freeze_beta_at_zero =
        get_as<bool>(model, "freeze_beta_at_zero", "model.", cfg.freeze_beta_at_zero);
    if (model.contains("indicators")) {
      if (!model.at("indicators").is_array()) {
        throw ConfigError("config key 'model.indicators' must be an array");
      }
      for (const auto& entry : model.at("indicators")) {
        reject_unknown_keys(entry, {"name", "path", "lag", "smoothing_width", "transform"},
                            "model.indicators[].");
        IndicatorConfig ind;
        ind.name = get_required<std::string>(entry, "name", "model.indicators[].");
        ind.path = detail::resolve_path(
            get_required<std::string>(entry, "path", "model.indicators[]."), base_dir);
        ind.lag = get_as<int>(entry, "lag", "model.indicators[].", 0);
        ind.smoothing_width = get_as<int>(entry, "smoothing_width", "model.indicators[].", 7);
        if (entry.contains("transform")) {
          ind.transform = parse_transform(
              get_as<std::string>(entry, "transform", "model.indicators[].", "log"));
        }
        cfg.indicators.push_back(std::move(ind));
      }
    }
  }

  if (root.contains("priors")) {
    const auto& priors = root.at("priors");
    reject_unknown_keys(
        priors, {"sigma_scale", "inv_sqrt_phi_scale", "beta_scale", "gamma_scale", "eta_scale"},
        "priors.");
    cfg.priors.sigma_scale =
        get_as<double>(priors, "sigma_scale", "priors.", cfg.priors.sigma_scale);
    cfg.priors.inv_sqrt_phi_scale =
        get_as<double>(priors, "inv_sqrt_phi_scale", "priors.", cfg.priors.inv_sqrt_phi_scale);
    cfg.priors.beta_scale = get_as<double>(priors, "beta_scale", "priors.", cfg.priors.beta_scale);
    cfg.priors.gamma_scale =
        get_as<double>(priors, "gamma_scale", "priors.", cfg.priors.gamma_scale);
    cfg.priors.eta_scale = get_as<double>(priors, "eta_scale", "priors.", cfg.priors.eta_scale);
  }

  if (root.contains("sampler")) {
    const auto& sampler = root.at("sampler");
    reject_unknown_keys(sampler,
                        {"chains", "warmup_iters", "sampling_iters", "algorithm",
                         "target_acceptance", "leapfrog_steps", "lambda_block_size",
                         "gamma_block_size"},
                        "sampler.");
    cfg.sampler.chains = get_as<int>(sampler, "chains", "sampler.", cfg.sampler.chains);
    cfg.sampler.warmup_iters =
        get_as<int>(sampler, "warmup_iters", "sampler.", cfg.sampler.warmup_iters);
    cfg.sampler.sampling_iters =
        get_as<int>(sampler, "sampling_iters", "sampler.", cfg.sampler.sampling_iters);
    if (sampler.contains("algorithm")) {
      cfg.sampler.algorithm =
          parse_algorithm(get_required<std::string>(sampler, "algorithm", "sampler."));
    }
    cfg.sampler.target_acceptance =
        get_as<double>(sampler, "target_acceptance", "sampler.", cfg.sampler.target_acceptance);
    cfg.sampler.leapfrog_steps =
        get_as<int>(sampler, "leapfrog_steps", "sampler.", cfg.sampler.leapfrog_steps);
    cfg.lambda_block_size =
        get_as<int>(sampler, "lambda_block_size", "sampler.", cfg.lambda_block_size);
    cfg.gamma_block_size =
        get_as<int>(sampler, "gamma_block_size", "sampler.", cfg.gamma_block_size);
  }

  if (root.contains("data")) {
    const auto& data = root.at("data");
    reject_unknown_keys(data, {"snapshot_dir", "calendar", "truth_snapshot"}, "data.");
    cfg.data.snapshot_dir =
        detail::resolve_path(get_as<std::string>(data, "snapshot_dir", "data.", ""), base_dir);
    cfg.data.calendar_path =
        detail::resolve_path(get_as<std::string>(data, "calendar", "data.", ""), base_dir);
    cfg.data.truth_snapshot =
        detail::resolve_path(get_as<std::string>(data, "truth_snapshot", "data.", ""), base_dir);
  }

  if (root.contains("output")) {
    const auto& output = root.at("output");
    reject_unknown_keys(output, {"emit_draws_json"}, "output.");
    cfg.output.emit_draws_json =
        get_as<bool>(output, "emit_draws_json", "output.", cfg.output.emit_draws_json);
  }

  if (root.contains("nowcast")) {
    const auto& section = root.at("nowcast");
    reject_unknown_keys(section, {"now"}, "nowcast.");
    if (section.contains("now")) {
      cfg.nowcast.now = parse_config_date(
          get_required<std::string>(section, "now", "nowcast."), "nowcast.now");
    }
  }

  if (root.contains("evaluate")) {
    const auto& section = root.at("evaluate");
    reject_unknown_keys(section, {"dates", "dates_file"}, "evaluate.");
    if (section.contains("dates")) {
      if (!section.at("dates").is_array()) {
        throw ConfigError("config key 'evaluate.dates' must be an array");
      }
      for (const auto& d : section.at("dates")) {
        if (!d.is_string()) throw ConfigError("config key 'evaluate.dates' must hold strings");
        cfg.evaluate.dates.push_back(
            parse_config_date(d.get<std::string>(), "evaluate.dates"));
      }
    }
    cfg.evaluate.dates_file = detail::resolve_path(
        get_as<std::string>(section, "dates_file", "evaluate.", ""), base_dir);
  }

  if (root.contains("simulate")) {
    const auto& section = root.at("simulate");
    reject_unknown_keys(
        section, {"start", "n_days", "sigma", "phi", "init_log_lambda", "gamma", "eta", "beta"},
        "simulate.");
    if (section.contains("start")) {
      cfg.simulate.start = parse_config_date(
          get_required<std::string>(section, "start", "simulate."), "simulate.start");
    }
    cfg.simulate.n_days = get_as<int>(section, "n_days", "simulate.", cfg.simulate.n_days);
    cfg.simulate.sigma = get_as<double>(section, "sigma", "simulate.", cfg.simulate.sigma);
    cfg.simulate.phi = get_as<double>(section, "phi", "simulate.", cfg.simulate.phi);
    cfg.simulate.init_log_lambda =
        get_as<double>(section, "init_log_lambda", "simulate.", cfg.simulate.init_log_lambda);
    cfg.simulate.gamma =
        get_as<std::vector<double>>(section, "gamma", "simulate.", cfg.simulate.gamma);
    cfg.simulate.eta = get_as<std::vector<double>>(section, "eta", "simulate.", cfg.simulate.eta);
    cfg.simulate.beta =
        get_as<std::vector<double>>(section, "beta", "simulate.", cfg.simulate.beta);
  }

  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(strf("config file '%s' is not valid JSON: %s", path.c_str(), e.what()));
  }
  return parse_run_config(root, std::filesystem::path(path).parent_path());
}

}  // namespace nowcast
