#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nowcast/common.hpp"
#include "nowcast/series.hpp"
#include "nowcast/triangle.hpp"

namespace nowcast {

enum class Variant { R, L, RL };

inline Variant parse_variant(const std::string& s) {
  if (s == "R") return Variant::R;
  if (s == "L") return Variant::L;
  if (s == "RL") return Variant::RL;
  throw ConfigError("unknown model variant '" + s + "' (expected R, L or RL)");
}

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::R: return "R";
    case Variant::L: return "L";
    default: return "RL";
  }
}

inline double normal_logpdf(double x, double mean, double sd) {
  static constexpr double kLogSqrt2Pi = 0.9189385332046727;  // log(sqrt(2*pi))
  const double z = (x - mean) / sd;
  return -kLogSqrt2Pi - std::log(sd) - 0.5 * z * z;
}

// log lambda path with its innovation scale and regression coefficients.
// For variant L, beta[0] is the intercept beta_0; variant RL has none.
struct LatentPath {
  std::vector<double> log_lambda;
  double sigma = 1.0;
  std::vector<double> beta;
};

// The epidemic-curve prior over the fitting window: a log-scale random walk
// (R), an indicator regression (L), or a random walk with indicator
// relative-change terms (RL). Covariates are the preprocessed, lagged
// indicator values aligned to the window.
struct EpiCurveModel {
  Variant variant = Variant::R;
  int n_days = 0;
  std::vector<std::vector<double>> covariates;  // [indicator][day]
  double init_log_lambda_mean = 0.0;
  double init_log_lambda_sd = 1.0;

  int indicator_count() const { return static_cast<int>(covariates.size()); }

  int beta_count() const {
    switch (variant) {
      case Variant::R: return 0;
      case Variant::L: return indicator_count() + 1;
      default: return indicator_count();
    }
  }

  double covariate_dot(std::span<const double> beta, int t) const {
    double dot = 0.0;
    if (variant == Variant::L) {
      dot = beta[0];
      for (size_t i = 0; i < covariates.size(); ++i) dot += beta[i + 1] * covariates[i][t];
    } else if (variant == Variant::RL) {
      for (size_t i = 0; i < covariates.size(); ++i) dot += beta[i] * covariates[i][t];
    }
    return dot;
  }

  double mean_at(std::span<const double> log_lambda, std::span<const double> beta, int t) const {
    switch (variant) {
      case Variant::R: return log_lambda[t - 1];
      case Variant::L: return covariate_dot(beta, t);
      default: return log_lambda[t - 1] + covariate_dot(beta, t);
    }
  }

  // Sum of the conditional log-densities of log_lambda[from..to]. For R and
  // RL the t = 0 term is the initialization prior.
  double path_logdensity_range(std::span<const double> log_lambda, double sigma,
                               std::span<const double> beta, int from, int to) const {
    double sum = 0.0;
    for (int t = from; t <= to; ++t) {
      if (t == 0 && variant != Variant::L) {
        sum += normal_logpdf(log_lambda[0], init_log_lambda_mean, init_log_lambda_sd);
      } else {
        sum += normal_logpdf(log_lambda[t], mean_at(log_lambda, beta, t), sigma);
      }
    }
    return sum;
  }

  // Gaussian form of the same density: fills the tridiagonal precision
  // (diag, off) and the linear coefficient b so that the log-density equals
  // -x'Qx/2 + b'x + const over the whole path x.
  void path_gaussian_form(double sigma, std::span<const double> beta, std::vector<double>& diag,
                          std::vector<double>& off, std::vector<double>& b) const {
    diag.assign(static_cast<size_t>(n_days), 0.0);
    off.assign(static_cast<size_t>(n_days) - 1, 0.0);
    b.assign(static_cast<size_t>(n_days), 0.0);
    const double isig2 = 1.0 / (sigma * sigma);
    if (variant == Variant::L) {
      for (int t = 0; t < n_days; ++t) {
        diag[t] = isig2;
        b[t] = covariate_dot(beta, t) * isig2;
      }
      return;
    }
    const double init_prec = 1.0 / (init_log_lambda_sd * init_log_lambda_sd);
    diag[0] += init_prec;
    b[0] += init_log_lambda_mean * init_prec;
    for (int t = 1; t < n_days; ++t) {
      const double c = covariate_dot(beta, t);
      diag[t] += isig2;
      diag[t - 1] += isig2;
      off[t - 1] -= isig2;
      b[t] += c * isig2;
      b[t - 1] -= c * isig2;
    }
  }

  double path_logdensity(const LatentPath& path) const {
    if (static_cast<int>(path.log_lambda.size()) != n_days) {
      throw Error(strf("path length %zu does not match window of %d days",
                       path.log_lambda.size(), n_days));
    }
    if (static_cast<int>(path.beta.size()) != beta_count()) {
      throw Error(strf("beta length %zu does not match variant %s with %d indicators",
                       path.beta.size(), variant_name(variant), indicator_count()));
    }
    if (!(path.sigma > 0.0)) throw Error("sigma must be > 0");
    return path_logdensity_range(path.log_lambda, path.sigma, path.beta, 0, n_days - 1);
  }
};

// log(max(mean of the first seven observed daily totals, 1)): the anchor of
// the random-walk initialization prior.
inline double init_log_lambda_mean_from(const ReportingTriangle& triangle) {
  const int n = std::min(7, triangle.n_days());
  double sum = 0.0;
  for (int t = 0; t < n; ++t) sum += static_cast<double>(triangle.observed_partial(t));
  const double mean = n > 0 ? sum / n : 0.0;
  return std::log(std::max(mean, 1.0));
}

// Align preprocessed indicators to the window: m_i(t) = x_i(t - lag_i).
// Indicators must already be smoothed and transformed.
inline std::vector<std::vector<double>> align_covariates(
    const std::vector<IndicatorSeries>& prepared, Date window_start, int n_days) {
  std::vector<std::vector<double>> m;
  m.reserve(prepared.size());
  for (const auto& ind : prepared) {
    if (ind.lag < 0) throw ConfigError("indicator '" + ind.name + "': lag must be >= 0");
    std::vector<double> row(n_days);
    for (int t = 0; t < n_days; ++t) {
      const Date needed = window_start + t - ind.lag;
      auto it = ind.values.find(needed);
      if (it == ind.values.end()) {
        throw DataError(strf("indicator '%s': missing value for %s (needed for window day %s)",
                             ind.name.c_str(), needed.iso().c_str(),
                             (window_start + t).iso().c_str()));
      }
      row[t] = it->second;
    }
    m.push_back(std::move(row));
  }
  return m;
}

inline EpiCurveModel make_epi_model(Variant variant, const ReportingTriangle& window_triangle,
                                    const std::vector<IndicatorSeries>& prepared_indicators) {
  if (variant == Variant::R && !prepared_indicators.empty()) {
    throw ConfigError("variant R takes no indicators");
  }
  if (variant != Variant::R && prepared_indicators.empty()) {
    throw ConfigError(strf("variant %s requires at least one indicator", variant_name(variant)));
  }
  EpiCurveModel model;
  model.variant = variant;
  model.n_days = window_triangle.n_days();
  model.covariates =
      align_covariates(prepared_indicators, window_triangle.start, window_triangle.n_days());
  model.init_log_lambda_mean = init_log_lambda_mean_from(window_triangle);
  return model;
}

}  // namespace nowcast
