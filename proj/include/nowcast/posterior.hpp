#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nowcast/delay.hpp"
#include "nowcast/epi.hpp"
#include "nowcast/rng.hpp"
#include "nowcast/triangle.hpp"

namespace nowcast {

// Negative binomial log-pmf with mean mu and variance mu + mu^2/phi.
inline double nb_logpmf(long y, double mu, double phi) {
  if (y < 0 || !(mu > 0.0) || !(phi > 0.0) || !std::isfinite(mu) || !std::isfinite(phi)) {
    throw Error(strf("nb_logpmf domain error: y=%ld mu=%g phi=%g", y, mu, phi));
  }
  double log_gamma_ratio;  // log Gamma(y+phi) - log Gamma(phi)
  if (y == 0) {
    log_gamma_ratio = 0.0;
  } else if (phi > 1e6 && y <= 100000) {
    // exact product form; avoids cancellation between two huge lgammas
    log_gamma_ratio = 0.0;
    for (long j = 0; j < y; ++j) log_gamma_ratio += std::log(phi + j);
  } else {
    log_gamma_ratio = std::lgamma(y + phi) - std::lgamma(phi);
  }
  return log_gamma_ratio - std::lgamma(y + 1.0) - phi * std::log1p(mu / phi) +
         y * (std::log(mu) - std::log(phi + mu));
}

inline double half_normal_logpdf(double x, double scale) {
  static constexpr double kLogSqrt2OverPi = -0.22579135264472744;  // log(sqrt(2/pi))
  const double z = x / scale;
  return kLogSqrt2OverPi - std::log(scale) - 0.5 * z * z;
}

inline double digamma(double x) {
  if (!(x > 0.0)) throw Error(strf("digamma domain error: x=%g", x));
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  return acc + std::log(x) - 0.5 * inv -
         inv2 * (1.0 / 12.0 -
                 inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
}

struct PriorConfig {
  double sigma_scale = 0.5;         // sigma ~ HalfNormal(sigma_scale)
  double inv_sqrt_phi_scale = 1.0;  // 1/sqrt(phi) ~ HalfNormal(inv_sqrt_phi_scale)
  double beta_scale = 1.0;          // beta ~ Normal(0, beta_scale)
  double gamma_scale = 2.0;         // gamma_d ~ Normal(0, gamma_scale)
  double eta_scale = 1.0;           // eta ~ Normal(0, eta_scale)

  void validate() const {
    if (!(sigma_scale > 0 && inv_sqrt_phi_scale > 0 && beta_scale > 0 && gamma_scale > 0 &&
          eta_scale > 0)) {
      throw ConfigError("all prior scales must be > 0");
    }
  }
};

// One point in parameter space on the natural scales.
struct ParameterState {
  LatentPath path;
  DelayParams delay;
  double phi = 1.0;
};

// Flat unconstrained parameter vector layout:
//   [ log_lambda (n_days) | gamma (D) | eta (p) | beta (k) | log_sigma | log_phi ]
struct ParamLayout {
  int n_days = 0;
  int max_delay = 0;
  int n_eta = 0;
  int n_beta = 0;

  int lambda_offset() const { return 0; }
  int gamma_offset() const { return n_days; }
  int eta_offset() const { return n_days + max_delay; }
  int beta_offset() const { return n_days + max_delay + n_eta; }
  int log_sigma_index() const { return beta_offset() + n_beta; }
  int log_phi_index() const { return log_sigma_index() + 1; }
  int dim() const { return log_phi_index() + 1; }
};

enum class BlockKind {
  lambda,
  lambda_field,
  sigma_rescale,
  hazard_level,
  gamma,
  eta,
  beta,
  log_sigma,
  log_phi,
  all
};

// A contiguous parameter range updated jointly by the sampler. Blocks with
// shared_increment receive one common innovation across all coordinates.
// Blocks with scale_driver >= 0 instead make a deterministic stretch move:
// the coordinates in the range are pulled toward or away from their mean by
// exp(eps) while eps is added to the driver coordinate, and the sampler
// folds the log-Jacobian (count - 1) * eps into the acceptance ratio.
// Blocks with eigen_move set propose along one principal direction of the
// warmup trajectory covariance, so ridge-shaped posteriors are traversed
// along the ridge instead of by axis-aligned diffusion; the i-th such block
// tracks the i-th principal direction. Blocks with target_proposal defer the
// proposal map to the target's propose_block, which draws the innovation for
// [drive_first, drive_first + drive_count), may deterministically adjust any
// other coordinate inside [first, first + count), and returns the
// log-Jacobian of the map.
struct SamplerBlock {
  std::string name;
  BlockKind kind = BlockKind::all;
  int first = 0;
  int count = 0;
  bool shared_increment = false;
  int scale_driver = -1;  // index of the log-scale coordinate moved in step
  bool eigen_move = false;
  bool target_proposal = false;
  int drive_first = -1;
  int drive_count = 0;
};

struct PosteriorOptions {
  PriorConfig priors;
  bool freeze_beta_at_zero = false;
  int lambda_block_size = 1;
  int gamma_block_size = 7;
};

// Joint log-posterior of the nowcasting model over one fitting window:
// NB likelihood over observed triangle cells, the epidemic-curve density,
// the hazard and regression priors, and log-scale Jacobians for sigma and
// phi. Block-restricted evaluation exposes only the terms a block can
// change, which is what the blockwise sampler differences.
class NowcastPosterior {
 public:
  NowcastPosterior(ReportingTriangle window_triangle, HazardDesign design, EpiCurveModel epi,
                   std::vector<std::string> indicator_names, PosteriorOptions options)
      : triangle_(std::move(window_triangle)),
        design_(std::move(design)),
        epi_(std::move(epi)),
        indicator_names_(std::move(indicator_names)),
        options_(options) {
    options_.priors.validate();
    if (options_.lambda_block_size < 1 || options_.gamma_block_size < 1) {
      throw ConfigError("sampler block sizes must be >= 1");
    }
    if (triangle_.max_delay + 1 > 512) {
      throw ConfigError("max_delay above 511 is not supported");
    }
    if (triangle_.n_days() != epi_.n_days || design_.n_days() != epi_.n_days ||
        design_.window_start != triangle_.start || design_.now != triangle_.now ||
        design_.max_delay != triangle_.max_delay) {
      throw Error("posterior: triangle, design and epi model windows do not match");
    }
    layout_.n_days = triangle_.n_days();
    layout_.max_delay = triangle_.max_delay;
    layout_.n_eta = design_.n_cols();
    layout_.n_beta = options_.freeze_beta_at_zero ? 0 : epi_.beta_count();
    frozen_beta_.assign(epi_.beta_count(), 0.0);

    const int n = layout_.n_days;
    const int D = layout_.max_delay;
    reporting_.assign(static_cast<size_t>(n) * (D + 1), false);
    obs_cells_.resize(n);
    pred_cells_.resize(n);
    for (int t = 0; t < n; ++t) {
      for (int d = 0; d <= D; ++d) {
        const bool structural = triangle_.structural_zero(t, d);
        reporting_[static_cast<size_t>(t) * (D + 1) + d] = !structural;
        if (structural) continue;
        if (triangle_.observed(t, d)) {
          const long y = triangle_.cell(t, d);
          obs_cells_[t].push_back({d, y, std::lgamma(y + 1.0)});
        } else {
          pred_cells_[t].push_back(d);
        }
      }
    }
  }

  const ParamLayout& layout() const { return layout_; }
  int dim() const { return layout_.dim(); }
  const ReportingTriangle& triangle() const { return triangle_; }
  const HazardDesign& design() const { return design_; }
  const EpiCurveModel& epi() const { return epi_; }
  const PriorConfig& priors() const { return options_.priors; }
  bool beta_frozen() const { return options_.freeze_beta_at_zero; }
  const std::vector<int>& predictive_cells(int t) const { return pred_cells_[t]; }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    names.reserve(dim());
    for (int t = 0; t < layout_.n_days; ++t) {
      names.push_back("log_lambda[" + triangle_.date(t).iso() + "]");
    }
    for (int d = 0; d < layout_.max_delay; ++d) names.push_back(strf("gamma[%d]", d));
    for (const auto& col : design_.column_names()) names.push_back("eta[" + col + "]");
    if (layout_.n_beta > 0) {
      int i = 0;
      if (epi_.variant == Variant::L) names.push_back("beta0"), ++i;
      for (const auto& ind : indicator_names_) names.push_back("beta[" + ind + "]"), ++i;
    }
    names.push_back("log_sigma");
    names.push_back("log_phi");
    return names;
  }

  std::vector<SamplerBlock> blocks() const {
    std::vector<SamplerBlock> out;
    const int n = layout_.n_days;
    for (int first = 0; first < n; first += options_.lambda_block_size) {
      const int count = std::min(options_.lambda_block_size, n - first);
      out.push_back({strf("lambda[%d]", first), BlockKind::lambda, first, count});
    }
    out.push_back({"lambda_shift", BlockKind::lambda_shift, 0, n, /*shared_increment=*/true});
    // Realized path roughness and sigma move together; elementwise updates
    // alone leave that direction nearly frozen.
    out.push_back({"sigma_rescale", BlockKind::sigma_rescale, 0, n, false,
                   layout_.log_sigma_index()});
    // Reporting speed and intensity trade off: raising every hazard while the
    // unfinished rows' lambdas absorb the change in their observed fraction
    // moves along that trade-off instead of fighting it coordinate-wise.
    SamplerBlock level{"hazard_level", BlockKind::hazard_level, 0, n + layout_.max_delay};
    level.target_proposal = true;
    out.push_back(level);
    // The gamma and eta moves carry the same compensation, so each delay
    // parameter walks its own conditional ridge instead of waiting for the
    // lambda tail to diffuse after it.
    const int D = layout_.max_delay;
    const int tail_first = std::max(0, n - D);
    const bool comp_all = std::getenv("NC_COMP") != nullptr;
    auto compensated = [&](std::string name, BlockKind kind, int drive_first, int drive_count) {
      SamplerBlock blk{std::move(name), kind, tail_first,
                       drive_first + drive_count - tail_first};
      blk.target_proposal = true;
      blk.drive_first = drive_first;
      blk.drive_count = drive_count;
      if (!comp_all) {
        blk.first = drive_first;
        blk.count = drive_count;
        blk.target_proposal = false;
      }
      out.push_back(blk);
    };
    for (int first = 0; first < D; first += options_.gamma_block_size) {
      const int count = std::min(options_.gamma_block_size, D - first);
      compensated(strf("gamma[%d]", first), BlockKind::gamma, layout_.gamma_offset() + first,
                  count);
    }
    const int n_time = design_.n_time_cols();
    compensated("eta_time", BlockKind::eta, layout_.eta_offset(), n_time);
    compensated("eta_weekday", BlockKind::eta, layout_.eta_offset() + n_time,
                layout_.n_eta - n_time);
    if (layout_.n_beta > 0) {
      out.push_back({"beta", BlockKind::beta, layout_.beta_offset(), layout_.n_beta});
    }
    out.push_back({"log_sigma", BlockKind::log_sigma, layout_.log_sigma_index(), 1});
    out.push_back({"log_phi", BlockKind::log_phi, layout_.log_phi_index(), 1});
    // The hazard level, the reporting-speed trend and the weakly observed
    // recent lambdas trade off along a few flat directions; one-dimensional
    // moves along the leading warmup principal directions cross those
    // valleys at full stride.
    for (int r = 0; r < 8; ++r) {
      SamplerBlock ridge{strf("ridge[%d]", r), BlockKind::all, 0, layout_.dim()};
      ridge.eigen_move = true;
      out.push_back(ridge);
    }
    return out;
  }

  std::span<const double> beta_view(std::span<const double> theta) const {
    if (options_.freeze_beta_at_zero) return frozen_beta_;
    return theta.subspan(layout_.beta_offset(), layout_.n_beta);
  }

  // hazard and delay-probability row for event day t at the given parameters
  void hazard_row(std::span<const double> theta, int t, std::span<double> h) const {
    const int D = layout_.max_delay;
    std::span<const double> eta = theta.subspan(layout_.eta_offset(), layout_.n_eta);
    std::span<const double> gamma = theta.subspan(layout_.gamma_offset(), D);
    const double tdot = design_.time_dot(t, eta);
    for (int d = 0; d < D; ++d) {
      h[d] = reporting_[static_cast<size_t>(t) * (D + 1) + d]
                 ? logistic(gamma[d] + tdot + design_.weekday_dot(t, d, eta))
                 : 0.0;
    }
    h[D] = 1.0;
  }

  std::vector<double> delay_prob_row(std::span<const double> theta, int t) const {
    std::vector<double> h(layout_.max_delay + 1);
    hazard_row(theta, t, h);
    return delay_probabilities(h);
  }

  double log_likelihood(std::span<const double> theta) const {
    double sum = 0.0;
    for (int t = 0; t < layout_.n_days; ++t) sum += row_loglik(theta, t);
    return sum;
  }

  double path_logdensity(std::span<const double> theta) const {
    return path_range(theta, 0, layout_.n_days - 1);
  }

  double log_prior(std::span<const double> theta) const {
    double sum = prior_gamma_range(theta, 0, layout_.max_delay) +
                 prior_eta_range(theta, 0, layout_.n_eta) + prior_beta(theta) +
                 prior_log_sigma(theta) + prior_log_phi(theta);
    return sum;
  }

  double log_density(std::span<const double> theta) const {
    return log_likelihood(theta) + path_logdensity(theta) + log_prior(theta);
  }

  // Compensated proposal maps: delay parameters move (one shared shift for
  // hazard_level, a Gaussian step on the driven range otherwise) and each
  // unfinished row's log lambda absorbs the change in its expected observed
  // fraction, so the fitted means of observed cells survive to first order.
  // Applying the same map with the negated innovation undoes it and the
  // Jacobian is one, hence the returned log-Jacobian of zero.
  double propose_block(const SamplerBlock& block, const std::vector<double>& theta,
                       std::vector<double>& proposal, std::span<const double> chol,
                       std::span<const double> coord_sd, double scale, RngStream& rng) const {
    const int n = layout_.n_days;
    const int D = layout_.max_delay;
    for (int j = 0; j < block.count; ++j) proposal[block.first + j] = theta[block.first + j];
    if (block.kind == BlockKind::hazard_level) {
      const double eps = scale * rng.normal();
      for (int d = 0; d < D; ++d) proposal[layout_.gamma_offset() + d] += eps;
    } else {
      const int dc = block.drive_count;
      std::vector<double> z(static_cast<size_t>(dc));
      for (double& v : z) v = rng.normal();
      if (!chol.empty()) {
        for (int j = 0; j < dc; ++j) {
          double step = 0.0;
          for (int m = 0; m <= j; ++m) step += chol[static_cast<size_t>(j) * dc + m] * z[m];
          proposal[block.drive_first + j] = theta[block.drive_first + j] + scale * step;
        }
      } else {
        for (int j = 0; j < dc; ++j) {
          proposal[block.drive_first + j] =
              theta[block.drive_first + j] + scale * coord_sd[block.drive_first + j] * z[j];
        }
      }
    }
    std::vector<double> h(static_cast<size_t>(D) + 1);
    for (int t = std::max(0, n - D); t < n; ++t) {
      if (pred_cells_[t].empty() || obs_cells_[t].empty()) continue;
      hazard_row(theta, t, h);
      const std::vector<double> base = delay_probabilities(h);
      hazard_row(proposal, t, h);
      const std::vector<double> shifted = delay_probabilities(h);
      double miss_base = 0.0;
      double miss_shifted = 0.0;
      for (int d : pred_cells_[t]) {
        miss_base += base[d];
        miss_shifted += shifted[d];
      }
      proposal[t] = theta[t] + std::log1p(-miss_base) - std::log1p(-miss_shifted);
    }
    return 0.0;
  }

  double block_log_density(std::span<const double> theta, const SamplerBlock& block) const {
    const int n = layout_.n_days;
    switch (block.kind) {
      case BlockKind::lambda: {
        double sum = 0.0;
        const int last = block.first + block.count - 1;
        for (int t = block.first; t <= last; ++t) sum += row_loglik(theta, t);
        sum += path_range(theta, block.first, std::min(last + 1, n - 1));
        return sum;
      }
      case BlockKind::lambda_shift:
        return log_likelihood(theta) + path_logdensity(theta);
      case BlockKind::sigma_rescale:
        return log_likelihood(theta) + path_logdensity(theta) + prior_log_sigma(theta);
      case BlockKind::hazard_level:
        return log_likelihood(theta) + path_logdensity(theta) +
               prior_gamma_range(theta, 0, layout_.max_delay);
      case BlockKind::gamma:
        return log_likelihood(theta) + path_logdensity(theta) +
               prior_gamma_range(theta, 0, layout_.max_delay);
      case BlockKind::eta:
        return log_likelihood(theta) + path_logdensity(theta) +
               prior_gamma_range(theta, 0, layout_.max_delay) +
               prior_eta_range(theta, 0, layout_.n_eta);
      case BlockKind::beta:
        return path_logdensity(theta) + prior_beta(theta);
      case BlockKind::log_sigma:
        return path_logdensity(theta) + prior_log_sigma(theta);
      case BlockKind::log_phi:
        return log_likelihood(theta) + prior_log_phi(theta);
      default:
        return log_density(theta);
    }
  }

  // Initial state: the observed partial sums inflated by the empirical
  // reporting fraction give the lambda path; everything else starts at its
  // prior center with a small jitter.
  std::vector<double> initial_state(RngStream& rng) const {
    const int n = layout_.n_days;
    const int D = layout_.max_delay;
    std::vector<double> cum_frac(D + 1, 1.0);
    std::vector<double> mass(D + 1, 0.0);
    double total = 0.0;
    {
      // empirical cumulative reporting fraction from fully observed rows
      for (int t = 0; t + D < n; ++t) {
        for (int d = 0; d <= D; ++d) mass[d] += static_cast<double>(triangle_.cell(t, d));
        total += static_cast<double>(triangle_.row_total(t));
      }
      if (total > 0.0) {
        double acc = 0.0;
        for (int d = 0; d <= D; ++d) {
          acc += mass[d] / total;
          cum_frac[d] = std::max(acc, 0.05);
        }
      }
    }
    std::vector<double> lambda_hat(n);
    for (int t = 0; t < n; ++t) {
      const int horizon = std::min(triangle_.now - triangle_.date(t), D);
      lambda_hat[t] =
          static_cast<double>(triangle_.observed_partial(t)) / cum_frac[std::max(horizon, 0)];
    }
    std::vector<double> theta(dim());
    for (int t = 0; t < n; ++t) {
      double sum = 0.0;
      int count = 0;
      for (int k = std::max(0, t - 3); k <= std::min(n - 1, t + 3); ++k) {
        sum += lambda_hat[k];
        ++count;
      }
      theta[t] = std::log(std::max(sum / count, 0.5)) + 0.05 * rng.normal();
    }
    // hazard inversion of the pooled empirical delay profile; chains start
    // on the likelihood's valley floor instead of at a flat profile
    for (int d = 0; d < D; ++d) {
      double gamma_hat = 0.0;
      if (total > 0.0) {
        const double tail = d == 0 ? 1.0 : std::max(1.0 - cum_frac[d - 1], 1e-9);
        const double h = std::clamp(mass[d] / total / tail, 0.005, 0.95);
        gamma_hat = std::log(h / (1.0 - h));
      }
      theta[layout_.gamma_offset() + d] = gamma_hat + 0.1 * rng.normal();
    }
    for (int j = 0; j < layout_.n_eta; ++j) theta[layout_.eta_offset() + j] = 0.1 * rng.normal();
    for (int j = 0; j < layout_.n_beta; ++j) theta[layout_.beta_offset() + j] = 0.1 * rng.normal();
    // prior means: E sigma = scale*sqrt(2/pi); E (1/sqrt(phi)) likewise
    const double sigma0 = options_.priors.sigma_scale * 0.7978845608028654;
    const double tau0 = options_.priors.inv_sqrt_phi_scale * 0.7978845608028654;
    theta[layout_.log_sigma_index()] = std::log(sigma0) + 0.1 * rng.normal();
    theta[layout_.log_phi_index()] = -2.0 * std::log(tau0) + 0.1 * rng.normal();
    return theta;
  }

  ParameterState unpack(std::span<const double> theta) const {
    ParameterState s;
    s.path.log_lambda.assign(theta.begin(), theta.begin() + layout_.n_days);
    s.path.sigma = std::exp(theta[layout_.log_sigma_index()]);
    auto beta = beta_view(theta);
    s.path.beta.assign(beta.begin(), beta.end());
    s.delay.gamma.assign(theta.begin() + layout_.gamma_offset(),
                         theta.begin() + layout_.gamma_offset() + layout_.max_delay);
    s.delay.eta.assign(theta.begin() + layout_.eta_offset(),
                       theta.begin() + layout_.eta_offset() + layout_.n_eta);
    s.phi = std::exp(theta[layout_.log_phi_index()]);
    return s;
  }

  // Analytic gradient of log_density; exercised by the HMC algorithm and
  // checked against finite differences before any sampling.
  std::vector<double> gradient(std::span<const double> theta) const {
    const int n = layout_.n_days;
    const int D = layout_.max_delay;
    std::vector<double> grad(dim(), 0.0);
    const double phi = std::exp(theta[layout_.log_phi_index()]);
    const double sigma = std::exp(theta[layout_.log_sigma_index()]);
    if (!std::isfinite(phi) || !(phi > 0.0) || !std::isfinite(sigma) || !(sigma > 0.0)) {
      return grad;  // off-support state; the energy check rejects the move
    }
    std::span<const double> eta = theta.subspan(layout_.eta_offset(), layout_.n_eta);
    std::span<const double> beta = beta_view(theta);

    std::vector<double> h(D + 1), p(D + 1), a(D + 1), glogit(D);
    double dlogphi = 0.0;
    for (int t = 0; t < n; ++t) {
      hazard_row(theta, t, h);
      double survival = 1.0;
      for (int d = 0; d <= D; ++d) {
        p[d] = h[d] * survival;
        survival *= 1.0 - h[d];
      }
      const double lambda = std::exp(theta[t]);
      std::fill(a.begin(), a.end(), 0.0);
      double row_a = 0.0;
      for (const auto& cell : obs_cells_[t]) {
        const double mu = lambda * p[cell.d];
        if (!(mu > 0.0)) continue;  // y must be 0 here; constant contribution
        const double y = static_cast<double>(cell.y);
        a[cell.d] = y - (y + phi) * mu / (phi + mu);
        row_a += a[cell.d];
        dlogphi += (digamma(y + phi) - digamma(phi) - std::log1p(mu / phi) + 1.0 -
                    (y + phi) / (phi + mu)) *
                   phi;
      }
      grad[t] += row_a;  // d/d log_lambda[t] of the NB terms
      // d/d logit_k: a_k (1-h_k) - h_k * sum_{d>k} a_d
      double suffix = a[D];
      double gsum = 0.0;
      for (int k = D - 1; k >= 0; --k) {
        double g = 0.0;
        if (reporting_[static_cast<size_t>(t) * (D + 1) + k]) {
          g = a[k] * (1.0 - h[k]) - h[k] * suffix;
        }
        glogit[k] = g;
        gsum += g;
        suffix += a[k];
      }
      for (int k = 0; k < D; ++k) grad[layout_.gamma_offset() + k] += glogit[k];
      for (int j = 0; j < design_.n_time_cols(); ++j) {
        grad[layout_.eta_offset() + j] += gsum * design_.time_col(t, j);
      }
      for (int k = 0; k < D; ++k) {
        const int col = design_.weekday_col[static_cast<size_t>(t) + k];
        if (col >= 0) grad[layout_.eta_offset() + design_.n_time_cols() + col] += glogit[k];
      }
    }

    // epidemic-curve terms
    double dlogsigma = 0.0;
    for (int t = 0; t < n; ++t) {
      if (t == 0 && epi_.variant != Variant::L) {
        grad[0] -= (theta[0] - epi_.init_log_lambda_mean) /
                   (epi_.init_log_lambda_sd * epi_.init_log_lambda_sd);
        continue;
      }
      const double mean = epi_.mean_at(theta.subspan(0, n), beta, t);
      const double z = (theta[t] - mean) / sigma;
      const double score = z / sigma;  // (x - m) / sigma^2
      grad[t] -= score;
      if (epi_.variant != Variant::L && t > 0) grad[t - 1] += score;
      if (layout_.n_beta > 0) {
        if (epi_.variant == Variant::L) {
          grad[layout_.beta_offset()] += score;
          for (int i = 0; i < epi_.indicator_count(); ++i) {
            grad[layout_.beta_offset() + 1 + i] += score * epi_.covariates[i][t];
          }
        } else if (epi_.variant == Variant::RL) {
          for (int i = 0; i < epi_.indicator_count(); ++i) {
            grad[layout_.beta_offset() + i] += score * epi_.covariates[i][t];
          }
        }
      }
      dlogsigma += z * z - 1.0;
    }
    grad[layout_.log_sigma_index()] += dlogsigma;
    grad[layout_.log_phi_index()] += dlogphi;

    // priors and Jacobians
    const auto& pr = options_.priors;
    for (int d = 0; d < D; ++d) {
      grad[layout_.gamma_offset() + d] -=
          theta[layout_.gamma_offset() + d] / (pr.gamma_scale * pr.gamma_scale);
    }
    for (int j = 0; j < layout_.n_eta; ++j) {
      grad[layout_.eta_offset() + j] -=
          theta[layout_.eta_offset() + j] / (pr.eta_scale * pr.eta_scale);
    }
    for (int j = 0; j < layout_.n_beta; ++j) {
      grad[layout_.beta_offset() + j] -=
          theta[layout_.beta_offset() + j] / (pr.beta_scale * pr.beta_scale);
    }
    grad[layout_.log_sigma_index()] +=
        1.0 - sigma * sigma / (pr.sigma_scale * pr.sigma_scale);
    grad[layout_.log_phi_index()] +=
        std::exp(-theta[layout_.log_phi_index()]) /
            (2.0 * pr.inv_sqrt_phi_scale * pr.inv_sqrt_phi_scale) -
        0.5;
    return grad;
  }

 private:
  struct ObsCell {
    int d;
    long y;
    double lgamma_y1;  // lgamma(y + 1), fixed by the data
  };

  double row_loglik(std::span<const double> theta, int t) const {
    const int D = layout_.max_delay;
    double h[512];
    hazard_row(theta, t, std::span<double>(h, D + 1));
    const double lambda = std::exp(theta[t]);
    const double phi = std::exp(theta[layout_.log_phi_index()]);
    if (!std::isfinite(lambda) || !std::isfinite(phi) || !(phi > 0.0)) {
      return -std::numeric_limits<double>::infinity();
    }
    const double lgamma_phi = std::lgamma(phi);
    double sum = 0.0;
    double survival = 1.0;
    int next = 0;  // next delay whose survival factor is pending
    for (const auto& cell : obs_cells_[t]) {
      while (next < cell.d) survival *= 1.0 - h[next++];
      const double mu = lambda * h[cell.d] * survival;
      if (mu > 0.0) {
        // same expression tree as nb_logpmf with the phi-only and data-only
        // lgamma terms hoisted out of the cell loop
        double log_gamma_ratio;
        if (cell.y == 0) {
          log_gamma_ratio = 0.0;
        } else if (phi > 1e6 && cell.y <= 100000) {
          log_gamma_ratio = 0.0;
          for (long j = 0; j < cell.y; ++j) log_gamma_ratio += std::log(phi + j);
        } else {
          log_gamma_ratio = std::lgamma(cell.y + phi) - lgamma_phi;
        }
        sum += log_gamma_ratio - cell.lgamma_y1 - phi * std::log1p(mu / phi) +
               cell.y * (std::log(mu) - std::log(phi + mu));
      } else if (cell.y > 0) {
        return -std::numeric_limits<double>::infinity();
      }
    }
    return sum;
  }

  double path_range(std::span<const double> theta, int from, int to) const {
    const double sigma = std::exp(theta[layout_.log_sigma_index()]);
    return epi_.path_logdensity_range(theta.subspan(0, layout_.n_days), sigma, beta_view(theta),
                                      from, to);
  }

  double prior_gamma_range(std::span<const double> theta, int from, int to) const {
    double sum = 0.0;
    for (int d = from; d < to; ++d) {
      sum += normal_logpdf(theta[layout_.gamma_offset() + d], 0.0, options_.priors.gamma_scale);
    }
    return sum;
  }

  double prior_eta_range(std::span<const double> theta, int from, int to) const {
    double sum = 0.0;
    for (int j = from; j < to; ++j) {
      sum += normal_logpdf(theta[layout_.eta_offset() + j], 0.0, options_.priors.eta_scale);
    }
    return sum;
  }

  double prior_beta(std::span<const double> theta) const {
    double sum = 0.0;
    for (int j = 0; j < layout_.n_beta; ++j) {
      sum += normal_logpdf(theta[layout_.beta_offset() + j], 0.0, options_.priors.beta_scale);
    }
    return sum;
  }

  // HalfNormal prior on sigma plus the log|d sigma / d log sigma| Jacobian.
  double prior_log_sigma(std::span<const double> theta) const {
    const double log_sigma = theta[layout_.log_sigma_index()];
    return half_normal_logpdf(std::exp(log_sigma), options_.priors.sigma_scale) + log_sigma;
  }

  // HalfNormal prior on 1/sqrt(phi); with tau = exp(-log_phi/2) the Jacobian
  // is tau/2.
  double prior_log_phi(std::span<const double> theta) const {
    const double tau = std::exp(-0.5 * theta[layout_.log_phi_index()]);
    return half_normal_logpdf(tau, options_.priors.inv_sqrt_phi_scale) + std::log(tau / 2.0);
  }

  ReportingTriangle triangle_;
  HazardDesign design_;
  EpiCurveModel epi_;
  std::vector<std::string> indicator_names_;
  PosteriorOptions options_;
  ParamLayout layout_;
  std::vector<bool> reporting_;  // [t][d]: t+d is a reporting day (or d == D)
  std::vector<std::vector<ObsCell>> obs_cells_;
  std::vector<std::vector<int>> pred_cells_;
  std::vector<double> frozen_beta_;
};

// Largest relative mismatch between the analytic gradient and central finite
// differences; independent check used before HMC runs and in tests.
template <class Target>
double gradient_max_rel_error(const Target& target, std::span<const double> theta,
                              double eps = 1e-5) {
  std::vector<double> grad = target.gradient(theta);
  std::vector<double> point(theta.begin(), theta.end());
  double worst = 0.0;
  for (size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + eps;
    const double up = target.log_density(point);
    point[i] = saved - eps;
    const double down = target.log_density(point);
    point[i] = saved;
    const double fd = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1.0});
    worst = std::max(worst, std::abs(fd - grad[i]) / denom);
  }
  return worst;
}

}  // namespace nowcast
