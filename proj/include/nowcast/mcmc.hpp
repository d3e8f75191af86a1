#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "nowcast/common.hpp"
#include "nowcast/posterior.hpp"
#include "nowcast/rng.hpp"

namespace nowcast {

enum class Algorithm { adaptive_blockwise_metropolis, gradient_hmc };

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "adaptive_blockwise_metropolis") return Algorithm::adaptive_blockwise_metropolis;
  if (s == "gradient_hmc") return Algorithm::gradient_hmc;
  throw ConfigError("unknown algorithm '" + s + "'");
}

inline std::string algorithm_name(Algorithm a) {
  return a == Algorithm::gradient_hmc ? "gradient_hmc" : "adaptive_blockwise_metropolis";
}

struct SamplerConfig {
  int chains = 4;
  int warmup_iters = 1000;
  int sampling_iters = 1000;
  std::uint64_t seed = 0;
  Algorithm algorithm = Algorithm::adaptive_blockwise_metropolis;
  double target_acceptance = 0.0;  // 0 picks the algorithm default
  int workers = 1;
  int leapfrog_steps = 16;

  double resolved_target_acceptance() const {
    if (target_acceptance > 0.0) return target_acceptance;
    return algorithm == Algorithm::gradient_hmc ? 0.8 : 0.234;
  }

  void validate() const {
    if (chains < 1) throw ConfigError("chains must be >= 1");
    if (warmup_iters < 1) throw ConfigError("warmup_iters must be >= 1");
    if (sampling_iters < 1) throw ConfigError("sampling_iters must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (leapfrog_steps < 1) throw ConfigError("leapfrog_steps must be >= 1");
    if (target_acceptance < 0.0 || target_acceptance >= 1.0) {
      throw ConfigError("target_acceptance must lie in (0, 1)");
    }
  }
};

struct ParamDiagnostic {
  double rhat = std::numeric_limits<double>::quiet_NaN();
  double ess = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;
};

struct PosteriorSamples {
  int n_chains = 0;
  int n_iters = 0;  // post-warmup iterations per chain
  int n_params = 0;
  std::vector<std::string> parameter_names;
  std::vector<double> draws;  // [chain][iteration][parameter], row-major
  std::vector<std::string> block_names;
  std::vector<double> accept_rates;  // [chain][block], post-warmup
  std::vector<ParamDiagnostic> diagnostics;

  int total_draws() const { return n_chains * n_iters; }

  double value(int chain, int iter, int param) const {
    return draws[(static_cast<size_t>(chain) * n_iters + iter) * n_params + param];
  }

  std::span<const double> draw(int chain, int iter) const {
    return {draws.data() + (static_cast<size_t>(chain) * n_iters + iter) * n_params,
            static_cast<size_t>(n_params)};
  }

  int param_index(const std::string& name) const {
    for (int p = 0; p < n_params; ++p) {
      if (parameter_names[p] == name) return p;
    }
    throw ConfigError("unknown parameter '" + name + "'");
  }

  std::vector<double> chain_values(int chain, int param) const {
    std::vector<double> out(n_iters);
    for (int i = 0; i < n_iters; ++i) out[i] = value(chain, i, param);
    return out;
  }

  std::vector<double> pooled(int param) const {
    std::vector<double> out;
    out.reserve(total_draws());
    for (int c = 0; c < n_chains; ++c) {
      for (int i = 0; i < n_iters; ++i) out.push_back(value(c, i, param));
    }
    return out;
  }

  double accept_rate(int chain, int block) const {
    return accept_rates[static_cast<size_t>(chain) * block_names.size() + block];
  }

  double mean_accept_rate() const {
    if (accept_rates.empty()) return 0.0;
    double sum = 0.0;
    for (double a : accept_rates) sum += a;
    return sum / static_cast<double>(accept_rates.size());
  }
};

namespace detail {

inline void check_diagnostic_shape(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw ConfigError("diagnostics need at least 2 chains");
  for (const auto& c : chains) {
    if (c.size() < 4) throw ConfigError("diagnostics need at least 4 iterations per chain");
    if (c.size() != chains.front().size()) {
      throw ConfigError("diagnostics need equal-length chains");
    }
  }
}

inline double sequence_mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double sequence_var(std::span<const double> x, double mean) {
  double s = 0.0;
  for (double v : x) s += (v - mean) * (v - mean);
  return s / static_cast<double>(x.size() - 1);
}

}  // namespace detail

// Split-chain potential scale reduction. Chains that are identical copies of
// one another (or outright constant) carry no between-chain information and
// are reported as degenerate with value exactly 1.
inline ParamDiagnostic split_rhat(const std::vector<std::vector<double>>& chains) {
  detail::check_diagnostic_shape(chains);
  bool all_identical = true;
  for (size_t c = 1; c < chains.size() && all_identical; ++c) {
    all_identical = chains[c] == chains[0];
  }
  bool constant = true;
  for (const auto& chain : chains) {
    for (double v : chain) {
      if (v != chains[0][0]) {
        constant = false;
        break;
      }
    }
    if (!constant) break;
  }
  if (all_identical || constant) return {1.0, std::numeric_limits<double>::quiet_NaN(), true};

  const size_t half = chains.front().size() / 2;
  std::vector<std::span<const double>> seqs;
  for (const auto& chain : chains) {
    seqs.emplace_back(chain.data(), half);
    seqs.emplace_back(chain.data() + (chain.size() - half), half);
  }
  const double m = static_cast<double>(seqs.size());
  const double n = static_cast<double>(half);
  std::vector<double> means(seqs.size());
  double grand = 0.0;
  for (size_t j = 0; j < seqs.size(); ++j) {
    means[j] = detail::sequence_mean(seqs[j]);
    grand += means[j];
  }
  grand /= m;
  double b = 0.0, w = 0.0;
  for (size_t j = 0; j < seqs.size(); ++j) {
    b += (means[j] - grand) * (means[j] - grand);
    w += detail::sequence_var(seqs[j], means[j]);
  }
  b *= n / (m - 1.0);
  w /= m;
  if (w <= 0.0) return {1.0, std::numeric_limits<double>::quiet_NaN(), true};
  const double var_plus = (n - 1.0) / n * w + b / n;
  ParamDiagnostic out;
  out.rhat = std::sqrt(var_plus / w);
  return out;
}

// Effective sample size from combined-chain autocorrelations with Geyer's
// initial-monotone-positive truncation; capped at the total draw count.
inline ParamDiagnostic ess_estimate(const std::vector<std::vector<double>>& chains) {
  detail::check_diagnostic_shape(chains);
  const size_t m = chains.size();
  const size_t n = chains.front().size();
  const double total = static_cast<double>(m * n);

  std::vector<double> means(m);
  double w = 0.0;
  for (size_t j = 0; j < m; ++j) {
    means[j] = detail::sequence_mean(chains[j]);
    w += detail::sequence_var(chains[j], means[j]);
  }
  w /= static_cast<double>(m);
  double b_over_n = 0.0;
  double grand = 0.0;
  for (double mu : means) grand += mu;
  grand /= static_cast<double>(m);
  for (double mu : means) b_over_n += (mu - grand) * (mu - grand);
  b_over_n /= static_cast<double>(m - 1);
  const double var_plus = (static_cast<double>(n) - 1.0) / static_cast<double>(n) * w + b_over_n;
  if (!(var_plus > 0.0) || !(w > 0.0)) {
    return {std::numeric_limits<double>::quiet_NaN(), total, true};
  }

  auto combined_rho = [&](size_t t) {
    double acov = 0.0;
    for (size_t j = 0; j < m; ++j) {
      const auto& x = chains[j];
      double s = 0.0;
      for (size_t i = 0; i + t < n; ++i) s += (x[i] - means[j]) * (x[i + t] - means[j]);
      acov += s / static_cast<double>(n);
    }
    acov /= static_cast<double>(m);
    return 1.0 - (w - acov) / var_plus;
  };

  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = combined_rho(2 * k) + combined_rho(2 * k + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / total);
  ParamDiagnostic out;
  out.ess = std::min(total / tau, total);
  return out;
}

inline std::vector<std::vector<double>> extract_chains(const PosteriorSamples& s, int param) {
  std::vector<std::vector<double>> chains(s.n_chains);
  for (int c = 0; c < s.n_chains; ++c) chains[c] = s.chain_values(c, param);
  return chains;
}

inline double rhat(const PosteriorSamples& samples, const std::string& parameter) {
  return split_rhat(extract_chains(samples, samples.param_index(parameter))).rhat;
}

inline double ess(const PosteriorSamples& samples, const std::string& parameter) {
  return ess_estimate(extract_chains(samples, samples.param_index(parameter))).ess;
}

inline void compute_diagnostics(PosteriorSamples& samples) {
  samples.diagnostics.assign(samples.n_params, {});
  if (samples.n_chains < 2 || samples.n_iters < 4) return;
  for (int p = 0; p < samples.n_params; ++p) {
    const auto chains = extract_chains(samples, p);
    ParamDiagnostic d = split_rhat(chains);
    ParamDiagnostic e = ess_estimate(chains);
    d.ess = e.ess;
    d.degenerate = d.degenerate || e.degenerate;
    samples.diagnostics[p] = d;
  }
}

namespace detail {

template <class Target>
std::vector<double> draw_initial_state(const Target& target, RngStream& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<double> theta = target.initial_state(rng);
    if (std::isfinite(target.log_density(theta))) return theta;
  }
  throw InferenceError("initialization failed: non-finite posterior after 100 attempts");
}

// Running covariance of the warmup trajectory; its leading principal
// directions drive the ridge moves. A chain that is still drifting inflates
// exactly the directions it drifts along, so the estimate points at the
// slow valleys even before convergence.
class TrajectoryCovariance {
 public:
  explicit TrajectoryCovariance(int dim)
      : k_(dim), mean_(dim, 0.0), delta_old_(dim, 0.0),
        scatter_(static_cast<size_t>(dim) * dim, 0.0) {}

  void observe(const std::vector<double>& theta) {
    ++n_;
    for (int i = 0; i < k_; ++i) delta_old_[i] = theta[i] - mean_[i];
    for (int i = 0; i < k_; ++i) mean_[i] += delta_old_[i] / static_cast<double>(n_);
    for (int i = 0; i < k_; ++i) {
      const double delta_new = theta[i] - mean_[i];
      for (int j = 0; j <= i; ++j) {
        scatter_[static_cast<size_t>(i) * k_ + j] += delta_old_[j] * delta_new;
      }
    }
  }

  // Drop the accumulated moments; the next window re-estimates geometry
  // from better-mixed states.
  void restart() {
    n_ = 0;
    std::fill(mean_.begin(), mean_.end(), 0.0);
    std::fill(scatter_.begin(), scatter_.end(), 0.0);
  }

  // Marginal standard deviations into `sd` (1.0 where the window is still
  // too short); used as a diagonal preconditioner for multi-site blocks.
  void marginal_sd(std::vector<double>& sd) const {
    sd.assign(k_, 1.0);
    if (n_ < 100) return;
    for (int i = 0; i < k_; ++i) {
      const double v = scatter_[static_cast<size_t>(i) * k_ + i] / (n_ - 1.0);
      if (v > 0.0) sd[i] = std::sqrt(v);
    }
  }

  // Lower-triangular Cholesky factor of the covariance of coordinates
  // [first, first+count) into `chol` (row-major count x count); false while
  // the window is too short or the sub-block is numerically degenerate.
  bool block_cholesky(int first, int count, std::vector<double>& chol) const {
    if (n_ < 100 || count < 2) return false;
    std::vector<double> c(static_cast<size_t>(count) * count, 0.0);
    double mean_var = 0.0;
    for (int i = 0; i < count; ++i) {
      for (int j = 0; j <= i; ++j) {
        c[static_cast<size_t>(i) * count + j] =
            scatter_[static_cast<size_t>(first + i) * k_ + first + j] / (n_ - 1.0);
      }
      mean_var += c[static_cast<size_t>(i) * count + i];
    }
    mean_var /= count;
    if (!(mean_var > 0.0)) return false;
    for (int i = 0; i < count; ++i) c[static_cast<size_t>(i) * count + i] += 1e-8 * mean_var;
    chol.assign(static_cast<size_t>(count) * count, 0.0);
    for (int i = 0; i < count; ++i) {
      for (int j = 0; j <= i; ++j) {
        double s = c[static_cast<size_t>(i) * count + j];
        for (int m = 0; m < j; ++m) {
          s -= chol[static_cast<size_t>(i) * count + m] * chol[static_cast<size_t>(j) * count + m];
        }
        if (i == j) {
          if (s <= 0.0) return false;
          chol[static_cast<size_t>(i) * count + i] = std::sqrt(s);
        } else {
          chol[static_cast<size_t>(i) * count + j] = s / chol[static_cast<size_t>(j) * count + j];
        }
      }
    }
    return true;
  }

  // Writes up to `want` rows of sqrt(eigenvalue) * unit eigenvector into
  // `rows` (row-major want x dim) and returns how many were produced.
  int top_directions(int want, std::vector<double>& rows) const {
    rows.assign(static_cast<size_t>(want) * k_, 0.0);
    if (n_ < 100) return 0;
    std::vector<double> c(static_cast<size_t>(k_) * k_);
    for (int i = 0; i < k_; ++i) {
      for (int j = 0; j <= i; ++j) {
        const double v = scatter_[static_cast<size_t>(i) * k_ + j] / (n_ - 1.0);
        c[static_cast<size_t>(i) * k_ + j] = v;
        c[static_cast<size_t>(j) * k_ + i] = v;
      }
    }
    std::vector<double> v(k_), w(k_);
    for (int r = 0; r < want; ++r) {
      int pivot = 0;
      for (int i = 1; i < k_; ++i) {
        if (c[static_cast<size_t>(i) * k_ + i] > c[static_cast<size_t>(pivot) * k_ + pivot]) {
          pivot = i;
        }
      }
      if (c[static_cast<size_t>(pivot) * k_ + pivot] <= 1e-300) return r;
      std::fill(v.begin(), v.end(), 0.0);
      v[pivot] = 1.0;
      double eig = 0.0;
      for (int step = 0; step < 80; ++step) {
        for (int i = 0; i < k_; ++i) {
          double s = 0.0;
          for (int j = 0; j < k_; ++j) s += c[static_cast<size_t>(i) * k_ + j] * v[j];
          w[i] = s;
        }
        double norm = 0.0;
        for (double x : w) norm += x * x;
        norm = std::sqrt(norm);
        if (norm <= 1e-300) return r;
        for (int i = 0; i < k_; ++i) v[i] = w[i] / norm;
        eig = norm;
      }
      for (int i = 0; i < k_; ++i) rows[static_cast<size_t>(r) * k_ + i] = std::sqrt(eig) * v[i];
      for (int i = 0; i < k_; ++i) {
        for (int j = 0; j < k_; ++j) {
          c[static_cast<size_t>(i) * k_ + j] -= eig * v[i] * v[j];
        }
      }
    }
    return want;
  }

 private:
  int k_;
  long n_ = 0;
  std::vector<double> mean_;
  std::vector<double> delta_old_;
  std::vector<double> scatter_;
};

template <class Target>
void run_metropolis_chain(const Target& target, const SamplerConfig& config, int chain_index,
                          const std::vector<SamplerBlock>& blocks, double* draw_out,
                          double* accept_out) {
  RngStream rng(derive_seed(config.seed, static_cast<std::uint64_t>(chain_index) + 1, 1));
  std::vector<double> theta = draw_initial_state(target, rng);
  const int dim = static_cast<int>(theta.size());
  const double target_accept = config.resolved_target_acceptance();

  std::vector<double> log_scale(blocks.size(), std::log(0.1));
  std::vector<int> eigen_index(blocks.size(), -1);
  int n_eigen = 0;
  for (size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].eigen_move) {
      eigen_index[b] = n_eigen++;
      log_scale[b] = 0.0;
    }
  }
  TrajectoryCovariance trajectory(dim);
  std::vector<double> ridge_dirs;
  int ridge_ready = 0;
  std::vector<double> coord_sd(dim, 1.0);
  std::vector<std::vector<double>> block_chol(blocks.size());
  std::vector<double> z;
  std::vector<long> accept_count(blocks.size(), 0);
  std::vector<double> proposal(theta);
  const int total_iters = config.warmup_iters + config.sampling_iters;

  for (int iter = 0; iter < total_iters; ++iter) {
    const bool warming = iter < config.warmup_iters;
    for (size_t b = 0; b < blocks.size(); ++b) {
      const SamplerBlock& block = blocks[b];
      const double scale = std::exp(log_scale[b]);
      double log_jacobian = 0.0;
      if (block.target_proposal) {
        if constexpr (requires {
                        target.propose_block(block, theta, proposal,
                                             std::span<const double>{},
                                             std::span<const double>{}, scale, rng);
                      }) {
          log_jacobian = target.propose_block(block, theta, proposal,
                                              std::span<const double>{block_chol[b]},
                                              std::span<const double>{coord_sd}, scale, rng);
        }
      } else if (block.eigen_move) {
        const double g = scale * rng.normal();
        const int r = eigen_index[b];
        if (r >= ridge_ready) continue;
        const double* dir = ridge_dirs.data() + static_cast<size_t>(r) * dim;
        for (int j = 0; j < block.count; ++j) {
          proposal[block.first + j] = theta[block.first + j] + g * dir[block.first + j];
        }
      } else if (block.scale_driver >= 0) {
        const double eps = scale * rng.normal();
        double mean = 0.0;
        for (int j = 0; j < block.count; ++j) mean += theta[block.first + j];
        mean /= block.count;
        const double stretch = std::exp(eps);
        for (int j = 0; j < block.count; ++j) {
          proposal[block.first + j] = mean + stretch * (theta[block.first + j] - mean);
        }
        proposal[block.scale_driver] = theta[block.scale_driver] + eps;
        log_jacobian = (block.count - 1) * eps;
      } else if (block.shared_increment) {
        const double eps = scale * rng.normal();
        for (int j = 0; j < block.count; ++j) proposal[block.first + j] = theta[block.first + j] + eps;
      } else if (!block_chol[b].empty()) {
        const std::vector<double>& chol = block_chol[b];
        z.resize(static_cast<size_t>(block.count));
        for (int j = 0; j < block.count; ++j) z[j] = rng.normal();
        for (int j = 0; j < block.count; ++j) {
          double step = 0.0;
          for (int m = 0; m <= j; ++m) {
            step += chol[static_cast<size_t>(j) * block.count + m] * z[m];
          }
          proposal[block.first + j] = theta[block.first + j] + scale * step;
        }
      } else {
        for (int j = 0; j < block.count; ++j) {
          proposal[block.first + j] =
              theta[block.first + j] + scale * coord_sd[block.first + j] * rng.normal();
        }
      }
      const double before = target.block_log_density(theta, block);
      const double after = target.block_log_density(proposal, block);
      const double log_alpha = after - before + log_jacobian;
      const bool accept = std::isfinite(after) && std::log(rng.uniform()) < log_alpha;
      if (accept) {
        for (int j = 0; j < block.count; ++j) theta[block.first + j] = proposal[block.first + j];
        if (block.scale_driver >= 0) theta[block.scale_driver] = proposal[block.scale_driver];
      } else {
        for (int j = 0; j < block.count; ++j) proposal[block.first + j] = theta[block.first + j];
        if (block.scale_driver >= 0) proposal[block.scale_driver] = theta[block.scale_driver];
      }
      if (warming) {
        double alpha = 0.0;
        if (log_alpha >= 0.0) {
          alpha = 1.0;
        } else if (std::isfinite(log_alpha)) {
          alpha = std::exp(log_alpha);
        }
        log_scale[b] += (alpha - target_accept) / std::pow(iter + 1.0, 0.6);
      } else if (accept) {
        ++accept_count[b];
      }
    }
    if (warming && n_eigen > 0) {
      if (iter + 1 == config.warmup_iters / 2) trajectory.restart();
      trajectory.observe(theta);
      if ((iter + 1) % 100 == 0) {
        std::vector<double> fresh;
        const int got = trajectory.top_directions(n_eigen, fresh);
        // keep serving the previous window's directions until the new
        // window has enough states behind it
        if (got > 0) {
          ridge_dirs = std::move(fresh);
          ridge_ready = got;
          trajectory.marginal_sd(coord_sd);
          for (size_t bb = 0; bb < blocks.size(); ++bb) {
            const SamplerBlock& blk = blocks[bb];
            int cov_first = blk.first;
            int cov_count = blk.count;
            if (blk.target_proposal) {
              cov_first = blk.drive_first;
              cov_count = blk.drive_count;
            } else if (blk.eigen_move || blk.shared_increment || blk.scale_driver >= 0) {
              continue;
            }
            if (cov_first < 0 || cov_count < 2) continue;
            std::vector<double> chol;
            if (trajectory.block_cholesky(cov_first, cov_count, chol)) {
              block_chol[bb] = std::move(chol);
            }
          }
        }
      }
    }
    if (!warming) {
      const int keep = iter - config.warmup_iters;
      double* row = draw_out + static_cast<size_t>(keep) * dim;
      std::copy(theta.begin(), theta.end(), row);
    }
  }
  for (size_t b = 0; b < blocks.size(); ++b) {
    accept_out[b] = static_cast<double>(accept_count[b]) / config.sampling_iters;
  }
}

template <class Target>
void run_hmc_chain(const Target& target, const SamplerConfig& config, int chain_index,
                   double* draw_out, double* accept_out) {
  RngStream rng(derive_seed(config.seed, static_cast<std::uint64_t>(chain_index) + 1, 2));
  std::vector<double> theta = draw_initial_state(target, rng);
  const int dim = static_cast<int>(theta.size());
  const double target_accept = config.resolved_target_acceptance();

  double log_eps = std::log(0.01);
  std::vector<double> inv_mass(dim, 1.0);
  std::vector<double> warm_sum(dim, 0.0), warm_sumsq(dim, 0.0);
  int warm_n = 0;
  const int mass_update_at = config.warmup_iters / 2;

  std::vector<double> momentum(dim), grad(dim), pos(dim);
  long accepted = 0;
  const int total_iters = config.warmup_iters + config.sampling_iters;

  for (int iter = 0; iter < total_iters; ++iter) {
    const bool warming = iter < config.warmup_iters;
    const double eps = std::exp(log_eps);
    const int steps = 1 + static_cast<int>(rng.uniform() * config.leapfrog_steps);

    double kinetic0 = 0.0;
    for (int i = 0; i < dim; ++i) {
      momentum[i] = rng.normal() / std::sqrt(inv_mass[i]);
      kinetic0 += 0.5 * momentum[i] * momentum[i] * inv_mass[i];
    }
    pos = theta;
    const double logp0 = target.log_density(pos);
    grad = target.gradient(pos);
    std::vector<double> p(momentum);
    for (int s = 0; s < steps; ++s) {
      for (int i = 0; i < dim; ++i) p[i] += 0.5 * eps * grad[i];
      for (int i = 0; i < dim; ++i) pos[i] += eps * p[i] * inv_mass[i];
      grad = target.gradient(pos);
      for (int i = 0; i < dim; ++i) p[i] += 0.5 * eps * grad[i];
    }
    const double logp1 = target.log_density(pos);
    double kinetic1 = 0.0;
    for (int i = 0; i < dim; ++i) kinetic1 += 0.5 * p[i] * p[i] * inv_mass[i];
    const double log_alpha = (logp1 - kinetic1) - (logp0 - kinetic0);
    double alpha = 0.0;
    if (log_alpha >= 0.0) {
      alpha = 1.0;
    } else if (std::isfinite(log_alpha)) {
      alpha = std::exp(log_alpha);
    }
    const bool accept = std::log(rng.uniform()) < log_alpha;
    if (accept) theta = pos;

    if (warming) {
      log_eps += (alpha - target_accept) / std::pow(iter + 1.0, 0.6);
      if (iter < mass_update_at) {
        for (int i = 0; i < dim; ++i) {
          warm_sum[i] += theta[i];
          warm_sumsq[i] += theta[i] * theta[i];
        }
        ++warm_n;
      } else if (iter == mass_update_at && warm_n > 10) {
        for (int i = 0; i < dim; ++i) {
          const double mean = warm_sum[i] / warm_n;
          const double var = warm_sumsq[i] / warm_n - mean * mean;
          inv_mass[i] = std::max(var, 1e-6);
        }
      }
    } else {
      if (accept) ++accepted;
      const int keep = iter - config.warmup_iters;
      double* row = draw_out + static_cast<size_t>(keep) * dim;
      std::copy(theta.begin(), theta.end(), row);
    }
  }
  accept_out[0] = static_cast<double>(accepted) / config.sampling_iters;
}

template <class Target>
std::vector<std::string> target_parameter_names(const Target& target, int dim) {
  if constexpr (requires { target.parameter_names(); }) {
    return target.parameter_names();
  } else {
    std::vector<std::string> names;
    for (int i = 0; i < dim; ++i) names.push_back(strf("theta[%d]", i));
    return names;
  }
}

template <class Target>
std::vector<SamplerBlock> target_blocks(const Target& target, int dim) {
  if constexpr (requires { target.blocks(); }) {
    return target.blocks();
  } else {
    return {{"all", BlockKind::all, 0, dim}};
  }
}

}  // namespace detail

// Draws posterior samples from any target exposing dim(), log_density and
// initial_state; block structure, names and gradients are picked up when the
// target provides them. Chains run on private RNG streams and are merged by
// index, so the result does not depend on scheduling.
template <class Target>
PosteriorSamples sample_posterior(const Target& target, const SamplerConfig& config) {
  config.validate();
  const int dim = target.dim();
  const bool hmc = config.algorithm == Algorithm::gradient_hmc;

  std::vector<SamplerBlock> blocks;
  if (hmc) {
    if constexpr (requires(std::span<const double> t) { target.gradient(t); }) {
      RngStream probe(derive_seed(config.seed, 0, 99));
      std::vector<double> theta0 = detail::draw_initial_state(target, probe);
      const double err = gradient_max_rel_error(target, theta0);
      if (!(err < 1e-4)) {
        throw InferenceError(
            strf("gradient_hmc: finite-difference gradient check failed (rel error %.3g)", err));
      }
      blocks.push_back({"hmc", BlockKind::all, 0, dim});
    } else {
      throw ConfigError("gradient_hmc requires a target with an analytic gradient");
    }
  } else {
    blocks = detail::target_blocks(target, dim);
  }

  PosteriorSamples out;
  out.n_chains = config.chains;
  out.n_iters = config.sampling_iters;
  out.n_params = dim;
  out.parameter_names = detail::target_parameter_names(target, dim);
  out.draws.assign(static_cast<size_t>(config.chains) * config.sampling_iters * dim, 0.0);
  for (const auto& b : blocks) out.block_names.push_back(b.name);
  out.accept_rates.assign(static_cast<size_t>(config.chains) * blocks.size(), 0.0);

  auto run_chain = [&](int c) {
    double* draw_out = out.draws.data() + static_cast<size_t>(c) * config.sampling_iters * dim;
    double* accept_out = out.accept_rates.data() + static_cast<size_t>(c) * blocks.size();
    if (hmc) {
      if constexpr (requires(std::span<const double> t) { target.gradient(t); }) {
        detail::run_hmc_chain(target, config, c, draw_out, accept_out);
      }
    } else {
      detail::run_metropolis_chain(target, config, c, blocks, draw_out, accept_out);
    }
  };

  const int n_workers = std::min(config.workers, config.chains);
  if (n_workers <= 1) {
    for (int c = 0; c < config.chains; ++c) run_chain(c);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n_workers);
    for (int w = 0; w < n_workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int c = next.fetch_add(1); c < config.chains; c = next.fetch_add(1)) run_chain(c);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  compute_diagnostics(out);
  return out;
}

}  // namespace nowcast
