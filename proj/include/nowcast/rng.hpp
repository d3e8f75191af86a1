#pragma once

#include <cstdint>
#include <random>

#include "nowcast/common.hpp"

namespace nowcast {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic derivation of independent substreams from a master seed.
// Used for per-chain, per-date and per-draw streams so that parallel
// execution order never affects results.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(master ^ 0x6a09e667f3bcc909ULL) ^ splitmix64(a) ^
                    splitmix64(splitmix64(b) + 0x3c6ef372fe94f82bULL));
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double gamma(double shape, double scale) {
    return std::gamma_distribution<double>(shape, scale)(gen_);
  }

  long poisson(double mean) {
    if (mean <= 0.0) return 0;
    return std::poisson_distribution<long>(mean)(gen_);
  }

  // Negative binomial with mean mu and variance mu + mu^2/phi,
  // sampled as a gamma-Poisson mixture.
  long negative_binomial(double mu, double phi) {
    if (mu <= 0.0) return 0;
    if (phi <= 0.0) throw Error("negative_binomial: phi must be > 0");
    double rate = gamma(phi, mu / phi);
    return poisson(rate);
  }

  std::uint64_t next_u64() { return gen_(); }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace nowcast
