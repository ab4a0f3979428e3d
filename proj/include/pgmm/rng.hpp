#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "pgmm/stats.hpp"

namespace pgmm {

/// Deterministic RNG wrapper. Normal variates come from the inverse CDF so a
/// stream is a pure function of the seed (no library-dependent ziggurat state),
/// which is what makes rerun draw files bit-identical.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in (0,1), endpoints excluded so inverse-CDF transforms stay finite
  double uniform() {
    const double u = (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() { return normal_quantile(uniform()); }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

  int bernoulli() { return uniform() < 0.5 ? 1 : 0; }

  /// Derive an independent child seed; used for chain/replication fan-out.
  std::uint64_t derive() { return splitmix(gen_()); }

  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace pgmm
