#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace drift {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic RNG with explicit samplers. Replication streams are keyed by
// mixing the base seed with stream indices, so replication-level parallelism
// cannot change results.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return Rng(splitmix64(seed ^ splitmix64(a + 1)) ^ splitmix64(b + 0x9e37ULL));
  }

  double uniform() {
    // 53-bit mantissa uniform in [0, 1)
    return (engine_() >> 11) * 0x1.0p-53;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Marsaglia-Tsang; boosted for shape < 1
  double gamma(double shape) {
    if (shape <= 0.0) throw std::invalid_argument("gamma: shape must be > 0");
    if (shape < 1.0) {
      double u;
      do {
        u = uniform();
      } while (u <= 0.0);
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }

  double beta(double a, double b) {
    double ga = gamma(a);
    double gb = gamma(b);
    return ga / (ga + gb);
  }

  Eigen::VectorXd gaussian_vector(Eigen::Index k) {
    Eigen::VectorXd v(k);
    for (Eigen::Index i = 0; i < k; ++i) v[i] = normal();
    return v;
  }

  Eigen::VectorXd unit_sphere(Eigen::Index k) {
    Eigen::VectorXd v;
    double n;
    do {
      v = gaussian_vector(k);
      n = v.norm();
    } while (n < 1e-12);
    return v / n;
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// von Mises-Fisher draw on the unit sphere in R^K (Ulrich/Wood rejection
// scheme for the radial component, uniform tangential direction).
Eigen::VectorXd sample_vmf(const Eigen::VectorXd& mu, double kappa, Rng& rng);

}  // namespace drift
