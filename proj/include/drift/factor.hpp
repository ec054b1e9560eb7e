#pragma once

#include <cstdint>
#include <vector>

#include "drift/dataset.hpp"

namespace drift {

enum class FactorInit { svd, random };

struct Backtracking {
  double initial_step = 1.0;
  double shrink = 0.5;
  double armijo_const = 1e-4;
  int max_halvings = 30;
};

struct FactorConfig {
  int K = 3;
  double C = 0.0;  // <= 0 means default 5*sqrt(K)
  int max_sweeps = 500;
  double tol = 1e-6;  // relative objective change
  Backtracking backtracking;
  FactorInit init = FactorInit::svd;
  std::uint64_t seed = 0;

  double radius() const { return C > 0.0 ? C : 5.0 * std::sqrt(double(K)); }
  void validate() const {
    if (K < 1) throw std::invalid_argument("config: K must be positive");
    if (radius() <= 1.0) throw std::invalid_argument("config: C must be > 1");
    if (tol <= 0.0) throw std::invalid_argument("config: tol must be > 0");
  }
};

struct FactorFit {
  Matrix U;     // N x K, rows z_i
  Matrix W;     // J x K, rows alpha_j
  Vector zeta;  // J
  std::vector<double> objective_trace;
  bool converged = false;
  bool random_fallback = false;  // SVD init degenerate, fell back to random
};

// Affine change of latent coordinates Z -> Q Z + mu.
struct Reparam {
  Matrix Q;
  Vector mu;
};

// Project a subject row onto { 1 + ||z||^2 <= C^2 }.
Vector project_subject(const Vector& z, double C);

// Project item parameters onto { zeta^2 + ||alpha||^2 <= C^2 }.
std::pair<double, Vector> project_item(double zeta, const Vector& alpha, double C);

FactorFit init_factors(const ResponseDataset& data, const FactorConfig& config);

FactorFit fit_cjmle(const ResponseDataset& data, const FactorConfig& config);

// Natural-parameter matrix M[i,j] = z_i . alpha_j - zeta_j.
Matrix natural_params(const FactorFit& fit);

double cjmle_objective(const ResponseDataset& data, const FactorFit& fit);

FactorFit apply_reparam(const FactorFit& fit, const Reparam& rep);

}  // namespace drift
