#pragma once

#include <cstdint>

#include "drift/dataset.hpp"

namespace drift {

struct ArmModels {
  Matrix Lambda0;  // K x p
  Matrix Lambda1;  // K x p
};

enum class IteMethod { randomized_ols, dr_learner };

struct FactorITE {
  Matrix B;  // p x K, column k = beta_k
  IteMethod method = IteMethod::randomized_ols;
};

struct PropensityModel {
  Vector coef;  // p
  double clip_lo = 0.01;
  double clip_hi = 0.99;

  double predict(const Vector& x) const;
};

// Per-arm OLS of each latent column on X.
ArmModels fit_arm_regressions(const Matrix& U, const Matrix& X,
                              const Eigen::VectorXi& A);

FactorITE factor_ite(const ArmModels& models);

Vector ite_predict(const FactorITE& ite, const Vector& x);

// Logistic MLE with ridge 1e-6; predictions clipped to [lo, hi].
PropensityModel fit_propensity(const Matrix& X, const Eigen::VectorXi& A,
                               double clip_lo = 0.01, double clip_hi = 0.99);

// Two-stage doubly robust learner: nuisance models on one half,
// pseudo-outcome regression on the other.
FactorITE dr_learner(const Matrix& U, const Matrix& X, const Eigen::VectorXi& A,
                     std::uint64_t split_seed);

// Newton-solved logistic MLE with an L2 penalty on the coefficients.
Vector ridge_logistic(const Matrix& D, const Vector& y, double ridge = 1e-6);

}  // namespace drift
