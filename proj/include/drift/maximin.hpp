#pragma once

#include "drift/effects.hpp"
#include "drift/on_target.hpp"

namespace drift {

struct XiMatrix {
  Matrix Xi;            // K x K, symmetric PSD (clamped)
  double min_eig = 0.0; // smallest eigenvalue before clamping
};

struct MaximinSolution {
  Vector gamma_star;
  double lambda_star = 0.0;
  double objective = 0.0;
  double constraint_residual = 0.0;
  int iterations = 0;
};

enum class GeoSource { observed, minimax_center };

struct DriftOptions {
  GeoSource geo = GeoSource::observed;
  bool delta_auto = true;
  double delta = 0.0;  // used when delta_auto == false
  IteMethod method = IteMethod::randomized_ols;
  std::uint64_t split_seed = 1;  // dr_learner half-split
};

struct DriftModel {
  FactorFit factor_fit;
  FactorITE ite;
  Representation anchor;
  double delta = 0.0;
  Vector gamma_star;
  GeoSource geo_source = GeoSource::observed;
  ExcessLossEvaluator evaluator;
  MaximinSolution solution;
};

XiMatrix empirical_xi(const FactorITE& ite, const Matrix& X);

// min gamma' Xi gamma over the on-target set, via Lagrangian dual bisection
// with an envelope-gradient inner descent.
MaximinSolution solve_maximin(const XiMatrix& xi, const OnTargetSet& set);

// Closed-form special case: ellipsoid constraint
// (gamma - anchor)' Gc (gamma - anchor) <= delta, solved through the 1-D
// secular equation in the dual multiplier.
MaximinSolution solve_maximin_ellipsoid(const XiMatrix& xi,
                                        const Vector& anchor_gamma,
                                        const Matrix& Gc, double delta);

// Observed-only baseline: min over simplex-weighted item loadings.
Vector obs_maximin(const XiMatrix& xi, const std::vector<Representation>& items,
                   double gap_tol = 1e-8, int max_iter = 200000);

DriftModel run_drift(const ResponseDataset& dataset, const FactorConfig& config,
                     const DriftOptions& options);

double drift_predict(const DriftModel& model, const Vector& x);

int itr_assign(const DriftModel& model, const Vector& x);

}  // namespace drift
