#pragma once

#include <vector>

#include "drift/factor.hpp"

namespace drift {

// A factorized outcome z -> gamma.z - zeta.
struct Representation {
  Vector gamma;
  double zeta = 0.0;

  Vector eval(const Matrix& U) const {
    return (U * gamma).array() - zeta;
  }
};

// Empirical excess-loss operator d_O anchored at the fitted GEO
// representation. targets holds observed o_i, or expit(anchor(z_i)) when the
// GEO is unobserved.
struct ExcessLossEvaluator {
  Matrix U;
  Vector targets;
  ItemKind kind = ItemKind::binary;
  Representation anchor;
  double anchor_loss = 0.0;

  double mean_loss(const Representation& phi) const;
};

struct OnTargetSet {
  ExcessLossEvaluator evaluator;
  double delta = 0.0;
};

struct ProfiledExcess {
  double value = 0.0;
  double zeta_star = 0.0;
};

Representation fit_geo_observed(const Matrix& U, const Vector& o, ItemKind kind);

std::vector<Representation> item_representations(const FactorFit& fit);

struct MinimaxCenterResult {
  Representation center;
  Vector weights;   // simplex weights over items
  double value = 0.0;
  double gap = 0.0;
  int iterations = 0;
};

MinimaxCenterResult minimax_center(const Matrix& U,
                                   const std::vector<Representation>& items,
                                   double gap_tol = 1e-8, int max_iter = 5000);

// Evaluator factories; both verify anchor optimality against a probe set.
ExcessLossEvaluator make_observed_evaluator(const Matrix& U, const Vector& o,
                                            ItemKind kind);
ExcessLossEvaluator build_unobserved_geo_evaluator(const FactorFit& fit,
                                                   ItemKind kind = ItemKind::binary);

double excess_loss(const ExcessLossEvaluator& ev, const Representation& phi);

ProfiledExcess profiled_excess(const ExcessLossEvaluator& ev, const Vector& gamma);

double default_radius(const ExcessLossEvaluator& ev,
                      const std::vector<Representation>& items);

}  // namespace drift
