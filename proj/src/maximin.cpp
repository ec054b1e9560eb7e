#include "drift/maximin.hpp"

#include <Eigen/Eigenvalues>
#include <limits>
#include <sstream>

namespace drift {

XiMatrix empirical_xi(const FactorITE& ite, const Matrix& X) {
  const double N = double(X.rows());
  Matrix second = (X.transpose() * X) / N;
  Matrix xi = ite.B.transpose() * second * ite.B;
  xi = 0.5 * (xi + xi.transpose());

  Eigen::SelfAdjointEigenSolver<Matrix> es(xi);
  XiMatrix out;
  out.min_eig = es.eigenvalues().minCoeff();
  if (out.min_eig < 0.0) {
    Vector ev = es.eigenvalues().cwiseMax(0.0);
    xi = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    xi = 0.5 * (xi + xi.transpose());
  }
  out.Xi = xi;
  return out;
}

namespace {

// d(gamma) = ell'(target, u) at the profiled zeta; envelope theorem gives the
// gamma-gradient without differentiating zeta*(gamma).
Vector profiled_excess_grad(const ExcessLossEvaluator& ev, const Vector& gamma,
                            double zeta_star) {
  const Eigen::Index N = ev.U.rows();
  Vector u = (ev.U * gamma).array() - zeta_star;
  Vector g(N);
  for (Eigen::Index i = 0; i < N; ++i)
    g[i] = item_loss_grad(ev.kind, ev.targets[i], u[i]);
  return (ev.U.transpose() * g) / double(N);
}

// Hessian of the profiled excess via the Schur complement of the joint
// (gamma, zeta) Hessian, eliminating zeta at its profiled optimum.
Matrix profiled_excess_hess(const ExcessLossEvaluator& ev, const Vector& gamma,
                            double zeta_star) {
  const Eigen::Index N = ev.U.rows();
  const Vector u = (ev.U * gamma).array() - zeta_star;
  Vector w(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    if (ev.kind == ItemKind::continuous) {
      w[i] = 2.0;
    } else {
      const double mu = expit(u[i]);
      w[i] = mu * (1.0 - mu);
    }
  }
  const Matrix Hgg = ev.U.transpose() * w.asDiagonal() * ev.U / double(N);
  const Vector Hgz = -(ev.U.transpose() * w) / double(N);
  const double Hzz = w.mean();
  if (Hzz <= 1e-300) return Hgg;
  return Hgg - (Hgz * Hgz.transpose()) / Hzz;
}

struct InnerResult {
  Vector gamma;
  double excess = 0.0;
  int iterations = 0;
};

// minimize F(gamma) = gamma' Xi gamma + lambda * profiled_excess(gamma)
InnerResult minimize_penalized(const Matrix& Xi, const ExcessLossEvaluator& ev,
                               double lambda, Vector gamma) {
  auto value = [&](const Vector& g, double& excess_out) {
    ProfiledExcess pe = profiled_excess(ev, g);
    excess_out = pe.value;
    return g.dot(Xi * g) + lambda * pe.value;
  };
  double excess;
  double f = value(gamma, excess);
  double step = 1.0;
  const double grad_tol = 1e-11 * std::max(1.0, lambda);
  int it = 0;
  const int max_iter = 20000;
  for (; it < max_iter; ++it) {
    ProfiledExcess pe = profiled_excess(ev, gamma);
    Vector grad = 2.0 * (Xi * gamma) +
                  lambda * profiled_excess_grad(ev, gamma, pe.zeta_star);
    const double gn = grad.norm();
    if (gn <= grad_tol) break;
    bool accepted = false;
    const double f_before = f;
    step *= 2.0;
    for (int h = 0; h < 60; ++h, step *= 0.5) {
      Vector cand = gamma - step * grad;
      double cand_excess;
      const double fc = value(cand, cand_excess);
      if (fc <= f - 1e-4 * step * gn * gn) {
        gamma = cand;
        f = fc;
        excess = cand_excess;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    // progress below double precision: the gradient norm has hit the noise
    // floor of the profiled excess and will not shrink further
    if (f_before - f <= 1e-14 * std::max(1.0, std::abs(f))) break;
  }
  // Newton polish: first-order progress saturates at the double-precision
  // floor of f, but Newton steps keep shrinking the gradient itself, which
  // pins gamma(lambda) down far more tightly than f can resolve.
  for (int nit = 0; nit < 30; ++nit) {
    ProfiledExcess pe = profiled_excess(ev, gamma);
    Vector grad = 2.0 * (Xi * gamma) +
                  lambda * profiled_excess_grad(ev, gamma, pe.zeta_star);
    const double gn = grad.norm();
    if (gn <= 1e-12 * std::max(1.0, lambda)) break;
    Matrix H = 2.0 * Xi + lambda * profiled_excess_hess(ev, gamma, pe.zeta_star);
    H.diagonal().array() += 1e-12 * std::max(1.0, lambda);
    Vector step = H.ldlt().solve(grad);
    if (!step.allFinite()) break;
    // trust the Newton direction only while it reduces the gradient norm
    Vector cand = gamma - step;
    ProfiledExcess cpe = profiled_excess(ev, cand);
    Vector cgrad = 2.0 * (Xi * cand) +
                   lambda * profiled_excess_grad(ev, cand, cpe.zeta_star);
    if (cgrad.norm() >= gn) break;
    gamma = cand;
    ++it;
  }
  ProfiledExcess pe = profiled_excess(ev, gamma);
  return {gamma, pe.value, it};
}

}  // namespace

MaximinSolution solve_maximin(const XiMatrix& xi, const OnTargetSet& set) {
  const double delta = set.delta;
  if (delta < 0.0) throw std::invalid_argument("solve_maximin: delta < 0");
  const ExcessLossEvaluator& ev = set.evaluator;
  const Eigen::Index K = xi.Xi.rows();

  MaximinSolution sol;
  if (delta == 0.0) {
    sol.gamma_star = ev.anchor.gamma;
    sol.lambda_star = 0.0;
    sol.objective = sol.gamma_star.dot(xi.Xi * sol.gamma_star);
    sol.constraint_residual = profiled_excess(ev, sol.gamma_star).value;
    return sol;
  }

  // unconstrained minimizer gamma = 0 feasible?
  const double null_excess = profiled_excess(ev, Vector::Zero(K)).value;
  if (null_excess <= delta) {
    sol.gamma_star = Vector::Zero(K);
    sol.lambda_star = 0.0;
    sol.objective = 0.0;
    sol.constraint_residual = null_excess - delta;
    return sol;
  }

  const double tol = 1e-6 * std::max(delta, 1.0);
  // bisect past the documented tolerance so the objective is accurate to the
  // same order as the closed-form special case
  const double target = 1e-9 * std::max(delta, 1.0);
  int total_iters = 0;

  // grow lambda until the penalized minimizer is feasible
  double lam_lo = 0.0, lam_hi = 1.0;
  Vector warm = ev.anchor.gamma;
  InnerResult inner = minimize_penalized(xi.Xi, ev, lam_hi, warm);
  total_iters += inner.iterations;
  int doublings = 0;
  while (inner.excess > delta && doublings < 80) {
    lam_lo = lam_hi;
    lam_hi *= 2.0;
    inner = minimize_penalized(xi.Xi, ev, lam_hi, inner.gamma);
    total_iters += inner.iterations;
    ++doublings;
  }
  if (inner.excess > delta) {
    std::ostringstream msg;
    msg << "solve_maximin: multiplier bracket exhausted, excess="
        << inner.excess << " delta=" << delta;
    throw std::runtime_error(msg.str());
  }

  double lambda = lam_hi;
  Vector gamma = inner.gamma;
  double excess = inner.excess;
  // drive the bracket itself to near machine width: the residual alone can
  // stop with a loose bracket, leaving the multiplier (and through it the
  // solution) resolved only to the bracket width
  for (int it = 0;
       it < 200 && (std::abs(excess - delta) > target ||
                    lam_hi - lam_lo > 1e-11 * std::max(1.0, lam_hi));
       ++it) {
    lambda = 0.5 * (lam_lo + lam_hi);
    inner = minimize_penalized(xi.Xi, ev, lambda, gamma);
    total_iters += inner.iterations;
    gamma = inner.gamma;
    excess = inner.excess;
    if (excess > delta) lam_lo = lambda;
    else lam_hi = lambda;
  }
  if (std::abs(excess - delta) > tol) {
    std::ostringstream msg;
    msg << "solve_maximin: bisection failed, residual=" << (excess - delta);
    throw std::runtime_error(msg.str());
  }
  sol.gamma_star = gamma;
  sol.lambda_star = lambda;
  sol.objective = gamma.dot(xi.Xi * gamma);
  sol.constraint_residual = excess - delta;
  sol.iterations = total_iters;
  return sol;
}

MaximinSolution solve_maximin_ellipsoid(const XiMatrix& xi,
                                        const Vector& anchor_gamma,
                                        const Matrix& Gc, double delta) {
  if (delta < 0.0)
    throw std::invalid_argument("solve_maximin_ellipsoid: delta < 0");
  Eigen::LLT<Matrix> llt(Gc);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("solve_maximin_ellipsoid: Gc not PD");
  const Eigen::Index K = Gc.rows();

  MaximinSolution sol;
  auto gamma_of = [&](double lam) -> Vector {
    return (xi.Xi + lam * Gc).ldlt().solve(lam * (Gc * anchor_gamma));
  };
  auto psi = [&](double lam) {
    Vector d = gamma_of(lam) - anchor_gamma;
    return d.dot(Gc * d) - delta;
  };

  if (delta == 0.0) {
    sol.gamma_star = anchor_gamma;
    sol.lambda_star = 0.0;
    sol.objective = anchor_gamma.dot(xi.Xi * anchor_gamma);
    return sol;
  }
  const double psi0 = anchor_gamma.dot(Gc * anchor_gamma) - delta;
  if (psi0 <= 0.0) {
    sol.gamma_star = Vector::Zero(K);
    sol.lambda_star = 0.0;
    sol.objective = 0.0;
    sol.constraint_residual = psi0;
    return sol;
  }

  double lo = 0.0, hi = 1.0;
  int it = 0;
  while (psi(hi) > 0.0 && it++ < 200) {
    lo = hi;
    hi *= 2.0;
  }
  if (it >= 200)
    throw std::runtime_error("solve_maximin_ellipsoid: bracket not found");
  while (hi - lo > 1e-12 * std::max(1.0, hi)) {
    const double mid = 0.5 * (lo + hi);
    if (psi(mid) > 0.0) lo = mid;
    else hi = mid;
    ++it;
  }
  const double lam = 0.5 * (lo + hi);
  sol.gamma_star = gamma_of(lam);
  sol.lambda_star = lam;
  sol.objective = sol.gamma_star.dot(xi.Xi * sol.gamma_star);
  sol.constraint_residual = psi(lam);
  sol.iterations = it;
  return sol;
}

Vector obs_maximin(const XiMatrix& xi, const std::vector<Representation>& items,
                   double gap_tol, int max_iter) {
  if (items.empty()) throw std::invalid_argument("obs_maximin: no items");
  const Eigen::Index J = static_cast<Eigen::Index>(items.size());
  const Eigen::Index K = items[0].gamma.size();
  if (J == 1) return items[0].gamma;

  Matrix Alpha(K, J);
  for (Eigen::Index j = 0; j < J; ++j) Alpha.col(j) = items[j].gamma;

  Vector lambda = Vector::Constant(J, 1.0 / double(J));
  Vector a = Alpha * lambda;
  const double scale = std::max(1.0, (Alpha.transpose() * (xi.Xi * Alpha))
                                         .diagonal()
                                         .cwiseAbs()
                                         .maxCoeff());
  // away-step Frank-Wolfe; plain steps alone stall at O(1/t) gaps
  for (int it = 0; it < max_iter; ++it) {
    Vector Xa = xi.Xi * a;
    Vector grad = 2.0 * (Alpha.transpose() * Xa);
    Eigen::Index s;
    grad.minCoeff(&s);
    const double gap = lambda.dot(grad) - grad[s];
    if (gap <= gap_tol * scale) return a;

    Eigen::Index v = s;
    double worst = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < J; ++j)
      if (lambda[j] > 0.0 && grad[j] > worst) {
        worst = grad[j];
        v = j;
      }
    const double fw_slope = grad[s] - lambda.dot(grad);
    const double away_slope = lambda.dot(grad) - grad[v];
    const bool away = away_slope < fw_slope && lambda[v] < 1.0;

    Vector d = away ? Vector(a - Alpha.col(v)) : Vector(Alpha.col(s) - a);
    const double curv = d.dot(xi.Xi * d);
    const double slope = 2.0 * d.dot(xi.Xi * a);
    const double t_max = away ? lambda[v] / (1.0 - lambda[v]) : 1.0;
    double t = t_max;
    if (curv > 0.0) t = std::clamp(-slope / (2.0 * curv), 0.0, t_max);
    else if (slope >= 0.0) t = 0.0;
    if (t <= 0.0) return a;
    if (away) {
      lambda *= (1.0 + t);
      lambda[v] -= t;
      if (lambda[v] < 1e-16) lambda[v] = 0.0;
    } else {
      lambda *= (1.0 - t);
      lambda[s] += t;
    }
    lambda /= lambda.sum();
    a = Alpha * lambda;
  }
  throw std::runtime_error("obs_maximin: Frank-Wolfe budget exhausted");
}

DriftModel run_drift(const ResponseDataset& dataset, const FactorConfig& config,
                     const DriftOptions& options) {
  DriftModel model;
  try {
    model.factor_fit = fit_cjmle(dataset, config);
    if (options.method == IteMethod::dr_learner) {
      model.ite = dr_learner(model.factor_fit.U, dataset.X, dataset.A,
                             options.split_seed);
    } else {
      model.ite =
          factor_ite(fit_arm_regressions(model.factor_fit.U, dataset.X, dataset.A));
    }
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("run_drift step 1: ") + e.what());
  }

  std::vector<Representation> items;
  try {
    items = item_representations(model.factor_fit);
    if (options.geo == GeoSource::observed) {
      if (!dataset.O)
        throw std::invalid_argument("observed GEO requested but O is absent");
      model.evaluator =
          make_observed_evaluator(model.factor_fit.U, *dataset.O, dataset.o_kind);
    } else {
      model.evaluator = build_unobserved_geo_evaluator(model.factor_fit);
    }
    model.anchor = model.evaluator.anchor;
    model.delta = options.delta_auto ? default_radius(model.evaluator, items)
                                     : options.delta;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("run_drift step 2: ") + e.what());
  }

  try {
    XiMatrix xi = empirical_xi(model.ite, dataset.X);
    OnTargetSet set{model.evaluator, model.delta};
    model.solution = solve_maximin(xi, set);
    model.gamma_star = model.solution.gamma_star;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("run_drift step 3: ") + e.what());
  }
  model.geo_source = options.geo;
  return model;
}

double drift_predict(const DriftModel& model, const Vector& x) {
  return model.gamma_star.dot(ite_predict(model.ite, x));
}

int itr_assign(const DriftModel& model, const Vector& x) {
  return drift_predict(model, x) > 0.0 ? 1 : 0;
}

}  // namespace drift
