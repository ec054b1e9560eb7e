#include "drift/on_target.hpp"

#include <limits>
#include <sstream>

namespace drift {

double ExcessLossEvaluator::mean_loss(const Representation& phi) const {
  Vector u = phi.eval(U);
  double total = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i)
    total += item_loss(kind, targets[i], u[i]);
  return total / double(u.size());
}

Representation fit_geo_observed(const Matrix& U, const Vector& o, ItemKind kind) {
  const Eigen::Index N = U.rows(), K = U.cols();
  if (o.size() != N) throw std::invalid_argument("fit_geo_observed: size mismatch");
  for (Eigen::Index k = 0; k < K; ++k) {
    const double m = U.col(k).mean();
    if ((U.col(k).array() - m).abs().maxCoeff() < 1e-12)
      throw std::runtime_error("fit_geo_observed: constant latent column " +
                               std::to_string(k));
  }
  // design (z_i, -1), coefficient (gamma, zeta)
  Matrix D(N, K + 1);
  D.leftCols(K) = U;
  D.col(K).setConstant(-1.0);

  Vector theta(K + 1);
  if (kind == ItemKind::continuous) {
    theta = (D.transpose() * D).ldlt().solve(D.transpose() * o);
  } else {
    // ridge on the linear predictor ||D theta||^2 / N rather than on the
    // coefficients: it still blocks separation but is invariant to affine
    // changes of the latent coordinates, so the anchor transforms exactly
    constexpr double ridge = 1e-6;
    const Matrix G = D.transpose() * D / double(N);
    theta.setZero();
    for (int it = 0; it < 200; ++it) {
      Vector eta = D * theta;
      Vector mu(N), w(N);
      for (Eigen::Index i = 0; i < N; ++i) {
        mu[i] = expit(eta[i]);
        w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-10);
      }
      Vector grad = D.transpose() * (mu - o) + ridge * (G * theta);
      Matrix H = D.transpose() * w.asDiagonal() * D + ridge * G;
      Vector step = H.ldlt().solve(grad);
      theta -= step;
      if (step.norm() < 1e-12) break;
    }
  }
  return Representation{theta.head(K), theta[K]};
}

std::vector<Representation> item_representations(const FactorFit& fit) {
  std::vector<Representation> items;
  items.reserve(fit.W.rows());
  for (Eigen::Index j = 0; j < fit.W.rows(); ++j)
    items.push_back({fit.W.row(j).transpose(), fit.zeta[j]});
  return items;
}

MinimaxCenterResult minimax_center(const Matrix& U,
                                   const std::vector<Representation>& items,
                                   double gap_tol, int max_iter) {
  if (items.empty()) throw std::invalid_argument("minimax_center: no items");
  const Eigen::Index N = U.rows(), K = U.cols();
  const Eigen::Index J = static_cast<Eigen::Index>(items.size());
  if (J == 1)
    return {items[0], Vector::Ones(1), 0.0, 0.0, 0};

  // theta_j = (alpha_j, -zeta_j); G = augmented second moment of (z_i, 1)
  Matrix Aug(N, K + 1);
  Aug.leftCols(K) = U;
  Aug.col(K).setOnes();
  Matrix G = (Aug.transpose() * Aug) / double(N);

  Matrix Theta(K + 1, J);
  for (Eigen::Index j = 0; j < J; ++j) {
    Theta.col(j).head(K) = items[j].gamma;
    Theta(K, j) = -items[j].zeta;
  }
  Matrix GTheta = G * Theta;
  Vector q(J);
  for (Eigen::Index j = 0; j < J; ++j) q[j] = Theta.col(j).dot(GTheta.col(j));

  // maximize h(lambda) = sum_j lambda_j q_j - theta_bar' G theta_bar with
  // away-step Frank-Wolfe; plain steps alone stall at O(1/t) gaps
  Vector lambda = Vector::Constant(J, 1.0 / double(J));
  Vector bar = Theta * lambda;
  double gap = 0.0;
  int it = 0;
  for (; it < max_iter; ++it) {
    Vector Gbar = G * bar;
    Vector grad = q - 2.0 * (Theta.transpose() * Gbar);
    Eigen::Index s;
    grad.maxCoeff(&s);
    gap = grad[s] - lambda.dot(grad);
    if (gap <= gap_tol * std::max(1.0, std::abs(q.maxCoeff()))) break;

    Eigen::Index v = s;
    double worst = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < J; ++j)
      if (lambda[j] > 0.0 && grad[j] < worst) {
        worst = grad[j];
        v = j;
      }
    const double fw_slope = grad[s] - lambda.dot(grad);
    const double away_slope = lambda.dot(grad) - grad[v];
    const bool away = away_slope > fw_slope && lambda[v] < 1.0;

    Vector d = away ? Vector(bar - Theta.col(v)) : Vector(Theta.col(s) - bar);
    const double slope = away ? away_slope : fw_slope;
    const double curv = d.dot(G * d);
    const double t_max = away ? lambda[v] / (1.0 - lambda[v]) : 1.0;
    double t = t_max;
    if (curv > 0.0) t = std::clamp(slope / (2.0 * curv), 0.0, t_max);
    else if (slope <= 0.0) t = 0.0;
    if (t <= 0.0) break;
    if (away) {
      lambda *= (1.0 + t);
      lambda[v] -= t;
      if (lambda[v] < 1e-16) lambda[v] = 0.0;
    } else {
      lambda *= (1.0 - t);
      lambda[s] += t;
    }
    lambda /= lambda.sum();
    bar = Theta * lambda;
  }
  if (it >= max_iter) {
    std::ostringstream msg;
    msg << "minimax_center: Frank-Wolfe budget exhausted, gap=" << gap;
    throw std::runtime_error(msg.str());
  }
  Representation center{bar.head(K), -bar[K]};
  const double value = lambda.dot(q) - bar.dot(G * bar);
  return {center, lambda, value, gap, it};
}

namespace {

void verify_anchor_optimality(const ExcessLossEvaluator& ev) {
  const Eigen::Index K = ev.U.cols();
  std::vector<Representation> probes;
  for (Eigen::Index k = 0; k <= K; ++k) {
    for (double h : {1e-4, 1e-2}) {
      for (double sgn : {-1.0, 1.0}) {
        Representation r = ev.anchor;
        if (k < K) r.gamma[k] += sgn * h;
        else r.zeta += sgn * h;
        probes.push_back(r);
      }
    }
  }
  probes.push_back({Vector::Zero(K), ev.anchor.zeta});
  for (const auto& r : probes)
    if (ev.mean_loss(r) < ev.anchor_loss - 1e-8)
      throw std::logic_error("evaluator anchor is not empirically optimal");
}

}  // namespace

ExcessLossEvaluator make_observed_evaluator(const Matrix& U, const Vector& o,
                                            ItemKind kind) {
  ExcessLossEvaluator ev;
  ev.U = U;
  ev.targets = o;
  ev.kind = kind;
  ev.anchor = fit_geo_observed(U, o, kind);
  ev.anchor_loss = ev.mean_loss(ev.anchor);
  verify_anchor_optimality(ev);
  return ev;
}

ExcessLossEvaluator build_unobserved_geo_evaluator(const FactorFit& fit,
                                                   ItemKind kind) {
  auto items = item_representations(fit);
  MinimaxCenterResult center = minimax_center(fit.U, items);
  ExcessLossEvaluator ev;
  ev.U = fit.U;
  ev.kind = kind;
  ev.anchor = center.center;
  Vector eta = ev.anchor.eval(fit.U);
  ev.targets = eta.unaryExpr([](double u) { return expit(u); });
  ev.anchor_loss = ev.mean_loss(ev.anchor);
  verify_anchor_optimality(ev);
  return ev;
}

double excess_loss(const ExcessLossEvaluator& ev, const Representation& phi) {
  double v = ev.mean_loss(phi) - ev.anchor_loss;
  if (v < 0.0 && v > -1e-12) v = 0.0;
  return v;
}

ProfiledExcess profiled_excess(const ExcessLossEvaluator& ev, const Vector& gamma) {
  if (!gamma.allFinite())
    throw std::invalid_argument("profiled_excess: non-finite gamma");
  const Vector proj = ev.U * gamma;

  if (ev.kind == ItemKind::continuous) {
    const double zeta = (proj - ev.targets).mean();
    Representation phi{gamma, zeta};
    return {excess_loss(ev, phi), zeta};
  }

  // binary: mean loss is convex in zeta with monotone derivative
  // g(zeta) = mean(o) - mean(expit(proj - zeta))
  const double obar = ev.targets.mean();
  auto deriv = [&](double zeta) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < proj.size(); ++i) s += expit(proj[i] - zeta);
    return obar - s / double(proj.size());
  };
  double span = proj.cwiseAbs().maxCoeff() + 50.0;
  double lo = -span, hi = span;
  double zeta = 0.0;
  bool ok = false;
  for (int it = 0; it < 100; ++it) {
    double g = deriv(zeta);
    // tight stop: zeta error propagates into the envelope gradient of the
    // profiled excess, so leave plenty of headroom below solver tolerances
    if (std::abs(g) < 1e-13) {
      ok = true;
      break;
    }
    if (g > 0.0) hi = std::min(hi, zeta);
    else lo = std::max(lo, zeta);
    double h = 0.0;
    for (Eigen::Index i = 0; i < proj.size(); ++i) {
      const double mu = expit(proj[i] - zeta);
      h += mu * (1.0 - mu);
    }
    h /= double(proj.size());
    double next = (h > 1e-14) ? zeta - g / h : (lo + hi) / 2.0;
    if (next <= lo || next >= hi) next = (lo + hi) / 2.0;  // safeguard
    zeta = next;
  }
  if (!ok) {
    // bisection fallback
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
      zeta = (lo + hi) / 2.0;
      if (deriv(zeta) > 0.0) hi = zeta;
      else lo = zeta;
    }
    zeta = (lo + hi) / 2.0;
    if (std::abs(deriv(zeta)) > 1e-6)
      throw std::runtime_error("profiled_excess: zeta minimization failed");
  }
  Representation phi{gamma, zeta};
  return {excess_loss(ev, phi), zeta};
}

double default_radius(const ExcessLossEvaluator& ev,
                      const std::vector<Representation>& items) {
  if (items.empty()) throw std::invalid_argument("default_radius: no items");
  double max_item = 0.0;
  for (const auto& r : items) max_item = std::max(max_item, excess_loss(ev, r));
  const double null_excess =
      profiled_excess(ev, Vector::Zero(ev.U.cols())).value;
  return std::min(max_item, 0.95 * null_excess);
}

}  // namespace drift
