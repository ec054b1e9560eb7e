#include "drift/factor.hpp"

#include <Eigen/SVD>

#include "drift/rng.hpp"

namespace drift {

Vector project_subject(const Vector& z, double C) {
  const double rmax = std::sqrt(C * C - 1.0);
  const double n = z.norm();
  if (n <= rmax) return z;
  return z * (rmax / n);
}

std::pair<double, Vector> project_item(double zeta, const Vector& alpha, double C) {
  const double n = std::sqrt(zeta * zeta + alpha.squaredNorm());
  if (n <= C) return {zeta, alpha};
  const double s = C / n;
  return {zeta * s, alpha * s};
}

namespace {

// Binary entries mapped to 2y-1, continuous columns standardized.
Matrix working_matrix(const ResponseDataset& data) {
  Matrix D = data.Y;
  for (Eigen::Index j = 0; j < data.j(); ++j) {
    if (data.schema[j].kind == ItemKind::binary) {
      D.col(j) = 2.0 * D.col(j).array() - 1.0;
    } else {
      const double mean = D.col(j).mean();
      double sd = std::sqrt((D.col(j).array() - mean).square().sum() /
                            std::max<Eigen::Index>(1, data.n() - 1));
      if (sd < 1e-12) sd = 1.0;
      D.col(j) = (D.col(j).array() - mean) / sd;
    }
  }
  return D;
}

void project_all_rows(FactorFit& fit, double C) {
  for (Eigen::Index i = 0; i < fit.U.rows(); ++i)
    fit.U.row(i) = project_subject(fit.U.row(i).transpose(), C).transpose();
  for (Eigen::Index j = 0; j < fit.W.rows(); ++j) {
    auto [z, a] = project_item(fit.zeta[j], fit.W.row(j).transpose(), C);
    fit.zeta[j] = z;
    fit.W.row(j) = a.transpose();
  }
}

FactorFit random_init(Eigen::Index N, Eigen::Index J, const FactorConfig& config) {
  Rng rng = Rng::stream(config.seed, 0xf0);
  FactorFit fit;
  fit.U.resize(N, config.K);
  fit.W.resize(J, config.K);
  fit.zeta = Vector::Zero(J);
  for (Eigen::Index i = 0; i < N; ++i)
    for (int k = 0; k < config.K; ++k) fit.U(i, k) = 0.1 * rng.normal();
  for (Eigen::Index j = 0; j < J; ++j)
    for (int k = 0; k < config.K; ++k) fit.W(j, k) = 0.1 * rng.normal();
  return fit;
}

}  // namespace

FactorFit init_factors(const ResponseDataset& data, const FactorConfig& config) {
  config.validate();
  data.validate();
  const Eigen::Index N = data.n(), J = data.j();
  if (J < config.K) throw std::invalid_argument("init_factors: J < K");
  const double C = config.radius();

  FactorFit fit;
  if (config.init == FactorInit::random) {
    fit = random_init(N, J, config);
    project_all_rows(fit, C);
    return fit;
  }

  Matrix D = working_matrix(data);
  Vector col_means = D.colwise().mean();
  fit.zeta = -col_means;
  Matrix Dc = D.rowwise() - col_means.transpose();

  Eigen::BDCSVD<Matrix> svd(Dc, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (s.size() < config.K || s[config.K - 1] < 1e-12 * std::max(1.0, s[0])) {
    fit = random_init(N, J, config);
    fit.random_fallback = true;
    project_all_rows(fit, C);
    return fit;
  }
  Vector sq = s.head(config.K).array().sqrt();
  fit.U = svd.matrixU().leftCols(config.K) * sq.asDiagonal();
  fit.W = svd.matrixV().leftCols(config.K) * sq.asDiagonal();
  project_all_rows(fit, C);
  return fit;
}

double cjmle_objective(const ResponseDataset& data, const FactorFit& fit) {
  Matrix M = natural_params(fit);
  double obj = 0.0;
  for (Eigen::Index j = 0; j < data.j(); ++j) {
    const ItemKind kind = data.schema[j].kind;
    for (Eigen::Index i = 0; i < data.n(); ++i)
      obj += item_loss(kind, data.Y(i, j), M(i, j));
  }
  return obj;
}

namespace {

double column_loss(const ResponseDataset& data, Eigen::Index j, const Vector& u) {
  const ItemKind kind = data.schema[j].kind;
  double v = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i)
    v += detail::item_loss_raw(kind, data.Y(i, j), u[i]);
  return v;
}

double row_loss(const ResponseDataset& data, Eigen::Index i, const Vector& u) {
  double v = 0.0;
  for (Eigen::Index j = 0; j < data.j(); ++j)
    v += detail::item_loss_raw(data.schema[j].kind, data.Y(i, j), u[j]);
  return v;
}

}  // namespace

FactorFit fit_cjmle(const ResponseDataset& data, const FactorConfig& config) {
  FactorFit fit = init_factors(data, config);
  const Eigen::Index N = data.n(), J = data.j();
  const int K = config.K;
  const double C = config.radius();
  const Backtracking& bt = config.backtracking;

  double obj = cjmle_objective(data, fit);
  fit.objective_trace.push_back(obj);

  Vector grad_u(N), u(N), theta(K + 1), cand(K + 1), gvec(J);
  Vector raw(K + 1), uc_col(N), uc_row(J), ztrial(K);
  for (int sweep = 0; sweep < config.max_sweeps; ++sweep) {
    // (a) item block: update (zeta_j, alpha_j) with U fixed
    for (Eigen::Index j = 0; j < J; ++j) {
      const ItemKind kind = data.schema[j].kind;
      u.noalias() = fit.U * fit.W.row(j).transpose();
      u.array() -= fit.zeta[j];
      const double f0 = column_loss(data, j, u);
      for (Eigen::Index i = 0; i < N; ++i)
        grad_u[i] = detail::item_loss_grad_raw(kind, data.Y(i, j), u[i]);
      Vector g_alpha = fit.U.transpose() * grad_u;
      const double g_zeta = -grad_u.sum();
      theta[0] = fit.zeta[j];
      theta.tail(K) = fit.W.row(j).transpose();
      Vector grad(K + 1);
      grad[0] = g_zeta;
      grad.tail(K) = g_alpha;

      double step = bt.initial_step;
      for (int h = 0; h <= bt.max_halvings; ++h, step *= bt.shrink) {
        raw.noalias() = theta - step * grad;
        cand = raw;
        const double n2 = raw.squaredNorm();
        if (n2 > C * C) cand *= C / std::sqrt(n2);
        uc_col.noalias() = fit.U * cand.tail(K);
        uc_col.array() -= cand[0];
        const double fc = column_loss(data, j, uc_col);
        const double decrease = grad.dot(cand - theta);
        if (fc <= f0 + bt.armijo_const * decrease && fc <= f0) {
          fit.zeta[j] = cand[0];
          fit.W.row(j) = cand.tail(K).transpose();
          break;
        }
      }
    }

    // (b) subject block: update z_i with (W, zeta) fixed
    for (Eigen::Index i = 0; i < N; ++i) {
      Vector ui = fit.W * fit.U.row(i).transpose() - fit.zeta;
      const double f0 = row_loss(data, i, ui);
      for (Eigen::Index j = 0; j < J; ++j)
        gvec[j] = detail::item_loss_grad_raw(data.schema[j].kind, data.Y(i, j), ui[j]);
      Vector grad = fit.W.transpose() * gvec;
      Vector z = fit.U.row(i).transpose();

      const double rmax2 = C * C - 1.0;
      double step = bt.initial_step;
      for (int h = 0; h <= bt.max_halvings; ++h, step *= bt.shrink) {
        ztrial.noalias() = z - step * grad;
        const double n2 = ztrial.squaredNorm();
        if (n2 > rmax2) ztrial *= std::sqrt(rmax2 / n2);
        uc_row.noalias() = fit.W * ztrial;
        uc_row -= fit.zeta;
        const double fc = row_loss(data, i, uc_row);
        const double decrease = grad.dot(ztrial - z);
        if (fc <= f0 + bt.armijo_const * decrease && fc <= f0) {
          fit.U.row(i) = ztrial.transpose();
          break;
        }
      }
    }

    const double prev = fit.objective_trace.back();
    obj = cjmle_objective(data, fit);
    fit.objective_trace.push_back(obj);
    const double rel = std::abs(prev - obj) / std::max(1.0, std::abs(prev));
    if (rel < config.tol) {
      fit.converged = true;
      break;
    }
  }
  return fit;
}

Matrix natural_params(const FactorFit& fit) {
  return (fit.U * fit.W.transpose()).rowwise() - fit.zeta.transpose();
}

FactorFit apply_reparam(const FactorFit& fit, const Reparam& rep) {
  Eigen::FullPivLU<Matrix> lu(rep.Q);
  if (!lu.isInvertible()) throw std::invalid_argument("apply_reparam: singular Q");
  Matrix Qinv = lu.inverse();
  FactorFit out = fit;
  out.U = fit.U * rep.Q.transpose();
  out.U.rowwise() += rep.mu.transpose();
  out.W = fit.W * Qinv;  // rows become Q^{-T} alpha_j
  out.zeta = fit.zeta + out.W * rep.mu;
  return out;
}

}  // namespace drift
