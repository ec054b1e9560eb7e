#include "drift/effects.hpp"

#include <algorithm>
#include <numeric>

#include "drift/losses.hpp"
#include "drift/rng.hpp"

namespace drift {

namespace {

Matrix select_rows(const Matrix& M, const std::vector<Eigen::Index>& idx) {
  Matrix out(idx.size(), M.cols());
  for (size_t r = 0; r < idx.size(); ++r) out.row(r) = M.row(idx[r]);
  return out;
}

// OLS coefficient matrix (p x q) of each column of Ysub on Xsub.
Matrix ols(const Matrix& Xsub, const Matrix& Ysub, const std::string& what) {
  Matrix XtX = Xsub.transpose() * Xsub;
  Eigen::FullPivLU<Matrix> lu(XtX);
  if (!lu.isInvertible())
    throw std::runtime_error("rank-deficient design in " + what);
  return lu.solve(Xsub.transpose() * Ysub);
}

}  // namespace

ArmModels fit_arm_regressions(const Matrix& U, const Matrix& X,
                              const Eigen::VectorXi& A) {
  const Eigen::Index p = X.cols();
  ArmModels out;
  for (int a : {0, 1}) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < A.size(); ++i)
      if (A[i] == a) idx.push_back(i);
    if (static_cast<Eigen::Index>(idx.size()) < p)
      throw std::runtime_error("arm " + std::to_string(a) +
                               " has fewer subjects than covariates");
    Matrix coef = ols(select_rows(X, idx), select_rows(U, idx),
                      "arm " + std::to_string(a));
    (a == 0 ? out.Lambda0 : out.Lambda1) = coef.transpose();  // K x p
  }
  return out;
}

FactorITE factor_ite(const ArmModels& models) {
  if (models.Lambda0.rows() != models.Lambda1.rows() ||
      models.Lambda0.cols() != models.Lambda1.cols())
    throw std::invalid_argument("factor_ite: shape mismatch");
  FactorITE out;
  out.B = (models.Lambda1 - models.Lambda0).transpose();
  out.method = IteMethod::randomized_ols;
  return out;
}

Vector ite_predict(const FactorITE& ite, const Vector& x) {
  if (x.size() != ite.B.rows())
    throw std::invalid_argument("ite_predict: dimension mismatch");
  return ite.B.transpose() * x;
}

double PropensityModel::predict(const Vector& x) const {
  return std::clamp(expit(coef.dot(x)), clip_lo, clip_hi);
}

Vector ridge_logistic(const Matrix& D, const Vector& y, double ridge) {
  const Eigen::Index N = D.rows(), p = D.cols();
  Vector beta = Vector::Zero(p);
  for (int it = 0; it < 100; ++it) {
    Vector eta = D * beta;
    Vector mu(N), w(N);
    for (Eigen::Index i = 0; i < N; ++i) {
      mu[i] = expit(eta[i]);
      w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-10);
    }
    Vector grad = D.transpose() * (mu - y) + ridge * beta;
    Matrix H = D.transpose() * w.asDiagonal() * D +
               ridge * Matrix::Identity(p, p);
    Vector step = H.ldlt().solve(grad);
    beta -= step;
    if (step.norm() < 1e-10) break;
  }
  return beta;
}

PropensityModel fit_propensity(const Matrix& X, const Eigen::VectorXi& A,
                               double clip_lo, double clip_hi) {
  if (!(0.0 < clip_lo && clip_lo < clip_hi && clip_hi < 1.0))
    throw std::invalid_argument("fit_propensity: bad clip bounds");
  const int ones = A.sum();
  if (ones == 0 || ones == static_cast<int>(A.size()))
    throw std::runtime_error("fit_propensity: single-class treatment");

  PropensityModel m;
  m.coef = ridge_logistic(X, A.cast<double>(), 1e-6);
  m.clip_lo = clip_lo;
  m.clip_hi = clip_hi;
  return m;
}

FactorITE dr_learner(const Matrix& U, const Matrix& X, const Eigen::VectorXi& A,
                     std::uint64_t split_seed) {
  const Eigen::Index N = X.rows(), p = X.cols(), K = U.cols();
  if (N < 4 * p) throw std::invalid_argument("dr_learner: N must be >= 4p");

  std::vector<Eigen::Index> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = Rng::stream(split_seed, 0xd2);
  for (Eigen::Index i = N - 1; i > 0; --i) {
    auto j = static_cast<Eigen::Index>(rng.uniform() * double(i + 1));
    std::swap(perm[i], perm[std::min(j, i)]);
  }
  const Eigen::Index half = N / 2;
  std::vector<Eigen::Index> d1(perm.begin(), perm.begin() + half);
  std::vector<Eigen::Index> d2(perm.begin() + half, perm.end());

  auto arm_count = [&](const std::vector<Eigen::Index>& idx, int a) {
    return std::count_if(idx.begin(), idx.end(),
                         [&](Eigen::Index i) { return A[i] == a; });
  };
  for (const auto* half_idx : {&d1, &d2})
    if (arm_count(*half_idx, 0) == 0 || arm_count(*half_idx, 1) == 0)
      throw std::runtime_error(
          "dr_learner: treatment arm missing in a half-split; try a new split_seed");

  // Stage 1: nuisance models on D1
  Matrix X1 = select_rows(X, d1), U1 = select_rows(U, d1);
  Eigen::VectorXi A1(d1.size());
  for (size_t r = 0; r < d1.size(); ++r) A1[r] = A[d1[r]];
  PropensityModel prop = fit_propensity(X1, A1);
  ArmModels arms = fit_arm_regressions(U1, X1, A1);

  // Stage 2: pseudo-outcome regression on D2
  Matrix X2 = select_rows(X, d2), U2 = select_rows(U, d2);
  Matrix phi(d2.size(), K);
  for (size_t r = 0; r < d2.size(); ++r) {
    const Vector x = X2.row(r).transpose();
    const double s = prop.predict(x);
    const int a = A[d2[r]];
    Vector f0 = arms.Lambda0 * x;
    Vector f1 = arms.Lambda1 * x;
    Vector fa = (a == 1) ? f1 : f0;
    const double w = (double(a) - s) / (s * (1.0 - s));
    phi.row(r) = (w * (U2.row(r).transpose() - fa) + f1 - f0).transpose();
  }
  FactorITE out;
  out.B = ols(X2, phi, "dr_learner stage 2");
  out.method = IteMethod::dr_learner;
  return out;
}

}  // namespace drift
