#include "drift/rotation.hpp"

#include <Eigen/SVD>

namespace drift {

double varimax_criterion(const Matrix& W) {
  const double J = double(W.rows());
  double crit = 0.0;
  for (Eigen::Index k = 0; k < W.cols(); ++k) {
    Eigen::ArrayXd sq = W.col(k).array().square();
    const double m = sq.mean();
    crit += (sq - m).square().sum() / J;
  }
  return crit;
}

Rotation varimax_rotate(const Matrix& W, double eps, int max_iter) {
  const Eigen::Index J = W.rows(), K = W.cols();
  if (J < K) throw std::invalid_argument("varimax_rotate: J < K");
  Rotation out{W, Matrix::Identity(K, K)};
  if (K < 2) return out;

  Matrix TT = Matrix::Identity(K, K);
  double d = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Matrix Z = W * TT;
    Matrix Z2 = Z.array().square().matrix();
    Matrix B = W.transpose() *
               (Z.array().cube().matrix() -
                Z * (Z2.colwise().sum() / double(J)).asDiagonal());
    Eigen::JacobiSVD<Matrix> svd(B, Eigen::ComputeFullU | Eigen::ComputeFullV);
    TT = svd.matrixU() * svd.matrixV().transpose();
    const double dnew = svd.singularValues().sum();
    if (dnew < d * (1.0 + eps)) break;
    d = dnew;
  }
  Rotation rot{W * TT, TT};
  // stationary input can only move by round-off
  if (varimax_criterion(rot.loadings) < varimax_criterion(W)) return out;
  return rot;
}

Rotation promax_rotate(const Matrix& W, int power) {
  if (power < 1) throw std::invalid_argument("promax_rotate: power must be >= 1");
  Rotation vm = varimax_rotate(W);
  const Matrix& X = vm.loadings;
  const Eigen::Index K = W.cols();

  // signed power target
  Matrix Q = X.array() * X.array().abs().pow(power - 1);
  Matrix XtX = X.transpose() * X;
  Eigen::FullPivLU<Matrix> lu(XtX);
  if (!lu.isInvertible())
    throw std::runtime_error("promax_rotate: singular target regression");
  Matrix U = lu.solve(X.transpose() * Q);

  Eigen::FullPivLU<Matrix> lu2(U.transpose() * U);
  if (!lu2.isInvertible())
    throw std::runtime_error("promax_rotate: singular oblique transform");
  Vector dd = lu2.inverse().diagonal();
  for (Eigen::Index k = 0; k < K; ++k) U.col(k) *= std::sqrt(dd[k]);

  Rotation out;
  out.R = vm.R * U;
  out.loadings = W * out.R;
  return out;
}

}  // namespace drift
