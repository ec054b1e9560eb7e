#include <doctest.h>

#include "drift/effects.hpp"
#include "drift/rng.hpp"

using namespace drift;

namespace {

// Covariates with an intercept column last, balanced random treatment.
struct Synth {
  Matrix X;
  Eigen::VectorXi A;
  Matrix U;
  Matrix Lambda0, Lambda1;  // K x p
};

Synth make_synth(int N, int p, int K, std::uint64_t seed, double noise,
                 bool confounded = false) {
  Rng rng(seed);
  Synth s;
  s.X.resize(N, p);
  for (int i = 0; i < N; ++i) {
    for (int c = 0; c < p - 1; ++c) s.X(i, c) = rng.normal();
    s.X(i, p - 1) = 1.0;
  }
  s.Lambda0.resize(K, p);
  s.Lambda1.resize(K, p);
  for (int k = 0; k < K; ++k)
    for (int c = 0; c < p; ++c) {
      s.Lambda0(k, c) = rng.normal();
      s.Lambda1(k, c) = rng.normal();
    }
  s.A.resize(N);
  for (int i = 0; i < N; ++i) {
    if (confounded) {
      const double sc = expit(1.5 * s.X(i, 1));
      s.A[i] = rng.bernoulli(sc) ? 1 : 0;
    } else {
      s.A[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
  }
  s.U.resize(N, K);
  for (int i = 0; i < N; ++i) {
    const Matrix& L = s.A[i] == 1 ? s.Lambda1 : s.Lambda0;
    Vector z = L * s.X.row(i).transpose();
    for (int k = 0; k < K; ++k) s.U(i, k) = z[k] + noise * rng.normal();
  }
  return s;
}

}  // namespace

TEST_CASE("fit_arm_regressions exact recovery on noiseless data") {
  Synth s = make_synth(120, 4, 3, 1, 0.0);
  ArmModels m = fit_arm_regressions(s.U, s.X, s.A);
  CHECK((m.Lambda0 - s.Lambda0).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((m.Lambda1 - s.Lambda1).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("fit_arm_regressions zero latent matrix") {
  Synth s = make_synth(60, 3, 2, 2, 0.0);
  Matrix zero = Matrix::Zero(60, 2);
  ArmModels m = fit_arm_regressions(zero, s.X, s.A);
  CHECK(m.Lambda0.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(m.Lambda1.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fit_arm_regressions permutation invariance") {
  Synth s = make_synth(80, 3, 2, 3, 0.5);
  ArmModels base = fit_arm_regressions(s.U, s.X, s.A);

  std::vector<int> perm(80);
  for (int i = 0; i < 80; ++i) perm[i] = (i * 37 + 11) % 80;
  Matrix U2(80, 2), X2(80, 3);
  Eigen::VectorXi A2(80);
  for (int i = 0; i < 80; ++i) {
    U2.row(i) = s.U.row(perm[i]);
    X2.row(i) = s.X.row(perm[i]);
    A2[i] = s.A[perm[i]];
  }
  ArmModels moved = fit_arm_regressions(U2, X2, A2);
  CHECK((moved.Lambda0 - base.Lambda0).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((moved.Lambda1 - base.Lambda1).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("fit_arm_regressions rank-deficient design errors") {
  Synth s = make_synth(40, 3, 2, 4, 0.1);
  Matrix X = s.X;
  X.col(0) = X.col(2);  // duplicate of the intercept
  CHECK_THROWS_AS(fit_arm_regressions(s.U, X, s.A), std::exception);
}

TEST_CASE("factor_ite") {
  ArmModels m;
  m.Lambda0 = Matrix::Zero(2, 3);
  m.Lambda1 = Matrix::Zero(2, 3);
  m.Lambda1(0, 0) = 1.0;
  m.Lambda1(1, 1) = 1.0;

  FactorITE ite = factor_ite(m);
  CHECK((ite.B - m.Lambda1.transpose()).norm() < 1e-14);

  ArmModels null_m{m.Lambda1, m.Lambda1};
  CHECK(factor_ite(null_m).B.cwiseAbs().maxCoeff() == 0.0);

  ArmModels swapped{m.Lambda1, m.Lambda0};
  CHECK((factor_ite(swapped).B + ite.B).norm() == 0.0);
}

TEST_CASE("ite_predict") {
  FactorITE ite;
  ite.B.resize(3, 2);
  ite.B << 1.0, 4.0, 2.0, 5.0, 3.0, 6.0;

  Vector e1 = Vector::Zero(3);
  e1[1] = 1.0;
  Vector pred = ite_predict(ite, e1);
  CHECK(pred[0] == doctest::Approx(2.0));
  CHECK(pred[1] == doctest::Approx(5.0));

  Vector x1(3), x2(3);
  x1 << 0.3, -1.0, 2.0;
  x2 << 1.5, 0.2, -0.4;
  Vector sum_pred = ite_predict(ite, x1 + x2);
  CHECK((sum_pred - (ite_predict(ite, x1) + ite_predict(ite, x2))).norm() < 1e-12);

  FactorITE zero;
  zero.B = Matrix::Zero(3, 2);
  CHECK(ite_predict(zero, x1).norm() == 0.0);
}

TEST_CASE("fit_propensity under independence") {
  const int N = 100000;
  Rng rng(55);
  Matrix X(N, 3);
  Eigen::VectorXi A(N);
  for (int i = 0; i < N; ++i) {
    X(i, 0) = rng.normal();
    X(i, 1) = rng.normal();
    X(i, 2) = 1.0;
    A[i] = rng.bernoulli(0.5) ? 1 : 0;
  }
  PropensityModel m = fit_propensity(X, A);
  CHECK(std::abs(m.coef[0]) < 0.02);
  CHECK(std::abs(m.coef[1]) < 0.02);
  Vector x(3);
  x << 100.0, -100.0, 1.0;
  const double pr = m.predict(x);
  CHECK(pr >= 0.01);
  CHECK(pr <= 0.99);
}

TEST_CASE("fit_propensity on separable data stays finite") {
  Matrix X(8, 2);
  Eigen::VectorXi A(8);
  for (int i = 0; i < 8; ++i) {
    X(i, 0) = i < 4 ? -1.0 - i : 1.0 + i;
    X(i, 1) = 1.0;
    A[i] = i < 4 ? 0 : 1;
  }
  PropensityModel m = fit_propensity(X, A);
  CHECK(m.coef.allFinite());
}

TEST_CASE("fit_propensity rejects single-class labels") {
  Matrix X = Matrix::Ones(10, 1);
  Eigen::VectorXi A = Eigen::VectorXi::Ones(10);
  CHECK_THROWS_AS(fit_propensity(X, A), std::exception);
}

TEST_CASE("dr_learner agrees with randomized_ols on randomized data") {
  Synth s = make_synth(2000, 4, 3, 6, 0.5);
  FactorITE ols = factor_ite(fit_arm_regressions(s.U, s.X, s.A));
  FactorITE dr = dr_learner(s.U, s.X, s.A, 17);
  CHECK(dr.method == IteMethod::dr_learner);
  CHECK((dr.B - ols.B).norm() < 0.2);
}

TEST_CASE("dr_learner beats a naive fit under confounding") {
  // Outcome models share an (x2^2 - 1) term the linear stage-1 fits cannot
  // represent; assignment depends on x2, so the naive per-arm regressions
  // absorb selection bias while the correctly specified propensity lets the
  // pseudo-outcome correct for it.
  int dr_wins = 0;
  double dr_sum = 0.0, naive_sum = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    Synth s = make_synth(1500, 4, 2, 1000 + rep, 0.0, true);
    Rng rng(9000 + rep);
    Matrix U = s.U;
    for (int i = 0; i < 1500; ++i) {
      const double curv = (s.A[i] == 1 ? 1.4 : -1.4) *
                          (s.X(i, 1) * s.X(i, 1) - 1.0);
      for (int k = 0; k < 2; ++k) U(i, k) += curv + 0.3 * rng.normal();
    }
    Matrix B_true = (s.Lambda1 - s.Lambda0).transpose();
    FactorITE naive = factor_ite(fit_arm_regressions(U, s.X, s.A));
    FactorITE dr = dr_learner(U, s.X, s.A, 2000 + rep);
    const double err_dr = (dr.B - B_true).norm();
    const double err_naive = (naive.B - B_true).norm();
    dr_sum += err_dr;
    naive_sum += err_naive;
    if (err_dr < err_naive) ++dr_wins;
  }
  CHECK(dr_sum < naive_sum);
  CHECK(dr_wins > 25);
}

TEST_CASE("dr_learner null effect") {
  const int N = 4000;
  Rng rng(77);
  Matrix X(N, 3);
  Eigen::VectorXi A(N);
  Matrix U(N, 2);
  for (int i = 0; i < N; ++i) {
    X(i, 0) = rng.normal();
    X(i, 1) = rng.normal();
    X(i, 2) = 1.0;
    A[i] = rng.bernoulli(0.5) ? 1 : 0;
    for (int k = 0; k < 2; ++k)
      U(i, k) = 0.7 * X(i, 0) - 0.2 * X(i, 1) + rng.normal();
  }
  FactorITE dr = dr_learner(U, X, A, 5);
  // rough standard error for a pseudo-outcome regression coefficient:
  // residual scale is O(4) after inverse-propensity weighting at s=1/2
  const double se = 4.0 / std::sqrt(double(N / 2));
  CHECK(dr.B.cwiseAbs().maxCoeff() < 3.0 * se);
}

TEST_CASE("dr_learner pseudo-outcome is unbiased with the true propensity") {
  const int N = 10000;
  Rng rng(31);
  Matrix X(N, 3);
  Eigen::VectorXi A(N);
  Matrix f0(N, 1), f1(N, 1);
  Vector z(N);
  for (int i = 0; i < N; ++i) {
    X(i, 0) = rng.normal();
    X(i, 1) = rng.normal();
    X(i, 2) = 1.0;
    const double s = expit(0.8 * X(i, 0));
    A[i] = rng.bernoulli(s) ? 1 : 0;
    f0(i, 0) = 0.5 * X(i, 0) - X(i, 1);
    f1(i, 0) = 1.5 * X(i, 0) + 0.3;
    z[i] = (A[i] == 1 ? f1(i, 0) : f0(i, 0)) + rng.normal();
  }
  // pseudo-outcome with the true s and the true outcome models
  Vector phi(N);
  for (int i = 0; i < N; ++i) {
    const double s = expit(0.8 * X(i, 0));
    const double fa = A[i] == 1 ? f1(i, 0) : f0(i, 0);
    phi[i] = (A[i] - s) / (s * (1.0 - s)) * (z[i] - fa) + f1(i, 0) - f0(i, 0);
  }
  const double target = (f1 - f0).mean();
  const double mean = phi.mean();
  double var = 0.0;
  for (int i = 0; i < N; ++i) var += (phi[i] - mean) * (phi[i] - mean);
  const double se = std::sqrt(var / (N - 1.0) / N);
  CHECK(std::abs(mean - target) < 3.0 * se);
}

TEST_CASE("dr_learner errors when a half misses an arm") {
  Matrix X = Matrix::Ones(12, 1);
  Matrix U = Matrix::Zero(12, 1);
  Eigen::VectorXi A = Eigen::VectorXi::Zero(12);
  A[0] = 1;  // a single treated subject cannot appear in both halves
  CHECK_THROWS_WITH_AS(dr_learner(U, X, A, 1),
                       doctest::Contains("split_seed"), std::exception);
}
