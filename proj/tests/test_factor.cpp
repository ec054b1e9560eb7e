#include <doctest.h>

#include "drift/factor.hpp"
#include "drift/rng.hpp"
#include "drift/simulation.hpp"

using namespace drift;

namespace {

// Feasible ground-truth factors with a noiseless continuous response matrix.
ResponseDataset make_noiseless(int N, int J, int K, Matrix& U_true, Matrix& W_true,
                               Vector& zeta_true, std::uint64_t seed) {
  Rng rng(seed);
  U_true.resize(N, K);
  W_true.resize(J, K);
  zeta_true.resize(J);
  for (int i = 0; i < N; ++i)
    for (int k = 0; k < K; ++k) U_true(i, k) = rng.normal();
  for (int j = 0; j < J; ++j) {
    for (int k = 0; k < K; ++k) W_true(j, k) = rng.normal();
    zeta_true[j] = 0.5 * rng.normal();
  }
  ResponseDataset data;
  data.Y = U_true * W_true.transpose();
  data.Y.rowwise() -= zeta_true.transpose();
  data.X = Matrix::Ones(N, 1);
  data.A = Eigen::VectorXi::Zero(N);
  for (int i = 0; i < N; ++i) data.A[i] = i % 2;
  data.schema.resize(J);
  for (int j = 0; j < J; ++j)
    data.schema[j] = ItemSchema{"y" + std::to_string(j + 1), ItemKind::continuous};
  return data;
}

bool feasible(const FactorFit& fit, double C, double slack = 1e-9) {
  for (Eigen::Index i = 0; i < fit.U.rows(); ++i)
    if (1.0 + fit.U.row(i).squaredNorm() > C * C + slack) return false;
  for (Eigen::Index j = 0; j < fit.W.rows(); ++j)
    if (fit.zeta[j] * fit.zeta[j] + fit.W.row(j).squaredNorm() > C * C + slack)
      return false;
  return true;
}

}  // namespace

TEST_CASE("project_subject") {
  const double C = 5.0 * std::sqrt(3.0);
  Vector z(3);
  z << 1.0, 1.0, 1.0;
  Vector pz = project_subject(z, C);
  CHECK((pz - z).norm() == doctest::Approx(0.0));

  Vector big(3);
  big << 10.0, 0.0, 0.0;
  Vector pb = project_subject(big, C);
  // scaled onto the boundary sqrt(C^2 - 1) = sqrt(74)
  CHECK(pb[0] == doctest::Approx(8.602325267042627).epsilon(1e-12));
  CHECK(pb[1] == doctest::Approx(0.0));
  CHECK(1.0 + pb.squaredNorm() == doctest::Approx(C * C));

  Vector zero = Vector::Zero(3);
  CHECK(project_subject(zero, C).norm() == doctest::Approx(0.0));

  // idempotent
  Vector again = project_subject(pb, C);
  CHECK((again - pb).norm() < 1e-14);
}

TEST_CASE("project_item") {
  const double C = 5.0;
  Vector alpha(2);
  alpha << 3.0, 0.0;
  auto [z1, a1] = project_item(4.0, alpha, C);
  // already on the boundary: 16 + 9 = 25
  CHECK(z1 == doctest::Approx(4.0));
  CHECK((a1 - alpha).norm() < 1e-14);

  auto [z2, a2] = project_item(8.0, alpha, C);
  const double scale = C / std::sqrt(64.0 + 9.0);
  CHECK(z2 == doctest::Approx(8.0 * scale));
  CHECK(a2[0] == doctest::Approx(3.0 * scale));
  CHECK(z2 * z2 + a2.squaredNorm() == doctest::Approx(C * C));
}

TEST_CASE("default radius") {
  FactorConfig cfg;
  cfg.K = 3;
  CHECK(cfg.radius() == doctest::Approx(5.0 * std::sqrt(3.0)));
  cfg.C = 7.0;
  CHECK(cfg.radius() == doctest::Approx(7.0));
  cfg.K = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("init_factors is deterministic and feasible") {
  Matrix U, W;
  Vector zeta;
  ResponseDataset data = make_noiseless(50, 12, 3, U, W, zeta, 11);
  FactorConfig cfg;
  cfg.K = 3;
  FactorFit a = init_factors(data, cfg);
  FactorFit b = init_factors(data, cfg);
  CHECK((a.U - b.U).norm() == 0.0);
  CHECK((a.W - b.W).norm() == 0.0);
  CHECK((a.zeta - b.zeta).norm() == 0.0);
  CHECK(feasible(a, cfg.radius()));
}

TEST_CASE("svd init beats truncation at lower rank") {
  // Eckart-Young: for a centered continuous matrix the rank-3 init residual
  // is no larger than the rank-2 one.
  Matrix U, W;
  Vector zeta;
  ResponseDataset data = make_noiseless(60, 15, 4, U, W, zeta, 19);
  auto residual = [&](int K) {
    FactorConfig cfg;
    cfg.K = K;
    FactorFit f = init_factors(data, cfg);
    Matrix M = natural_params(f);
    return (data.Y - M).norm();
  };
  CHECK(residual(3) <= residual(2) + 1e-10);
}

TEST_CASE("noiseless continuous recovery") {
  Matrix U, W;
  Vector zeta;
  ResponseDataset data = make_noiseless(200, 40, 3, U, W, zeta, 5);
  Matrix M_true = U * W.transpose();
  M_true.rowwise() -= zeta.transpose();

  FactorConfig cfg;
  cfg.K = 3;
  cfg.tol = 1e-12;
  FactorFit fit = fit_cjmle(data, cfg);

  Matrix M_hat = natural_params(fit);
  CHECK((M_hat - M_true).norm() / M_true.norm() < 1e-3);
  CHECK(feasible(fit, cfg.radius()));

  // trace is monotone non-increasing
  for (std::size_t t = 1; t < fit.objective_trace.size(); ++t)
    CHECK(fit.objective_trace[t] <= fit.objective_trace[t - 1] + 1e-10);
  CHECK(fit.objective_trace.back() ==
        doctest::Approx(cjmle_objective(data, fit)).epsilon(1e-9));
}

TEST_CASE("fit is deterministic") {
  Matrix U, W;
  Vector zeta;
  ResponseDataset data = make_noiseless(40, 10, 2, U, W, zeta, 23);
  FactorConfig cfg;
  cfg.K = 2;
  FactorFit a = fit_cjmle(data, cfg);
  FactorFit b = fit_cjmle(data, cfg);
  CHECK((a.U - b.U).norm() == 0.0);
  CHECK((a.W - b.W).norm() == 0.0);
  CHECK(a.objective_trace == b.objective_trace);
}

TEST_CASE("binary items from the simulation protocol converge") {
  SimConfig sc;
  sc.apply_defaults();
  Rng rng = Rng::stream(42, 0, 0);
  auto [data, truth] = generate_dataset(sc, rng);
  FactorConfig cfg;
  cfg.K = 3;
  FactorFit fit = fit_cjmle(data, cfg);
  // completes the sweep budget; the relative-change criterion may not fire
  CHECK(int(fit.objective_trace.size()) <= cfg.max_sweeps + 1);
  CHECK(feasible(fit, cfg.radius()));
  for (std::size_t t = 1; t < fit.objective_trace.size(); ++t)
    CHECK(fit.objective_trace[t] <= fit.objective_trace[t - 1] + 1e-10);
}

TEST_CASE("natural_params example") {
  FactorFit fit;
  fit.U.resize(2, 2);
  fit.U << 1.0, 0.0, 0.0, 2.0;
  fit.W.resize(1, 2);
  fit.W << 3.0, -1.0;
  fit.zeta.resize(1);
  fit.zeta << 0.5;
  Matrix M = natural_params(fit);
  CHECK(M(0, 0) == doctest::Approx(2.5));
  CHECK(M(1, 0) == doctest::Approx(-2.5));
}

TEST_CASE("apply_reparam preserves natural parameters") {
  Matrix U, W;
  Vector zeta;
  ResponseDataset data = make_noiseless(30, 8, 3, U, W, zeta, 31);
  FactorConfig cfg;
  cfg.K = 3;
  FactorFit fit = init_factors(data, cfg);
  Matrix M0 = natural_params(fit);

  Rng rng(77);
  for (int t = 0; t < 20; ++t) {
    Reparam rep;
    rep.Q.resize(3, 3);
    do {
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) rep.Q(a, b) = rng.normal();
    } while (std::abs(rep.Q.determinant()) < 0.2);
    rep.mu.resize(3);
    for (int a = 0; a < 3; ++a) rep.mu[a] = rng.normal();
    FactorFit moved = apply_reparam(fit, rep);
    CHECK((natural_params(moved) - M0).norm() / M0.norm() < 1e-10);
  }

  // identity reparam is a no-op
  Reparam id{Matrix::Identity(3, 3), Vector::Zero(3)};
  FactorFit same = apply_reparam(fit, id);
  CHECK((same.U - fit.U).norm() < 1e-14);
  CHECK((same.W - fit.W).norm() < 1e-14);
  CHECK((same.zeta - fit.zeta).norm() < 1e-14);

  // singular Q rejected
  Reparam bad{Matrix::Zero(3, 3), Vector::Zero(3)};
  CHECK_THROWS_AS(apply_reparam(fit, bad), std::invalid_argument);
}

TEST_CASE("reparam composition") {
  Matrix U, W;
  Vector zeta;
  ResponseDataset data = make_noiseless(20, 6, 2, U, W, zeta, 3);
  FactorConfig cfg;
  cfg.K = 2;
  FactorFit fit = init_factors(data, cfg);

  Reparam r1, r2;
  r1.Q.resize(2, 2);
  r1.Q << 2.0, 1.0, 0.0, 1.0;
  r1.mu.resize(2);
  r1.mu << 0.5, -1.0;
  r2.Q.resize(2, 2);
  r2.Q << 1.0, -1.0, 1.0, 1.0;
  r2.mu.resize(2);
  r2.mu << 0.0, 2.0;

  FactorFit seq = apply_reparam(apply_reparam(fit, r1), r2);
  Reparam combined{r2.Q * r1.Q, r2.Q * r1.mu + r2.mu};
  FactorFit once = apply_reparam(fit, combined);
  CHECK((seq.U - once.U).norm() < 1e-12);
  CHECK((seq.W - once.W).norm() < 1e-12);
  CHECK((seq.zeta - once.zeta).norm() < 1e-12);
}
