#include <doctest.h>

#include "drift/rng.hpp"
#include "drift/rotation.hpp"

using namespace drift;

namespace {

Matrix example_loadings() {
  Matrix W(4, 2);
  W << 0.8, 0.3, 0.7, 0.4, 0.2, 0.9, 0.3, 0.8;
  return W;
}

}  // namespace

TEST_CASE("varimax on the 4x2 example") {
  Rotation rot = varimax_rotate(example_loadings());
  Matrix expected(4, 2);
  expected << 0.811100910255, 0.268542945139, 0.715080678093, 0.372370277839,
      0.234979517285, 0.891506941339, 0.330999749447, 0.787679608639;
  // column order and signs are pinned by the implementation's convention
  CHECK((rot.loadings - expected).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((rot.R.transpose() * rot.R - Matrix::Identity(2, 2)).norm() < 1e-10);
  CHECK((example_loadings() * rot.R - rot.loadings).norm() < 1e-10);
  CHECK(varimax_criterion(rot.loadings) >=
        varimax_criterion(example_loadings()) - 1e-12);
}

TEST_CASE("varimax criterion never decreases") {
  Rng rng(314);
  for (int t = 0; t < 25; ++t) {
    Matrix W(8, 3);
    for (int i = 0; i < 8; ++i)
      for (int k = 0; k < 3; ++k) W(i, k) = rng.normal();
    Rotation rot = varimax_rotate(W);
    CHECK(varimax_criterion(rot.loadings) >= varimax_criterion(W) - 1e-12);
    CHECK((rot.R.transpose() * rot.R - Matrix::Identity(3, 3)).norm() < 1e-8);
  }
}

TEST_CASE("varimax is idempotent up to the criterion") {
  Rotation first = varimax_rotate(example_loadings(), 1e-12, 5000);
  Rotation second = varimax_rotate(first.loadings, 1e-12, 5000);
  CHECK(varimax_criterion(second.loadings) ==
        doctest::Approx(varimax_criterion(first.loadings)).epsilon(1e-10));
}

TEST_CASE("varimax with one factor is trivial") {
  Matrix W(5, 1);
  W << 0.9, -0.3, 0.5, 0.1, -0.7;
  Rotation rot = varimax_rotate(W);
  CHECK(std::abs(std::abs(rot.R(0, 0)) - 1.0) < 1e-12);
  CHECK((rot.loadings - W * rot.R(0, 0)).norm() < 1e-12);
}

TEST_CASE("promax on the 4x2 example") {
  Rotation rot = promax_rotate(example_loadings(), 4);
  Matrix expected(4, 2);
  expected << 0.897877528528, -0.070378024362, 0.736920103506, 0.102027576194,
      -0.067867021603, 0.964055578974, 0.093090403419, 0.791649978418;
  Matrix expected_R(2, 2);
  expected_R << 1.255227094176, -0.534177114573, -0.354347156043, 1.189878890987;
  CHECK((rot.loadings - expected).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((rot.R - expected_R).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((example_loadings() * rot.R - rot.loadings).norm() < 1e-10);
  CHECK(std::abs(rot.R.determinant()) > 1e-8);
}

TEST_CASE("promax with power 1 reduces to varimax") {
  Matrix W = example_loadings();
  Rotation pm = promax_rotate(W, 1);
  Rotation vm = varimax_rotate(W);
  CHECK((pm.loadings - vm.loadings).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("promax output spans the same column space") {
  Rng rng(99);
  Matrix W(10, 3);
  for (int i = 0; i < 10; ++i)
    for (int k = 0; k < 3; ++k) W(i, k) = rng.normal();
  Rotation rot = promax_rotate(W, 4);
  // loadings = W * R with invertible R, so W is recoverable
  Matrix back = rot.loadings * rot.R.inverse();
  CHECK((back - W).norm() / W.norm() < 1e-8);
}
