#pragma once

#include "drift/dataset.hpp"

namespace drift {

struct Rotation {
  Matrix loadings;  // J x K rotated pattern
  Matrix R;         // K x K rotation (orthogonal for varimax)
};

double varimax_criterion(const Matrix& W);

Rotation varimax_rotate(const Matrix& W, double eps = 1e-5, int max_iter = 1000);

// Varimax followed by an oblique least-squares rotation toward the
// signed power target (R-style promax, no Kaiser normalization).
Rotation promax_rotate(const Matrix& W, int power = 4);

}  // namespace drift
