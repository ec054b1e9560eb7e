#pragma once

#include <Eigen/Dense>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "drift/losses.hpp"

namespace drift {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ItemSchema {
  std::string name;
  ItemKind kind = ItemKind::binary;
};

// Item responses Y with per-column schema, covariates X (last column may be
// an all-ones intercept), treatment A, and an optional global evaluation
// outcome O.
struct ResponseDataset {
  Matrix X;                        // N x p
  Eigen::VectorXi A;               // N, values in {0,1}
  Matrix Y;                        // N x J
  std::vector<ItemSchema> schema;  // size J
  std::optional<Vector> O;         // N, binary in all experiments
  ItemKind o_kind = ItemKind::binary;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }
  Eigen::Index j() const { return Y.cols(); }

  void validate() const;
};

inline void check_binary_column(const Vector& col, const std::string& what) {
  for (Eigen::Index i = 0; i < col.size(); ++i) {
    if (col[i] != 0.0 && col[i] != 1.0)
      throw std::invalid_argument(what + ": non-binary value " +
                                  std::to_string(col[i]) + " at row " +
                                  std::to_string(i));
  }
}

inline void ResponseDataset::validate() const {
  if (n() < 2) throw std::invalid_argument("dataset: N must be >= 2");
  if (j() < 1) throw std::invalid_argument("dataset: at least one item");
  if (static_cast<Eigen::Index>(schema.size()) != j())
    throw std::invalid_argument("dataset: schema size mismatch");
  if (A.size() != n()) throw std::invalid_argument("dataset: A length mismatch");
  std::set<std::string> names;
  for (const auto& s : schema) {
    if (!names.insert(s.name).second)
      throw std::invalid_argument("dataset: duplicate item name " + s.name);
  }
  for (Eigen::Index i = 0; i < n(); ++i)
    if (A[i] != 0 && A[i] != 1)
      throw std::invalid_argument("dataset: A must be 0/1");
  for (Eigen::Index jj = 0; jj < j(); ++jj)
    if (schema[jj].kind == ItemKind::binary)
      check_binary_column(Y.col(jj), "item " + schema[jj].name);
  if (O && O->size() != n())
    throw std::invalid_argument("dataset: O length mismatch");
  if (O && o_kind == ItemKind::binary) check_binary_column(*O, "geo");
  if (!Y.allFinite() || !X.allFinite())
    throw std::invalid_argument("dataset: non-finite entries");
}

}  // namespace drift
