#pragma once

#include <cmath>
#include <stdexcept>

namespace drift {

enum class ItemKind { binary, continuous };

inline double log1pexp(double u) {
  // stable for |u| up to ~1e4 and beyond
  if (u <= -37.0) return std::exp(u);
  if (u <= 18.0) return std::log1p(std::exp(u));
  if (u <= 33.3) return u + std::exp(-u);
  return u;
}

inline double expit(double u) {
  if (u >= 0.0) {
    double e = std::exp(-u);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(u);
  return e / (1.0 + e);
}

namespace detail {

// Unchecked variants for hot loops whose inputs are validated up front and
// whose natural parameters are bounded by the feasibility radius.
inline double item_loss_raw(ItemKind kind, double y, double u) {
  if (kind == ItemKind::continuous) {
    double r = y - u;
    return r * r;
  }
  return -y * u + log1pexp(u);
}

inline double item_loss_grad_raw(ItemKind kind, double y, double u) {
  if (kind == ItemKind::continuous) return 2.0 * (u - y);
  return expit(u) - y;
}

}  // namespace detail

// Per-item loss: squared error for continuous items, Bernoulli negative
// log-likelihood -y*u + log(1+exp(u)) for binary items. Binary y may be
// fractional in [0,1] (conditional-expectation targets).
inline double item_loss(ItemKind kind, double y, double u) {
  if (!std::isfinite(y) || !std::isfinite(u))
    throw std::invalid_argument("item_loss: non-finite input");
  return detail::item_loss_raw(kind, y, u);
}

inline double item_loss_grad(ItemKind kind, double y, double u) {
  if (!std::isfinite(y) || !std::isfinite(u))
    throw std::invalid_argument("item_loss_grad: non-finite input");
  return detail::item_loss_grad_raw(kind, y, u);
}

}  // namespace drift
