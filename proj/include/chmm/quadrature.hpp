#pragma once

#include <vector>

namespace chmm {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const { return nodes.size(); }
};

/// n-point Gauss–Hermite rule for the standard normal measure: Σ w_i f(z_i) ≈ E[f(z)], z ~ N(0,1).
QuadratureRule gauss_hermite(int n);

/// n-point Gauss–Legendre rule on [-1, 1].
QuadratureRule gauss_legendre(int n);

/// Composite Gauss–Legendre rule for E[f(z)], z ~ N(0,1), with panels graded geometrically
/// towards z = 0 down to width `feature_scale`, then unit panels out to |z| = 10. The Gaussian
/// density is folded into the weights. Roughly `n` nodes in total, never fewer than 10 per panel.
QuadratureRule graded_gaussian(int n, double feature_scale);

}  // namespace chmm
