#include "chmm/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace chmm {

namespace {

// Golub–Welsch: nodes are eigenvalues of the Jacobi matrix, weights are μ0 times the
// squared first eigenvector components.
QuadratureRule golub_welsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& offdiag, double mu0) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, offdiag, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) throw std::runtime_error("quadrature: eigensolver failed");
  QuadratureRule rule;
  const auto n = diag.size();
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    rule.nodes[static_cast<std::size_t>(i)] = solver.eigenvalues()(i);
    const double v0 = solver.eigenvectors()(0, i);
    rule.weights[static_cast<std::size_t>(i)] = mu0 * v0 * v0;
  }
  return rule;
}

const QuadratureRule& cached_legendre(int n) {
  static std::mutex mu;
  static std::map<int, QuadratureRule> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, gauss_legendre(n)).first;
  return it->second;
}

constexpr double kTailCut = 10.0;

}  // namespace

QuadratureRule gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: n must be positive");
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n), off(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) off(k - 1) = std::sqrt(static_cast<double>(k));
  return golub_welsch(diag, off, 1.0);
}

QuadratureRule gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be positive");
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n), off(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) off(k - 1) = k / std::sqrt(4.0 * k * k - 1.0);
  return golub_welsch(diag, off, 2.0);
}

QuadratureRule graded_gaussian(int n, double feature_scale) {
  if (n < 1) throw std::invalid_argument("graded_gaussian: n must be positive");
  if (!(feature_scale > 0.0)) throw std::invalid_argument("graded_gaussian: feature_scale must be positive");
  const double ell = std::min(feature_scale, 1.0);

  // Breakpoints on [0, kTailCut]: 0, ell, 2 ell, 4 ell, ... < 1, then 1, 2, ..., kTailCut.
  std::vector<double> cuts{0.0};
  for (double b = ell; b < 1.0; b *= 2.0) cuts.push_back(b);
  for (double b = 1.0; b <= kTailCut; b += 1.0) cuts.push_back(b);
  const int panels = static_cast<int>(cuts.size()) - 1;
  const int order = std::max(10, (n + 2 * panels - 1) / (2 * panels));
  const QuadratureRule& base = cached_legendre(order);

  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  QuadratureRule rule;
  rule.nodes.reserve(static_cast<std::size_t>(2 * panels * order));
  rule.weights.reserve(rule.nodes.capacity());
  for (int side : {-1, 1}) {
    for (int p = 0; p < panels; ++p) {
      const double a = cuts[static_cast<std::size_t>(p)], b = cuts[static_cast<std::size_t>(p) + 1];
      const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
      for (std::size_t k = 0; k < base.size(); ++k) {
        const double z = side * (mid + half * base.nodes[k]);
        rule.nodes.push_back(z);
        rule.weights.push_back(half * base.weights[k] * inv_sqrt_2pi * std::exp(-0.5 * z * z));
      }
    }
  }
  return rule;
}

}  // namespace chmm
