#pragma once

// Data-parallel inner loops shared by the trainer, the convex solver and the
// covariance estimator.
//
// Every kernel partitions rows into fixed blocks of kBlockRows and reduces
// partial sums over a fixed number of lanes in lane order, so the floating-point
// result does not depend on the OpenMP thread count. The `reference` namespace
// holds plain scalar loops with the same contracts; they are slow and exist as
// test oracles and benchmark baselines.

#include <cmath>

#include "chmm/types.hpp"

namespace chmm::kernels {

inline constexpr Index kBlockRows = 256;
inline constexpr int kLanes = 8;

/// out = ReLU(scale * X * Wᵀ). X is n×d, W is h×d, out is n×h.
void relu_project(const Matrix& X, const Matrix& W, double scale, Matrix& out);

/// Returns AᵀA (p×p, fully populated).
Matrix symmetric_moment(const Matrix& A);

/// Returns AᵀB (p×r). A and B must have the same row count.
Matrix cross_moment(const Matrix& A, const Matrix& B);

/// Column sums of A.
Vector column_sums(const Matrix& A);

struct LogisticTerms {
  double loss = 0.0;  // Σ_μ log(1 + exp(-y_μ z_μ)), z_μ = scale * V_μ·w
  Vector gradient;    // ∂loss/∂w
  Matrix hessian;     // ∂²loss/∂w² (empty unless requested)
};

/// Unregularized logistic loss terms on a design matrix. Labels are ±1.
LogisticTerms logistic_terms(const Matrix& V, const Vector& y, const Vector& w, double scale,
                             bool with_hessian);

/// Logistic loss only (line searches).
double logistic_loss(const Matrix& V, const Vector& y, const Vector& w, double scale);

namespace reference {

void relu_project(const Matrix& X, const Matrix& W, double scale, Matrix& out);
Matrix symmetric_moment(const Matrix& A);
Matrix cross_moment(const Matrix& A, const Matrix& B);
LogisticTerms logistic_terms(const Matrix& V, const Vector& y, const Vector& w, double scale,
                             bool with_hessian);

}  // namespace reference

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// 1 / (1 + exp(-x)) without overflow.
inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace chmm::kernels
