#pragma once

// Frozen-feature classifiers (TF and RF): v = ReLU(x w1ᵀ / D) and a readout w2
// fitted by L2-regularized logistic regression
//   min_w  Σ_μ log(1 + exp(-y_μ v_μ·w / √H)) + (λ/2)‖w‖².

#include <cstdint>
#include <optional>

#include <json.hpp>

#include "chmm/generator.hpp"
#include "chmm/twolayer.hpp"
#include "chmm/types.hpp"

namespace chmm {

struct FeatureMap {
  enum class Kind { Transferred, Random };

  Matrix w1;  // H×D
  Kind kind = Kind::Random;

  Index hidden_dim() const { return w1.rows(); }
  Index input_dim() const { return w1.cols(); }
};

const char* to_string(FeatureMap::Kind kind);

FeatureMap random_feature_map(Index H, Index D, std::uint64_t seed);
FeatureMap transferred_feature_map(const TwoLayerNet& net);

/// Row μ is ReLU(X_μ w1ᵀ / D).
Matrix activations(const FeatureMap& fm, const Matrix& X);

struct ReadoutFit {
  Vector w2;
  double lambda = 0.0;
  double final_grad_norm = 0.0;  // max-norm of the objective gradient
  int iterations = 0;
  bool converged = false;
  double objective = 0.0;

  nlohmann::json sidecar() const;
};

struct LogisticOpts {
  double tol = 1e-7;
  int max_iter = 10000;
};

/// Damped Newton with Armijo backtracking. Stops when the gradient sup-norm is
/// below `tol` or when the Newton decrement falls under 1e-13 of the objective
/// (roundoff floor at large M). Non-convergence is reported through
/// `converged` and `final_grad_norm`, not thrown.
ReadoutFit fit_ridge_logistic(const Matrix& V, const Vector& y, double lambda,
                              const LogisticOpts& opts = {}, const std::optional<Vector>& init = {});

/// Regularized objective at w (what fit_ridge_logistic minimizes).
double ridge_logistic_objective(const Matrix& V, const Vector& y, const Vector& w, double lambda);

/// Fraction of rows where sign(v·w/√H) ≠ y.
double readout_error(const Matrix& V, const Vector& y, const Vector& w);

/// Mean logistic loss on the rows (no regularization).
double readout_mean_loss(const Matrix& V, const Vector& y, const Vector& w);

/// Misclassification rate on n_test fresh samples of `pair`.
double empirical_test_error(const ReadoutFit& fit, const FeatureMap& fm, const GenerativePair& pair,
                            Index n_test, std::uint64_t seed);

/// The network obtained by stacking the feature map and the fitted readout.
TwoLayerNet stack(const FeatureMap& fm, const Vector& w2);

}  // namespace chmm
