#include "chmm/convex.hpp"

#include <cmath>
#include <stdexcept>

#include "chmm/kernels.hpp"
#include "chmm/rng.hpp"

namespace chmm {

const char* to_string(FeatureMap::Kind kind) {
  return kind == FeatureMap::Kind::Transferred ? "transferred" : "random";
}

FeatureMap random_feature_map(Index H, Index D, std::uint64_t seed) {
  if (H < 1 || D < 1) throw std::invalid_argument("random_feature_map: dimensions must be positive");
  return {gaussian_matrix(H, D, seed, Stream::RandomFeatures), FeatureMap::Kind::Random};
}

FeatureMap transferred_feature_map(const TwoLayerNet& net) {
  return {net.w1, FeatureMap::Kind::Transferred};
}

Matrix activations(const FeatureMap& fm, const Matrix& X) {
  Matrix out;
  kernels::relu_project(X, fm.w1, 1.0 / static_cast<double>(fm.input_dim()), out);
  return out;
}

nlohmann::json ReadoutFit::sidecar() const {
  return {{"lambda", lambda},       {"final_grad_norm", final_grad_norm}, {"iterations", iterations},
          {"converged", converged}, {"objective", objective}};
}

namespace {

double scale_for(const Matrix& V) { return 1.0 / std::sqrt(static_cast<double>(V.cols())); }

}  // namespace

double ridge_logistic_objective(const Matrix& V, const Vector& y, const Vector& w, double lambda) {
  return kernels::logistic_loss(V, y, w, scale_for(V)) + 0.5 * lambda * w.squaredNorm();
}

ReadoutFit fit_ridge_logistic(const Matrix& V, const Vector& y, double lambda, const LogisticOpts& opts,
                              const std::optional<Vector>& init) {
  if (!(lambda > 0.0)) throw std::invalid_argument("fit_ridge_logistic: lambda must be positive");
  if (V.rows() != y.size()) throw std::invalid_argument("fit_ridge_logistic: label count mismatch");
  const Index p = V.cols();
  const double scale = scale_for(V);

  ReadoutFit fit;
  fit.lambda = lambda;
  fit.w2 = init ? *init : Vector::Zero(p);
  if (fit.w2.size() != p) throw std::invalid_argument("fit_ridge_logistic: bad initial point");

  constexpr double kArmijo = 1e-4;
  constexpr double kDecrementFloor = 1e-13;
  for (fit.iterations = 0;; ++fit.iterations) {
    auto terms = kernels::logistic_terms(V, y, fit.w2, scale, true);
    fit.objective = terms.loss + 0.5 * lambda * fit.w2.squaredNorm();
    const Vector grad = terms.gradient + lambda * fit.w2;
    fit.final_grad_norm = grad.lpNorm<Eigen::Infinity>();
    if (fit.final_grad_norm <= opts.tol) {
      fit.converged = true;
      break;
    }
    if (fit.iterations >= opts.max_iter) break;

    terms.hessian.diagonal().array() += lambda;
    Vector step;
    Eigen::LLT<Matrix> llt(terms.hessian);
    if (llt.info() == Eigen::Success) {
      step = -llt.solve(grad);
    } else {
      step = -terms.hessian.ldlt().solve(grad);
    }
    double slope = grad.dot(step);
    if (!(slope < 0.0)) {
      step = -grad;
      slope = -grad.squaredNorm();
    }
    // Newton decrement below the objective's resolution: nothing left to gain.
    if (-slope <= kDecrementFloor * std::max(1.0, std::abs(fit.objective))) {
      fit.converged = true;
      break;
    }
    double t = 1.0;
    bool accepted = false;
    for (int k = 0; k < 60; ++k, t *= 0.5) {
      const Vector trial = fit.w2 + t * step;
      const double obj = ridge_logistic_objective(V, y, trial, lambda);
      if (obj <= fit.objective + kArmijo * t * slope) {
        fit.w2 = trial;
        accepted = true;
        break;
      }
    }
    // No decrease representable in double precision: we are at the floor.
    if (!accepted) break;
  }
  return fit;
}

double readout_error(const Matrix& V, const Vector& y, const Vector& w) {
  const Vector z = V * w;
  Index wrong = 0;
  for (Index i = 0; i < z.size(); ++i) wrong += sign_pm(z(i)) != y(i);
  return static_cast<double>(wrong) / static_cast<double>(z.size());
}

double readout_mean_loss(const Matrix& V, const Vector& y, const Vector& w) {
  return kernels::logistic_loss(V, y, w, scale_for(V)) / static_cast<double>(V.rows());
}

double empirical_test_error(const ReadoutFit& fit, const FeatureMap& fm, const GenerativePair& pair,
                            Index n_test, std::uint64_t seed) {
  if (n_test < 1) throw std::invalid_argument("empirical_test_error: n_test must be positive");
  const Dataset test = sample_dataset(pair, n_test, seed, static_cast<std::uint64_t>(Stream::TestData));
  return readout_error(activations(fm, test.inputs), test.labels, fit.w2);
}

TwoLayerNet stack(const FeatureMap& fm, const Vector& w2) { return {fm.w1, w2}; }

}  // namespace chmm
