#pragma once

// Zero-temperature replica-symmetric fixed point for ridge logistic regression on the
// Gaussian-equivalent model: damped iteration of the stationarity conditions of the
// free entropy built from the entropic potential g_S (spectrum of Ω, teacher projection)
// and the energetic potential g_E (logistic loss through its proximal operator).

#include <string>

#include <json.hpp>

#include "chmm/equivalence.hpp"

namespace chmm {

struct OverlapState {
  double q = 0.5, V = 0.5, m = 0.01;
  double q_hat = 0.0, V_hat = 0.0, m_hat = 0.0;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
  int clamps = 0;  // times m was pulled back inside m² < ρ q

  nlohmann::json to_json() const;
  static OverlapState from_json(const nlohmann::json& j);
};

struct SolverOpts {
  double damping = 0.5;
  double tol = 1e-7;
  int max_iter = 10000;
  int quadrature_nodes = 199;
  OverlapState init{};

  void validate() const;
};

struct ProxResult {
  double u_star = 0.0;
  double value = 0.0;
};

/// max_u [ -u²/2 - ℓ(y, √V u + omega_field) ] with ℓ(y, x) = log(1 + e^{-y x}).
ProxResult proximal_logistic(int y, double omega_field, double V);

/// Stationarity residual u* + √V ℓ'(y, √V u* + ω) of a prox result.
double prox_residual(int y, double omega_field, double V, double u_star);

struct EnergeticTerms {
  double g = 0.0, dq = 0.0, dV = 0.0, dm = 0.0;
};

/// g_E(q, V, m) = E_z Σ_y H(-y m z / √(ρq - m²)) M_E(y, √q z) and its partials.
EnergeticTerms energetic(double q, double V, double m, double rho_norm, int nodes = 199);

struct EntropicTerms {
  double g = 0.0, dq_hat = 0.0, dV_hat = 0.0, dm_hat = 0.0;
};

/// g_S = (1/2H) tr[(m̂² Φᵀθθᵀ Φ + q̂ Ω)(λ I + V̂ Ω)^{-1}] and its partials.
EntropicTerms entropic(double q_hat, double V_hat, double m_hat, const SpectralModel& spec, double lambda);

/// One undamped application of the saddle-point map to `state` (hats from the energetic
/// partials at (q, V, m), then overlaps from the entropic partials at the new hats).
OverlapState saddle_update(const OverlapState& state, const SpectralModel& spec, double alpha, double lambda,
                           int nodes = 199);

OverlapState iterate_saddle(const SpectralModel& spec, double alpha, double lambda, const SolverOpts& opts = {});

/// ε_g = arccos(m / √(ρ q)) / π.
double generalization_error(double m, double q, double rho_norm);

/// Smallest λ the solver accepts.
inline constexpr double kMinLambda = 1e-8;

}  // namespace chmm
