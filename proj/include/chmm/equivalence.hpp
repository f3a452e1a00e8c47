#pragma once

// Gaussian-equivalent description of a frozen feature map acting on a target
// hidden manifold model: the second moments of (c, v), with c the latent
// coefficients and v = ReLU(ReLU(c F/√L) w1ᵀ / D) the activations, and the
// spectral data of Ω that the replica solver consumes.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "chmm/convex.hpp"
#include "chmm/generator.hpp"
#include "chmm/types.hpp"

namespace chmm {

enum class MomentKind { Uncentered, Centered };

struct EquivalentModel {
  Matrix omega;           // H×H, E[v vᵀ]
  Matrix phi;             // L×H, E[c vᵀ]
  double rho_norm = 0.0;  // ‖θ_t‖² / L_t
  double gamma = 0.0;     // L_t / H
  Index n_mc = 0;
  Vector activation_mean;  // E[v], diagnostic
  MomentKind kind = MomentKind::Uncentered;

  Index hidden_dim() const { return omega.rows(); }
  Index latent_dim() const { return phi.rows(); }
};

struct SpectralModel {
  Vector eigenvalues;   // of Ω, descending, clamped at 0
  Vector teacher_proj;  // s = Uᵀ Φᵀ θ / √L_t in the eigenbasis of Ω
  double rho_norm = 0.0;
  double gamma = 0.0;
  Index latent_dim = 0;
  Index clamped_eigenvalues = 0;

  Index hidden_dim() const { return eigenvalues.size(); }
};

/// Default Monte Carlo budget: 10 samples per hidden unit.
Index default_mc_samples(Index H);

EquivalentModel estimate_covariances(const FeatureMap& fm, const GenerativePair& target, Index n_mc,
                                     std::uint64_t seed, MomentKind kind = MomentKind::Uncentered);

/// Eigenbasis of Ω with the teacher projected into it; rho_norm is taken from `teacher`.
SpectralModel spectralize(const EquivalentModel& eq, const Vector& teacher);

/// tr[(m̂² Φᵀθθᵀ Φ + q̂ Ω)(λ I + V̂ Ω)^{-1}] evaluated on the spectrum.
double resolvent_trace(const SpectralModel& spec, double q_hat, double V_hat, double m_hat, double lambda);

void save_equivalent_model(const std::filesystem::path& dir, const std::string& name,
                           const EquivalentModel& eq, const nlohmann::json& meta);
EquivalentModel load_equivalent_model(const std::filesystem::path& dir, const std::string& name);

void save_spectral_model(const std::filesystem::path& dir, const std::string& name,
                         const SpectralModel& spec, const nlohmann::json& meta);
SpectralModel load_spectral_model(const std::filesystem::path& dir, const std::string& name);

}  // namespace chmm
