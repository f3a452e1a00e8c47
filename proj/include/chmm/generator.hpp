#pragma once

// Correlated hidden manifold model: source/target generative pairs and labeled
// datasets.
//
// A pair (F, θ) with F ∈ R^{L×D}, θ ∈ R^L produces samples
//   x = ReLU(c F / √L),   y = sign(c·θ / √L),   c ~ N(0, I_L),
// with sign(0) resolved to +1.

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "chmm/types.hpp"

namespace chmm {

struct GenerativePair {
  Matrix features;  // L×D
  Vector teacher;   // L

  Index latent_dim() const { return features.rows(); }
  Index input_dim() const { return features.cols(); }

  /// Throws std::invalid_argument on shape mismatch or non-finite entries.
  void validate() const;
};

/// Parameters of the map from a source pair to a target pair.
///
/// When several transforms are active they compose in a fixed order: latent
/// dimension change, then substitution of the first ⌊rho_sub·L_s⌋ shared rows,
/// then η-mixing of the remaining shared rows, then teacher mixing of the
/// shared teacher components.
struct TransformSpec {
  double eta = 1.0;        // feature retention
  double rho_sub = 0.0;    // fraction of substituted features
  double q_teacher = 1.0;  // teacher alignment
  Index target_latent_dim = 0;  // 0 means "same as source"

  void validate() const;
  Index substituted_rows(Index source_latent_dim) const;
  nlohmann::json to_json() const;
  static TransformSpec from_json(const nlohmann::json& j);
};

struct Dataset {
  Matrix inputs;   // M×D, entrywise ≥ 0 for synthetic data
  Vector labels;   // ±1
  Matrix latents;  // M×L (zero columns for real data)

  Index size() const { return inputs.rows(); }
  void validate() const;
};

GenerativePair sample_generative_pair(Index L, Index D, std::uint64_t seed);

GenerativePair derive_target(const GenerativePair& source, const TransformSpec& spec,
                             std::uint64_t seed);

Dataset sample_dataset(const GenerativePair& pair, Index M, std::uint64_t seed,
                       std::uint64_t stream_tag = 0);

/// Labels from latent coefficients: sign(C θ / √L), sign(0) = +1.
Vector teacher_labels(const Matrix& latents, const Vector& teacher);

/// Sign with the library-wide tie-break sign(0) = +1.
inline double sign_pm(double x) noexcept { return x >= 0.0 ? 1.0 : -1.0; }

void save_pair(const std::filesystem::path& dir, const std::string& name, const GenerativePair& pair,
               const nlohmann::json& meta);
GenerativePair load_pair(const std::filesystem::path& dir, const std::string& name);

void save_dataset(const std::filesystem::path& dir, const std::string& name, const Dataset& data,
                  const nlohmann::json& meta);
Dataset load_dataset(const std::filesystem::path& dir, const std::string& name);

}  // namespace chmm
