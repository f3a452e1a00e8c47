#include "chmm/generator.hpp"

#include <cmath>
#include <stdexcept>

#include "chmm/container.hpp"
#include "chmm/kernels.hpp"
#include "chmm/rng.hpp"

namespace chmm {

void GenerativePair::validate() const {
  if (features.rows() < 1 || features.cols() < 1)
    throw std::invalid_argument("generative pair: empty feature matrix");
  if (teacher.size() != features.rows())
    throw std::invalid_argument("generative pair: teacher length differs from latent dimension");
  if (!features.allFinite() || !teacher.allFinite())
    throw std::invalid_argument("generative pair: non-finite entries");
}

void TransformSpec::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(eta)) throw std::invalid_argument("transform: eta must lie in [0,1]");
  if (!in_unit(rho_sub)) throw std::invalid_argument("transform: rho_sub must lie in [0,1]");
  if (!in_unit(q_teacher)) throw std::invalid_argument("transform: q_teacher must lie in [0,1]");
  if (target_latent_dim < 0) throw std::invalid_argument("transform: negative target latent dim");
}

Index TransformSpec::substituted_rows(Index source_latent_dim) const {
  // Guard against 0.3*150 = 44.999... style rounding.
  return static_cast<Index>(std::floor(rho_sub * static_cast<double>(source_latent_dim) + 1e-9));
}

nlohmann::json TransformSpec::to_json() const {
  return {{"eta", eta}, {"rho_sub", rho_sub}, {"q_teacher", q_teacher},
          {"target_latent_dim", target_latent_dim}};
}

TransformSpec TransformSpec::from_json(const nlohmann::json& j) {
  TransformSpec s;
  s.eta = j.at("eta").get<double>();
  s.rho_sub = j.at("rho_sub").get<double>();
  s.q_teacher = j.at("q_teacher").get<double>();
  s.target_latent_dim = j.at("target_latent_dim").get<Index>();
  return s;
}

void Dataset::validate() const {
  if (labels.size() != inputs.rows()) throw std::invalid_argument("dataset: label count mismatch");
  if (latents.cols() > 0 && latents.rows() != inputs.rows())
    throw std::invalid_argument("dataset: latent row count mismatch");
  for (Index i = 0; i < labels.size(); ++i)
    if (labels(i) != 1.0 && labels(i) != -1.0) throw std::invalid_argument("dataset: labels must be ±1");
}

GenerativePair sample_generative_pair(Index L, Index D, std::uint64_t seed) {
  if (L < 1 || D < 1) throw std::invalid_argument("sample_generative_pair: dimensions must be positive");
  GenerativePair pair;
  pair.features = gaussian_matrix(L, D, seed, Stream::SourceFeatures);
  pair.teacher = gaussian_vector(L, seed, Stream::SourceTeacher);
  return pair;
}

GenerativePair derive_target(const GenerativePair& source, const TransformSpec& spec,
                             std::uint64_t seed) {
  source.validate();
  spec.validate();
  const Index Ls = source.latent_dim(), D = source.input_dim();
  const Index Lt = spec.target_latent_dim > 0 ? spec.target_latent_dim : Ls;
  const Index shared = std::min(Ls, Lt);
  const Index substituted = std::min(spec.substituted_rows(Ls), shared);

  // Row i of the noise matrix is the fresh draw for target row i, whichever
  // transform consumes it.
  const Matrix noise = gaussian_matrix(Lt, D, seed, Stream::TargetFeatureNoise);
  const Vector teacher_noise = gaussian_vector(Lt, seed, Stream::TargetTeacherNoise);

  GenerativePair target;
  target.features.resize(Lt, D);
  target.teacher.resize(Lt);

  // Dimension change: shared rows copied, extra rows fresh.
  target.features.topRows(shared) = source.features.topRows(shared);
  target.teacher.head(shared) = source.teacher.head(shared);
  if (Lt > shared) {
    target.features.bottomRows(Lt - shared) = noise.bottomRows(Lt - shared);
    target.teacher.tail(Lt - shared) = teacher_noise.tail(Lt - shared);
  }

  // Substitution.
  target.features.topRows(substituted) = noise.topRows(substituted);

  // η-mixing on the remaining shared rows.
  if (spec.eta < 1.0) {
    const double keep = spec.eta, fresh = std::sqrt(1.0 - spec.eta * spec.eta);
    const Index n = shared - substituted;
    target.features.middleRows(substituted, n) =
        keep * target.features.middleRows(substituted, n) + fresh * noise.middleRows(substituted, n);
  }

  // Teacher mixing on the shared components.
  if (spec.q_teacher < 1.0) {
    const double keep = spec.q_teacher, fresh = std::sqrt(1.0 - spec.q_teacher * spec.q_teacher);
    target.teacher.head(shared) = keep * target.teacher.head(shared) + fresh * teacher_noise.head(shared);
  }
  return target;
}

Vector teacher_labels(const Matrix& latents, const Vector& teacher) {
  const Vector field = latents * teacher;
  return field.unaryExpr([](double v) { return sign_pm(v); });
}

Dataset sample_dataset(const GenerativePair& pair, Index M, std::uint64_t seed,
                       std::uint64_t stream_tag) {
  pair.validate();
  if (M < 1) throw std::invalid_argument("sample_dataset: M must be positive");
  const double scale = 1.0 / std::sqrt(static_cast<double>(pair.latent_dim()));
  Dataset data;
  // Rows are indexed so that datasets drawn under different tags never overlap.
  data.latents = gaussian_matrix(M, pair.latent_dim(), derive_seed(seed, stream_tag), Stream::Latent);
  // x = ReLU(c F / √L) is relu_project with W = Fᵀ.
  const Matrix Ft = pair.features.transpose();
  kernels::relu_project(data.latents, Ft, scale, data.inputs);
  data.labels = teacher_labels(data.latents, pair.teacher);
  return data;
}

void save_pair(const std::filesystem::path& dir, const std::string& name, const GenerativePair& pair,
               const nlohmann::json& meta) {
  write_matrix(dir / (name + ".features.bin"), pair.features);
  write_vector(dir / (name + ".teacher.bin"), pair.teacher);
  nlohmann::json j = meta;
  j["latent_dim"] = pair.latent_dim();
  j["input_dim"] = pair.input_dim();
  write_json(dir / (name + ".json"), j);
}

GenerativePair load_pair(const std::filesystem::path& dir, const std::string& name) {
  GenerativePair pair;
  pair.features = read_matrix(dir / (name + ".features.bin"));
  pair.teacher = read_vector(dir / (name + ".teacher.bin"));
  pair.validate();
  return pair;
}

void save_dataset(const std::filesystem::path& dir, const std::string& name, const Dataset& data,
                  const nlohmann::json& meta) {
  write_matrix(dir / (name + ".inputs.bin"), data.inputs);
  write_vector(dir / (name + ".labels.bin"), data.labels);
  if (data.latents.cols() > 0) write_matrix(dir / (name + ".latents.bin"), data.latents);
  nlohmann::json j = meta;
  j["samples"] = data.size();
  j["input_dim"] = data.inputs.cols();
  j["latent_dim"] = data.latents.cols();
  write_json(dir / (name + ".json"), j);
}

Dataset load_dataset(const std::filesystem::path& dir, const std::string& name) {
  Dataset data;
  data.inputs = read_matrix(dir / (name + ".inputs.bin"));
  data.labels = read_vector(dir / (name + ".labels.bin"));
  const auto latents = dir / (name + ".latents.bin");
  if (std::filesystem::exists(latents)) data.latents = read_matrix(latents);
  else data.latents.resize(data.inputs.rows(), 0);
  data.validate();
  return data;
}

}  // namespace chmm
