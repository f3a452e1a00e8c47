#include "chmm/equivalence.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "chmm/container.hpp"
#include "chmm/kernels.hpp"
#include "chmm/rng.hpp"

namespace chmm {

namespace {
constexpr Index kMcChunk = 4096;
}

Index default_mc_samples(Index H) { return 10 * H; }

EquivalentModel estimate_covariances(const FeatureMap& fm, const GenerativePair& target, Index n_mc,
                                     std::uint64_t seed, MomentKind kind) {
  target.validate();
  if (fm.input_dim() != target.input_dim())
    throw std::invalid_argument("estimate_covariances: feature map and pair disagree on D");
  if (n_mc < 1) throw std::invalid_argument("estimate_covariances: n_mc must be positive");
  const Index H = fm.hidden_dim(), L = target.latent_dim();
  if (n_mc < H)
    std::clog << "warning: n_mc = " << n_mc << " < H = " << H << "; Ω will be rank deficient\n";

  const Matrix Ft = target.features.transpose();
  const double latent_scale = 1.0 / std::sqrt(static_cast<double>(L));
  const double input_scale = 1.0 / static_cast<double>(fm.input_dim());

  Matrix vv = Matrix::Zero(H, H), cv = Matrix::Zero(L, H);
  Vector v_sum = Vector::Zero(H), c_sum = Vector::Zero(L);
  Matrix x, v;
  // Sample μ always comes from engine row μ, so the estimate does not depend on the chunking.
  for (Index start = 0; start < n_mc; start += kMcChunk) {
    const Index len = std::min(kMcChunk, n_mc - start);
    const Matrix c = gaussian_matrix(len, L, seed, Stream::MonteCarlo, static_cast<std::uint64_t>(start));
    kernels::relu_project(c, Ft, latent_scale, x);
    kernels::relu_project(x, fm.w1, input_scale, v);
    vv += kernels::symmetric_moment(v);
    cv += kernels::cross_moment(c, v);
    v_sum += kernels::column_sums(v);
    c_sum += kernels::column_sums(c);
  }
  const double n = static_cast<double>(n_mc);
  EquivalentModel eq;
  eq.kind = kind;
  eq.n_mc = n_mc;
  eq.activation_mean = v_sum / n;
  eq.omega = vv / n;
  eq.phi = cv / n;
  if (kind == MomentKind::Centered) {
    const Vector c_mean = c_sum / n;
    eq.omega -= eq.activation_mean * eq.activation_mean.transpose();
    eq.phi -= c_mean * eq.activation_mean.transpose();
  }
  eq.omega = 0.5 * (eq.omega + eq.omega.transpose()).eval();
  eq.rho_norm = target.teacher.squaredNorm() / static_cast<double>(L);
  eq.gamma = static_cast<double>(L) / static_cast<double>(H);
  return eq;
}

SpectralModel spectralize(const EquivalentModel& eq, const Vector& teacher) {
  if (teacher.size() != eq.latent_dim())
    throw std::invalid_argument("spectralize: teacher length differs from latent dimension");
  const Eigen::MatrixXd omega = eq.omega;
  if (!omega.isApprox(omega.transpose(), 1e-10))
    throw std::invalid_argument("spectralize: Ω is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(omega);
  if (solver.info() != Eigen::Success) throw std::runtime_error("spectralize: eigensolver failed");

  const Index H = eq.hidden_dim();
  const Eigen::VectorXd projected = eq.phi.transpose() * teacher;
  SpectralModel spec;
  spec.eigenvalues.resize(H);
  spec.teacher_proj.resize(H);
  spec.rho_norm = teacher.squaredNorm() / static_cast<double>(eq.latent_dim());
  spec.gamma = eq.gamma;
  spec.latent_dim = eq.latent_dim();
  const double root_L = std::sqrt(static_cast<double>(eq.latent_dim()));
  // Eigen sorts ascending; store descending.
  for (Index i = 0; i < H; ++i) {
    const Index src = H - 1 - i;
    double w = solver.eigenvalues()(src);
    if (w < 0.0) {
      w = 0.0;
      ++spec.clamped_eigenvalues;
    }
    spec.eigenvalues(i) = w;
    spec.teacher_proj(i) = solver.eigenvectors().col(src).dot(projected) / root_L;
  }
  return spec;
}

double resolvent_trace(const SpectralModel& spec, double q_hat, double V_hat, double m_hat, double lambda) {
  const double L = static_cast<double>(spec.latent_dim);
  double total = 0.0;
  for (Index i = 0; i < spec.hidden_dim(); ++i) {
    const double w = spec.eigenvalues(i), s = spec.teacher_proj(i);
    total += (m_hat * m_hat * L * s * s + q_hat * w) / (lambda + V_hat * w);
  }
  return total;
}

void save_equivalent_model(const std::filesystem::path& dir, const std::string& name,
                           const EquivalentModel& eq, const nlohmann::json& meta) {
  write_matrix(dir / (name + ".omega.bin"), eq.omega);
  write_matrix(dir / (name + ".phi.bin"), eq.phi);
  write_vector(dir / (name + ".mean.bin"), eq.activation_mean);
  nlohmann::json j = meta;
  j["n_mc"] = eq.n_mc;
  j["rho_norm"] = eq.rho_norm;
  j["gamma"] = eq.gamma;
  j["centered"] = eq.kind == MomentKind::Centered;
  write_json(dir / (name + ".json"), j);
}

EquivalentModel load_equivalent_model(const std::filesystem::path& dir, const std::string& name) {
  EquivalentModel eq;
  eq.omega = read_matrix(dir / (name + ".omega.bin"));
  eq.phi = read_matrix(dir / (name + ".phi.bin"));
  eq.activation_mean = read_vector(dir / (name + ".mean.bin"));
  const auto j = read_json(dir / (name + ".json"));
  eq.n_mc = j.at("n_mc").get<Index>();
  eq.rho_norm = j.at("rho_norm").get<double>();
  eq.gamma = j.at("gamma").get<double>();
  eq.kind = j.at("centered").get<bool>() ? MomentKind::Centered : MomentKind::Uncentered;
  return eq;
}

void save_spectral_model(const std::filesystem::path& dir, const std::string& name,
                         const SpectralModel& spec, const nlohmann::json& meta) {
  write_vector(dir / (name + ".eigenvalues.bin"), spec.eigenvalues);
  write_vector(dir / (name + ".teacher_proj.bin"), spec.teacher_proj);
  nlohmann::json j = meta;
  j["rho_norm"] = spec.rho_norm;
  j["gamma"] = spec.gamma;
  j["latent_dim"] = spec.latent_dim;
  j["clamped_eigenvalues"] = spec.clamped_eigenvalues;
  write_json(dir / (name + ".json"), j);
}

SpectralModel load_spectral_model(const std::filesystem::path& dir, const std::string& name) {
  SpectralModel spec;
  spec.eigenvalues = read_vector(dir / (name + ".eigenvalues.bin"));
  spec.teacher_proj = read_vector(dir / (name + ".teacher_proj.bin"));
  const auto j = read_json(dir / (name + ".json"));
  spec.rho_norm = j.at("rho_norm").get<double>();
  spec.gamma = j.at("gamma").get<double>();
  spec.latent_dim = j.at("latent_dim").get<Index>();
  spec.clamped_eigenvalues = j.at("clamped_eigenvalues").get<Index>();
  return spec;
}

}  // namespace chmm
