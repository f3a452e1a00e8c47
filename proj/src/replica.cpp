#include "chmm/replica.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "chmm/kernels.hpp"
#include "chmm/quadrature.hpp"

namespace chmm {

using kernels::sigmoid;
using kernels::softplus;

nlohmann::json OverlapState::to_json() const {
  return {{"q", q},         {"V", V},           {"m", m},
          {"q_hat", q_hat}, {"V_hat", V_hat},   {"m_hat", m_hat},
          {"residual", residual}, {"iterations", iterations}, {"converged", converged},
          {"clamps", clamps}};
}

OverlapState OverlapState::from_json(const nlohmann::json& j) {
  OverlapState s;
  s.q = j.at("q").get<double>();
  s.V = j.at("V").get<double>();
  s.m = j.at("m").get<double>();
  s.q_hat = j.at("q_hat").get<double>();
  s.V_hat = j.at("V_hat").get<double>();
  s.m_hat = j.at("m_hat").get<double>();
  s.residual = j.value("residual", 0.0);
  s.iterations = j.value("iterations", 0);
  s.converged = j.value("converged", false);
  s.clamps = j.value("clamps", 0);
  return s;
}

void SolverOpts::validate() const {
  if (!(damping >= 0.0 && damping < 1.0)) throw std::invalid_argument("SolverOpts: damping must lie in [0, 1)");
  if (!(tol > 0.0)) throw std::invalid_argument("SolverOpts: tol must be positive");
  if (max_iter < 1) throw std::invalid_argument("SolverOpts: max_iter must be positive");
  if (quadrature_nodes < 1) throw std::invalid_argument("SolverOpts: quadrature_nodes must be positive");
  if (!(init.q > 0.0 && init.V > 0.0)) throw std::invalid_argument("SolverOpts: init needs q > 0 and V > 0");
}

namespace {

// Root of x - ω - V σ(-x) on [ω, ω + V]: the prox point of the y = +1 logistic loss.
// Newton with bisection whenever the step leaves the bracket or fails to halve the
// previous step (h is sigmoid-shaped for large V and plain Newton can cycle).
double prox_point(double omega, double V) {
  if (V <= 0.0) return omega;
  double lo = omega, hi = omega + V;
  double x = omega + V * sigmoid(-omega);
  double dx_old = hi - lo, dx = dx_old;
  for (int it = 0; it < 500; ++it) {
    const double s = sigmoid(-x);
    const double h = x - omega - V * s;
    if (h == 0.0) break;
    if (h < 0.0) lo = x; else hi = x;
    const double dh = 1.0 + V * s * (1.0 - s);
    const double newton = x - h / dh;
    if (!(newton > lo && newton < hi) || std::abs(2.0 * h) > std::abs(dx_old * dh)) {
      dx_old = dx;
      dx = 0.5 * (hi - lo);
      x = lo + dx;
    } else {
      dx_old = dx;
      dx = h / dh;
      x = newton;
    }
    if (std::abs(dx) <= 1e-16 * std::max(1.0, std::abs(x)) || hi - lo <= 1e-16 * std::max(1.0, std::abs(x))) break;
  }
  return x;
}

// M_E(+1, ω) at the prox point x.
double moreau_value(double x, double omega, double V) {
  if (V <= 0.0) return -softplus(-omega);
  const double d = x - omega;
  return -d * d / (2.0 * V) - softplus(-x);
}

double gaussian_tail(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

double gaussian_density(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

ProxResult proximal_logistic(int y, double omega_field, double V) {
  if (y != 1 && y != -1) throw std::invalid_argument("proximal_logistic: y must be ±1");
  if (!(V >= 0.0)) throw std::invalid_argument("proximal_logistic: V must be non-negative");
  // M(y, ω) = M(1, y ω) and u*(y, ω) = y u*(1, y ω).
  const double w = y * omega_field;
  if (V == 0.0) return {0.0, -softplus(-w)};
  const double x = prox_point(w, V);
  return {y * (x - w) / std::sqrt(V), moreau_value(x, w, V)};
}

double prox_residual(int y, double omega_field, double V, double u_star) {
  const double x = std::sqrt(V) * u_star + omega_field;
  const double dloss = -y * sigmoid(-y * x);
  return u_star + std::sqrt(V) * dloss;
}

EnergeticTerms energetic(double q, double V, double m, double rho_norm, int nodes) {
  if (!(q > 0.0) || !(V > 0.0) || !(rho_norm > 0.0))
    throw std::invalid_argument("energetic: need q > 0, V > 0, rho_norm > 0");
  const double s2 = rho_norm * q - m * m;
  if (!(s2 > 0.0)) throw std::invalid_argument("energetic: need m² < rho_norm q");
  const double s = std::sqrt(s2), kappa = m / s, root_q = std::sqrt(q);
  const double dkappa_dq = -m * rho_norm / (2.0 * s2 * s);
  const double dkappa_dm = rho_norm * q / (s2 * s);

  // Features near z = 0: the H-weight switches over 1/|κ|, the prox kink over ~1/√q.
  double scale = std::min(1.0, 1.0 / root_q);
  if (kappa != 0.0) scale = std::min(scale, 1.0 / std::abs(kappa));
  const QuadratureRule rule = graded_gaussian(nodes, scale);

  const auto n = static_cast<std::ptrdiff_t>(rule.size());
  std::vector<double> g(rule.size()), dq(rule.size()), dV(rule.size()), dm(rule.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    const auto i = static_cast<std::size_t>(k);
    const double z = rule.nodes[i], w = rule.weights[i];
    const double omega = root_q * z;
    const double x = prox_point(omega, V);
    const double f = sigmoid(-x);  // ∂M/∂ω
    const double M = moreau_value(x, omega, V);
    const double tail = gaussian_tail(-kappa * z);
    const double bump = z * gaussian_density(kappa * z);  // ∂H(-κz)/∂κ
    g[i] = 2.0 * w * tail * M;
    dV[i] = w * tail * f * f;
    dq[i] = 2.0 * w * (tail * f * z / (2.0 * root_q) + bump * M * dkappa_dq);
    dm[i] = 2.0 * w * bump * M * dkappa_dm;
  }
  EnergeticTerms out;
  for (std::size_t i = 0; i < rule.size(); ++i) {
    out.g += g[i];
    out.dq += dq[i];
    out.dV += dV[i];
    out.dm += dm[i];
  }
  if (!std::isfinite(out.g) || !std::isfinite(out.dq) || !std::isfinite(out.dV) || !std::isfinite(out.dm)) {
    std::ostringstream msg;
    msg << "energetic: non-finite quadrature at q=" << q << " V=" << V << " m=" << m << " rho=" << rho_norm
        << " (g=" << out.g << " dq=" << out.dq << " dV=" << out.dV << " dm=" << out.dm << ")";
    throw std::runtime_error(msg.str());
  }
  return out;
}

EntropicTerms entropic(double q_hat, double V_hat, double m_hat, const SpectralModel& spec, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("entropic: lambda must be positive");
  if (!(V_hat >= 0.0)) throw std::invalid_argument("entropic: V_hat must be non-negative");
  const double L = static_cast<double>(spec.latent_dim);
  const double inv_2h = 0.5 / static_cast<double>(spec.hidden_dim());
  EntropicTerms out;
  for (Index i = 0; i < spec.hidden_dim(); ++i) {
    const double w = spec.eigenvalues(i), s = spec.teacher_proj(i);
    const double T = L * s * s;
    const double A = lambda + V_hat * w;
    const double num = m_hat * m_hat * T + q_hat * w;
    out.g += num / A;
    out.dq_hat += w / A;
    out.dV_hat -= num * w / (A * A);
    out.dm_hat += 2.0 * m_hat * T / A;
  }
  out.g *= inv_2h;
  out.dq_hat *= inv_2h;
  out.dV_hat *= inv_2h;
  out.dm_hat *= inv_2h;
  return out;
}

namespace {

void apply_hats(OverlapState& s, const EnergeticTerms& e, double alpha, double gamma) {
  s.V_hat = -2.0 * alpha * e.dq;
  s.q_hat = 2.0 * alpha * e.dV;
  s.m_hat = alpha / std::sqrt(gamma) * e.dm;
}

void apply_overlaps(OverlapState& s, const EntropicTerms& e, double gamma) {
  s.V = 2.0 * e.dq_hat;
  s.q = -2.0 * e.dV_hat;
  s.m = e.dm_hat / std::sqrt(gamma);
}

// Pulls m strictly inside the Cauchy–Schwarz cone; returns whether it had to.
bool clamp_overlap(OverlapState& s, double rho_norm) {
  const double bound = std::sqrt(rho_norm * s.q);
  if (std::abs(s.m) < bound) return false;
  s.m = std::copysign(bound - 1e-12 * std::max(1.0, bound), s.m);
  return true;
}

void check_inputs(const SpectralModel& spec, double alpha, double lambda) {
  if (!(alpha > 0.0)) throw std::invalid_argument("iterate_saddle: alpha must be positive");
  if (!(lambda >= kMinLambda))
    throw std::invalid_argument("iterate_saddle: lambda below 1e-8 is not supported (solver unstable)");
  if (spec.hidden_dim() == 0 || !(spec.rho_norm > 0.0) || !(spec.gamma > 0.0))
    throw std::invalid_argument("iterate_saddle: empty or degenerate spectral model");
}

}  // namespace

OverlapState saddle_update(const OverlapState& state, const SpectralModel& spec, double alpha, double lambda,
                           int nodes) {
  check_inputs(spec, alpha, lambda);
  OverlapState next = state;
  apply_hats(next, energetic(state.q, state.V, state.m, spec.rho_norm, nodes), alpha, spec.gamma);
  apply_overlaps(next, entropic(next.q_hat, next.V_hat, next.m_hat, spec, lambda), spec.gamma);
  return next;
}

OverlapState iterate_saddle(const SpectralModel& spec, double alpha, double lambda, const SolverOpts& opts) {
  check_inputs(spec, alpha, lambda);
  opts.validate();
  const double d = opts.damping;

  OverlapState s = opts.init;
  s.iterations = 0;
  s.converged = false;
  s.clamps = 0;
  if (clamp_overlap(s, spec.rho_norm)) ++s.clamps;
  apply_hats(s, energetic(s.q, s.V, s.m, spec.rho_norm, opts.quadrature_nodes), alpha, spec.gamma);

  for (int it = 1; it <= opts.max_iter; ++it) {
    OverlapState next = s;
    apply_overlaps(next, entropic(s.q_hat, s.V_hat, s.m_hat, spec, lambda), spec.gamma);
    next.q = (1.0 - d) * next.q + d * s.q;
    next.V = (1.0 - d) * next.V + d * s.V;
    next.m = (1.0 - d) * next.m + d * s.m;
    if (clamp_overlap(next, spec.rho_norm)) ++next.clamps;

    // Relative change for large overlaps, absolute for small ones.
    auto delta = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
    next.residual = std::max({delta(next.q, s.q), delta(next.V, s.V), delta(next.m, s.m)});
    next.iterations = it;
    if (!std::isfinite(next.residual) || !(next.q > 0.0) || !(next.V > 0.0)) {
      next.converged = false;
      return next;
    }

    OverlapState hats = next;
    apply_hats(hats, energetic(next.q, next.V, next.m, spec.rho_norm, opts.quadrature_nodes), alpha, spec.gamma);
    next.q_hat = (1.0 - d) * hats.q_hat + d * s.q_hat;
    next.V_hat = (1.0 - d) * hats.V_hat + d * s.V_hat;
    next.m_hat = (1.0 - d) * hats.m_hat + d * s.m_hat;
    s = next;
    if (s.residual < opts.tol) {
      s.converged = true;
      break;
    }
  }
  return s;
}

double generalization_error(double m, double q, double rho_norm) {
  if (!(q > 0.0) || !(rho_norm > 0.0)) throw std::invalid_argument("generalization_error: need q > 0, rho_norm > 0");
  double c = m / std::sqrt(rho_norm * q);
  if (std::abs(c) > 1.0 + 1e-12) throw std::domain_error("generalization_error: |m| exceeds √(ρ q)");
  c = std::clamp(c, -1.0, 1.0);
  return std::acos(c) / std::numbers::pi;
}

}  // namespace chmm
