#include <doctest.h>

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "chmm/kernels.hpp"
#include "chmm/quadrature.hpp"
#include "chmm/replica.hpp"
#include "chmm/rng.hpp"

using namespace chmm;

namespace {

// Grid search plus bisection on the derivative of -u²/2 - ℓ(y, √V u + ω).
double brute_prox_u(int y, double omega, double V) {
  auto obj = [&](double u) { return -0.5 * u * u - kernels::softplus(-y * (std::sqrt(V) * u + omega)); };
  auto dobj = [&](double u) { return -u + y * std::sqrt(V) * kernels::sigmoid(-y * (std::sqrt(V) * u + omega)); };
  double best = -10.0;
  for (int i = 0; i <= 20000; ++i) {
    const double u = -10.0 + 20.0 * i / 20000.0;
    if (obj(u) > obj(best)) best = u;
  }
  double lo = best - 1e-3, hi = best + 1e-3;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (dobj(mid) > 0.0) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

SpectralModel small_spectral_model() {
  const Index D = 120, H = 60, L = 30;
  const auto pair = sample_generative_pair(L, D, 1);
  const auto fm = random_feature_map(H, D, 2);
  return spectralize(estimate_covariances(fm, pair, 20 * H, 3), pair.teacher);
}

}  // namespace

TEST_CASE("prox: degenerate and saturated cases") {
  const auto r0 = proximal_logistic(1, 0.7, 0.0);
  CHECK(r0.u_star == 0.0);
  CHECK(r0.value == doctest::Approx(-kernels::softplus(-0.7)).epsilon(1e-15));
  const auto r1 = proximal_logistic(-1, 0.7, 0.0);
  CHECK(r1.value == doctest::Approx(-kernels::softplus(0.7)).epsilon(1e-15));
  const auto sat = proximal_logistic(1, 60.0, 2.0);
  CHECK(std::abs(sat.u_star) < 1e-20);
  CHECK(std::abs(sat.value) < 1e-20);
}

TEST_CASE("prox: brute-force and frozen oracles at y=+1, ω=0, V=1") {
  const auto r = proximal_logistic(1, 0.0, 1.0);
  CHECK(std::abs(r.u_star - brute_prox_u(1, 0.0, 1.0)) < 1e-8);
  // Independent scipy minimization of the same scalar problem.
  CHECK(std::abs(r.value - (-0.5930145580865889)) < 1e-8);
  CHECK(std::abs(r.u_star - 0.4010581375731811) < 1e-6);
}

TEST_CASE("prox: stationarity and label symmetry") {
  double worst = 0.0;
  for (int y : {1, -1})
    for (double omega = -40.0; omega <= 25.0; omega += 0.37)
      for (double V : {1e-6, 0.01, 0.5, 1.0, 7.0, 20.0, 300.0}) {
        const auto r = proximal_logistic(y, omega, V);
        worst = std::max(worst, std::abs(prox_residual(y, omega, V, r.u_star)));
        const auto mirror = proximal_logistic(-y, -omega, V);
        CHECK(mirror.value == doctest::Approx(r.value).epsilon(1e-13));
        CHECK(mirror.u_star == doctest::Approx(-r.u_star).epsilon(1e-12));
        CHECK(std::abs(r.u_star - brute_prox_u(y, omega, V)) < 1e-6 * std::max(1.0, std::abs(r.u_star)));
      }
  CHECK(worst < 1e-10);
  CHECK_THROWS_AS(proximal_logistic(1, 0.0, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(proximal_logistic(0, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("energetic: frozen adaptive-quadrature oracle") {
  // scipy.integrate.quad over z of Σ_y H(-y m z/s) M_E(y, √q z), partials by central differences.
  const auto e = energetic(0.7, 0.3, 0.2, 1.0);
  CHECK(std::abs(e.g - (-0.6595588221741105)) < 1e-9);
  CHECK(std::abs(e.dq - (-0.1019693953663303)) < 1e-7);
  CHECK(std::abs(e.dV - 0.10932615361336494) < 1e-7);
  CHECK(std::abs(e.dm - 0.374153777099595) < 1e-7);
}

TEST_CASE("energetic: partials match central differences") {
  const double h = 1e-6;
  auto check_at = [&](double q, double V, double m, double rho) {
    const auto e = energetic(q, V, m, rho);
    const double fq = (energetic(q + h, V, m, rho).g - energetic(q - h, V, m, rho).g) / (2 * h);
    const double fV = (energetic(q, V + h, m, rho).g - energetic(q, V - h, m, rho).g) / (2 * h);
    const double fm = (energetic(q, V, m + h, rho).g - energetic(q, V, m - h, rho).g) / (2 * h);
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1e-6, std::abs(b)); };
    CHECK(rel(e.dq, fq) < 1e-5);
    CHECK(rel(e.dV, fV) < 1e-5);
    CHECK(rel(e.dm, fm) < 1e-5);
  };
  check_at(0.7, 0.3, 0.2, 1.0);
  // Envelope consistency across a 3×3×3 grid; m runs up to 90% of √(ρq).
  for (double q : {0.3, 2.0, 40.0})
    for (double V : {0.05, 1.0, 20.0})
      for (double frac : {-0.5, 0.3, 0.9}) check_at(q, V, frac * std::sqrt(1.3 * q), 1.3);
}

TEST_CASE("energetic: m = 0 reduction") {
  const double q = 0.8, V = 0.6, rho = 1.0;
  const auto e = energetic(q, V, 0.0, rho);
  // g_E(m=0) = E_z ½(M(1, √q z) + M(-1, √q z)).
  const auto gh = gauss_hermite(200);
  double avg = 0.0, fmean = 0.0;
  for (std::size_t i = 0; i < gh.size(); ++i) {
    const double w = std::sqrt(q) * gh.nodes[i];
    avg += gh.weights[i] * 0.5 * (proximal_logistic(1, w, V).value + proximal_logistic(-1, w, V).value);
    const auto r = proximal_logistic(1, w, V);
    fmean += gh.weights[i] * r.u_star / std::sqrt(V);  // σ(-x*) = u*/√V
  }
  CHECK(std::abs(e.g - avg) < 1e-9);
  // dm(0) = (2/√(2πρ)) E_z[σ(-x*)], strictly positive.
  CHECK(std::abs(e.dm - 2.0 / std::sqrt(2.0 * std::numbers::pi * rho) * fmean) < 1e-9);
  CHECK(e.dm > 0.0);
}

TEST_CASE("energetic: quadrature stability") {
  for (double m : {0.0, 0.5, 0.99}) {
    const double q = 1.2, V = 0.4, rho = 1.0;
    const double mm = m * std::sqrt(rho * q);
    const double a = energetic(q, V, mm, rho, 199).g, b = energetic(q, V, mm, rho, 398).g;
    CHECK(std::abs(a - b) < 1e-9);
  }
  CHECK_THROWS_AS(energetic(1.0, 1.0, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(energetic(1.0, 0.0, 0.1, 1.0), std::invalid_argument);
}

TEST_CASE("entropic: isotropic closed form") {
  SpectralModel spec;
  const Index H = 9;
  spec.eigenvalues = Vector::Ones(H);
  spec.teacher_proj = Vector::Zero(H);
  spec.latent_dim = 4;
  spec.rho_norm = 1.0;
  spec.gamma = 4.0 / H;
  const auto e = entropic(0.6, 1.5, 0.0, spec, 0.1);
  CHECK(e.g == doctest::Approx(0.6 / (2.0 * (0.1 + 1.5))).epsilon(1e-14));
}

TEST_CASE("entropic: dense oracle and exact partials") {
  const Index H = 6, L = 4;
  const Matrix A = gaussian_matrix(H, H, 4, Stream::TestData);
  EquivalentModel eq;
  eq.omega = A * A.transpose() / H;
  eq.phi = gaussian_matrix(L, H, 5, Stream::TestData);
  eq.rho_norm = 1.0;
  eq.gamma = static_cast<double>(L) / H;
  const Vector theta = gaussian_vector(L, 6, Stream::TestData);
  const auto spec = spectralize(eq, theta);
  const double qh = 0.8, Vh = 1.7, mh = 0.45, lam = 0.03;

  const Eigen::MatrixXd om = eq.omega;
  const Eigen::VectorXd pt = eq.phi.transpose() * theta;
  const Eigen::MatrixXd num = mh * mh * pt * pt.transpose() + qh * om;
  const Eigen::MatrixXd res = (lam * Eigen::MatrixXd::Identity(H, H) + Vh * om).inverse();
  const double dense = (num * res).trace() / (2.0 * H);
  const auto e = entropic(qh, Vh, mh, spec, lam);
  CHECK(std::abs(e.g - dense) < 1e-10 * std::abs(dense));

  const double h = 1e-5;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
  CHECK(rel(e.dq_hat, (entropic(qh + h, Vh, mh, spec, lam).g - entropic(qh - h, Vh, mh, spec, lam).g) / (2 * h)) < 1e-8);
  CHECK(rel(e.dV_hat, (entropic(qh, Vh + h, mh, spec, lam).g - entropic(qh, Vh - h, mh, spec, lam).g) / (2 * h)) < 1e-8);
  CHECK(rel(e.dm_hat, (entropic(qh, Vh, mh + h, spec, lam).g - entropic(qh, Vh, mh - h, spec, lam).g) / (2 * h)) < 1e-8);
}

TEST_CASE("generalization_error closed forms") {
  CHECK(generalization_error(0.0, 2.0, 1.5) == 0.5);
  CHECK(generalization_error(std::sqrt(1.5 * 2.0), 2.0, 1.5) == 0.0);
  CHECK(generalization_error(0.5 * std::sqrt(3.0), 3.0, 1.0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  double prev = 1.0;
  for (double m = -1.0; m <= 1.0; m += 0.1) {
    const double e = generalization_error(m, 1.0, 1.0);
    CHECK(e <= prev);
    prev = e;
  }
  CHECK(generalization_error(1.0 + 1e-13, 1.0, 1.0) == 0.0);
  CHECK_THROWS_AS(generalization_error(1.1, 1.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(generalization_error(0.1, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("iterate_saddle: no-data limit") {
  const auto spec = small_spectral_model();
  const auto s = iterate_saddle(spec, 1e-5, 1e-2);
  CHECK(s.converged);
  CHECK(std::abs(s.m) < 1e-3);
  CHECK(std::abs(generalization_error(s.m, s.q, spec.rho_norm) - 0.5) < 1e-3);
}

TEST_CASE("iterate_saddle: fixed-point self-consistency and invariants") {
  const auto spec = small_spectral_model();
  SolverOpts opts;
  opts.tol = 1e-11;
  const auto s = iterate_saddle(spec, 2.0, 1e-3, opts);
  REQUIRE(s.converged);
  CHECK(s.q > 0.0);
  CHECK(s.V > 0.0);
  CHECK(s.m * s.m <= spec.rho_norm * s.q);
  const auto again = saddle_update(s, spec, 2.0, 1e-3);
  CHECK(std::abs(again.q - s.q) < 1e-7);
  CHECK(std::abs(again.V - s.V) < 1e-7);
  CHECK(std::abs(again.m - s.m) < 1e-7);
  // More data helps.
  const auto more = iterate_saddle(spec, 8.0, 1e-3);
  CHECK(generalization_error(more.m, more.q, spec.rho_norm) < generalization_error(s.m, s.q, spec.rho_norm));
}

TEST_CASE("iterate_saddle: argument checks and serialization") {
  const auto spec = small_spectral_model();
  CHECK_THROWS_AS(iterate_saddle(spec, 1.0, 1e-9), std::invalid_argument);
  CHECK_THROWS_AS(iterate_saddle(spec, 0.0, 1e-3), std::invalid_argument);
  SolverOpts bad;
  bad.damping = 1.0;
  CHECK_THROWS_AS(iterate_saddle(spec, 1.0, 1e-3, bad), std::invalid_argument);
  SolverOpts few;
  few.max_iter = 2;
  const auto s = iterate_saddle(spec, 1.0, 1e-3, few);
  CHECK_FALSE(s.converged);
  CHECK(s.iterations == 2);
  CHECK(s.residual > 0.0);
  const auto back = OverlapState::from_json(s.to_json());
  CHECK(back.q == s.q);
  CHECK(back.m_hat == s.m_hat);
  CHECK(back.iterations == s.iterations);
  CHECK(back.converged == s.converged);
}
