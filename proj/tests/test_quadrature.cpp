#include <doctest.h>

#include <cmath>
#include <numbers>

#include "chmm/quadrature.hpp"

using namespace chmm;

namespace {
template <class F>
double apply(const QuadratureRule& r, F f) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += r.weights[i] * f(r.nodes[i]);
  return s;
}
}  // namespace

TEST_CASE("Gauss-Hermite integrates normal moments") {
  const auto r = gauss_hermite(20);
  CHECK(apply(r, [](double) { return 1.0; }) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(apply(r, [](double z) { return z * z; }) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(apply(r, [](double z) { return std::pow(z, 4); }) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(apply(r, [](double z) { return std::pow(z, 6); }) == doctest::Approx(15.0).epsilon(1e-12));
}

TEST_CASE("Gauss-Legendre integrates polynomials exactly") {
  const auto r = gauss_legendre(6);
  CHECK(apply(r, [](double) { return 1.0; }) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(apply(r, [](double x) { return std::pow(x, 10); }) == doctest::Approx(2.0 / 11.0).epsilon(1e-13));
  CHECK(std::abs(apply(r, [](double x) { return std::pow(x, 9); })) < 1e-14);
}

TEST_CASE("graded Gaussian rule") {
  for (double scale : {1.0, 0.1, 1e-4}) {
    const auto r = graded_gaussian(199, scale);
    CHECK(apply(r, [](double) { return 1.0; }) == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(apply(r, [](double z) { return z * z; }) == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(apply(r, [](double z) { return std::abs(z); }) ==
          doctest::Approx(std::sqrt(2.0 / std::numbers::pi)).epsilon(1e-13));
    // A kinked integrand: E[max(z, 0)] = 1/√(2π).
    CHECK(apply(r, [](double z) { return std::max(z, 0.0); }) ==
          doctest::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-13));
  }
  // A steep sigmoid resolved at its own scale: E[Φ(κ z)] = 1/2 for any κ.
  const double kappa = 5000.0;
  const auto r = graded_gaussian(199, 1.0 / kappa);
  const double v = apply(r, [&](double z) { return 0.5 * std::erfc(-kappa * z / std::numbers::sqrt2) * (1.0 + z); });
  CHECK(v == doctest::Approx(0.5 + std::sqrt(2.0 / std::numbers::pi) / 2.0 * (kappa / std::sqrt(1 + kappa * kappa))).epsilon(1e-11));
}
