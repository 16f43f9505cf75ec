#include <doctest.h>

#include <cmath>

#include "freelab/ldp.hpp"

using namespace freelab;

namespace {

TerminalFunctional half_square() {
  TerminalFunctional psi;
  psi.d = 1;
  NCPolynomial sq(1);
  sq.add_term(Word{0, 0}, 1.0);
  OuterPolynomial half(1);
  half.add_term({1}, 0.5);
  psi.cylindrical = CylindricalFunction(half, {sq});
  return psi;
}

OptimizerConfig small_config() {
  OptimizerConfig c;
  c.train_samples = 256;
  c.validation_samples = 4000;
  c.max_iterations = 60;
  return c;
}

}  // namespace

TEST_CASE("left side: constants and positivity") {
  TerminalFunctional c;
  c.d = 1;
  c.offset = 0.7;
  const LdpEstimate e = boue_dupuis_lhs(c, 4, 100, RngStream(91));
  CHECK(e.value == doctest::Approx(0.7).epsilon(1e-14));
  const LdpEstimate s = boue_dupuis_lhs(half_square(), 4, 500, RngStream(92));
  CHECK(s.value >= 0.0);
}

TEST_CASE("left side: Gaussian integral oracle") {
  const LdpEstimate e = boue_dupuis_lhs(half_square(), 8, 10000, RngStream(93));
  CHECK(std::abs(e.value - 0.5 * std::log(2.0)) <= 0.02);
}

TEST_CASE("right side: zero terminal cost") {
  TerminalFunctional zero;
  zero.d = 1;
  const OptimizationResult r = boue_dupuis_rhs(zero, 4, 2, small_config(), RngStream(94));
  CHECK(std::abs(r.value) < 1e-14);
}

TEST_CASE("right side: variational representation") {
  const TerminalFunctional psi = half_square();
  const OptimizationResult r = boue_dupuis_rhs(psi, 8, 8, small_config(), RngStream(95));
  const LdpEstimate l = boue_dupuis_lhs(psi, 8, 10000, RngStream(96));
  CHECK(std::abs(r.value - 0.5 * std::log(2.0)) <= 0.05 * 0.5 * std::log(2.0));
  CHECK(r.value >= l.value - 3 * std::hypot(l.std_error, r.std_error));
}

TEST_CASE("trace functionals") {
  TraceFunctional f;
  f.offset = 0.25;
  f.terms.push_back({0, {0.0, 1.0}, 2.0});
  const NCLaw id = arctan_law(MatrixTuple::identities(1, 2), 2);
  CHECK(f.on_law(id) == doctest::Approx(0.25 + 2.0 * std::atan(1.0)));
  const TerminalFunctional psi = f.negated_on_arctan(1);
  CHECK(psi(MatrixTuple::identities(1, 2)) == doctest::Approx(-f.on_law(id)));
}

TEST_CASE("rate function candidate") {
  CHECK_THROWS_AS(rate_function_candidate(semicircle_arctan_reference(2), {}, 4, 2, small_config(), RngStream(97)),
                  InvalidArgument);

  TraceFunctional constant;
  constant.offset = 1.3;
  const RateEstimate c =
      rate_function_candidate(semicircle_arctan_reference(2), {constant}, 4, 2, small_config(), RngStream(98));
  CHECK(std::abs(c.value) < 1e-12);

  std::vector<TraceFunctional> linear;
  for (double w : {-0.2, 0.2}) {
    TraceFunctional f;
    f.terms.push_back({0, {0.0, 1.0}, w});
    linear.push_back(f);
  }
  const RateEstimate r = rate_function_candidate(semicircle_arctan_reference(2), linear, 8, 4, small_config(), RngStream(99));
  CHECK(std::abs(r.value) <= 0.05);
  CHECK(r.per_function.size() == 2);
}
