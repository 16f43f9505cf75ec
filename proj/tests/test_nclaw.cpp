#include <doctest.h>

#include <cmath>
#include <numbers>

#include "freelab/nclaw.hpp"
#include "freelab/randmat.hpp"

using namespace freelab;

TEST_CASE("empirical laws") {
  const NCLaw zero = empirical_law(MatrixTuple::zeros(1, 3), 6);
  for (const auto& [w, v] : zero.moments()) CHECK(std::abs(v - (w.empty() ? Complex(1.0) : Complex(0.0))) < 1e-15);

  const NCLaw id = empirical_law(MatrixTuple::identities(1, 3), 6);
  for (const auto& [w, v] : id.moments()) CHECK(std::abs(v - Complex(1.0)) < 1e-15);

  const NCLaw pm = empirical_law(MatrixTuple({HermitianMatrix::diagonal({1.0, -1.0})}), 6);
  for (int m = 0; m <= 6; ++m) CHECK(std::abs(pm.moment(Word(m, 0)) - Complex(m % 2 ? 0.0 : 1.0)) < 1e-15);
  CHECK_NOTHROW(pm.validate());
}

TEST_CASE("arctan laws") {
  const NCLaw zero = arctan_law(MatrixTuple::zeros(1, 3), 4);
  CHECK(std::abs(zero.moment(Word{0, 0})) < 1e-15);
  const NCLaw id = arctan_law(MatrixTuple::identities(1, 3), 5);
  for (int m = 0; m <= 5; ++m)
    CHECK(std::abs(id.moment(Word(m, 0)) - std::pow(std::numbers::pi / 4, m)) < 1e-14);

  RngStream rng(31);
  const MatrixTuple x({sample_gue(6, rng) * 3.0, sample_gue(6, rng)});
  const NCLaw law = arctan_law(x, 4);
  for (const auto& [w, v] : law.moments()) CHECK(std::abs(v) <= std::pow(std::numbers::pi / 2, w.size()) + 1e-12);
}

TEST_CASE("law metric") {
  const NCLaw a = arctan_law(MatrixTuple::zeros(1, 2), 8);
  const NCLaw b = arctan_law(MatrixTuple::identities(1, 2), 8);
  CHECK(law_metric(a, a, 8) == 0.0);
  double expected = 0.0;
  for (int m = 1; m <= 8; ++m) expected += std::pow(4.0, -m);
  CHECK(law_metric(a, b, 8) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.333328).epsilon(1e-5));

  RngStream rng(32);
  for (int t = 0; t < 5; ++t) {
    const NCLaw p = arctan_law(MatrixTuple({sample_gue(4, rng), sample_gue(4, rng)}), 4);
    const NCLaw q = arctan_law(MatrixTuple({sample_gue(4, rng), sample_gue(4, rng)}), 4);
    const NCLaw r = arctan_law(MatrixTuple({sample_gue(4, rng), sample_gue(4, rng)}), 4);
    CHECK(law_metric(p, r, 4) <= law_metric(p, q, 4) + law_metric(q, r, 4) + 1e-12);
  }
}

TEST_CASE("law JSON round trip") {
  RngStream rng(33);
  const NCLaw law = empirical_law(MatrixTuple({sample_gue(3, rng), sample_gue(3, rng)}), 3);
  const NCLaw back = NCLaw::from_json(law.to_json());
  CHECK(back.d() == 2);
  CHECK(law_metric(law, back, 3) < 1e-15);
}

TEST_CASE("freeness statistic") {
  RngStream rng(34);
  NCPolynomial sq(1);
  sq.add_term(Word{0, 0}, 1.0);
  const MatrixTuple x({sample_gue(5, rng)});
  const MatrixTuple y({sample_gue(5, rng)});
  CHECK(std::abs(freeness_statistic({x}, {0}, {sq})) < 1e-14);
  CHECK_THROWS_AS(freeness_statistic({x, y}, {0, 0}, {sq, sq}), InvalidArgument);

  const RngStream base(35);
  double mean = 0.0;
  for (int s = 0; s < 50; ++s) {
    RngStream r = base.split(s);
    const MatrixTuple a({sample_gue(128, r)});
    const MatrixTuple b({sample_gue(128, r)});
    mean += std::abs(freeness_statistic({a, b}, {0, 1}, {sq, sq})) / 50;
  }
  CHECK(mean < 0.05);
}

TEST_CASE("semicircle moments") {
  CHECK(semicircle_moment(2) == 1.0);
  CHECK(semicircle_moment(4) == 2.0);
  CHECK(semicircle_moment(3) == 0.0);
  CHECK(catalan(4) == 14.0);
  CHECK(catalan(10) == 16796.0);
}

TEST_CASE("arctan law of GUE approaches the semicircle reference") {
  const NCLaw ref = semicircle_arctan_reference(6);
  CHECK(std::abs(ref.moment(Word{0})) < 1e-12);
  const RngStream base(36);
  double small = 0.0, large = 0.0;
  for (int s = 0; s < 20; ++s) {
    RngStream r = base.split(s);
    small += law_metric(arctan_law(MatrixTuple({sample_gue(16, r)}), 6), ref, 6) / 20;
    large += law_metric(arctan_law(MatrixTuple({sample_gue(128, r)}), 6), ref, 6) / 20;
  }
  CHECK(large < small);
}
