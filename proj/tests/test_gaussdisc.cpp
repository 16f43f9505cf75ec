#include <doctest.h>

#include <cmath>
#include <numbers>

#include "freelab/gaussdisc.hpp"

using namespace freelab;

TEST_CASE("bin boundaries") {
  Interval b = bin_boundaries(2, 0);
  CHECK(b.lower == 0.0);
  CHECK(b.upper == 0.5);
  b = bin_boundaries(2, 2);
  CHECK(b.lower == 1.0);
  CHECK(std::isinf(b.upper));
  b = bin_boundaries(2, -3);
  CHECK(std::isinf(b.lower));
  CHECK(b.upper == -1.0);
  CHECK_THROWS_AS(bin_boundaries(2, 3), InvalidArgument);
}

TEST_CASE("normal distribution helpers") {
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5));
  CHECK(normal_sf(1.0) == doctest::Approx(0.15865525393145707).epsilon(1e-14));
  CHECK(normal_sf(10.0) == doctest::Approx(7.61985302416047e-24).epsilon(1e-12));
  for (double z : {5.0, 8.0, 20.0, 30.0})
    CHECK(mills_ratio(z) == doctest::Approx(normal_sf(z) / normal_pdf(z)).epsilon(1e-12));
}

TEST_CASE("bin probabilities") {
  for (int N : {1, 2, 8})
    for (double delta : {1.0, 0.25, 0.01}) {
      double mass = 0.0, mean = 0.0;
      for (int j = bin_min(N); j <= N; ++j) {
        const double p = bin_probability(j, delta, N);
        mass += p;
        CHECK(p == doctest::Approx(bin_probability(-j - 1, delta, N)).epsilon(1e-13));
        if (p >= 1e-300) {
          const double w = bin_conditional_mean(j, delta, N);
          mean += p * w;
          CHECK(std::abs(w) <= 2.0);
        }
      }
      CHECK(std::abs(mass - 1.0) <= 1e-12);
      CHECK(std::abs(mean) <= 1e-12);
    }
  CHECK(bin_probability(1, 1.0, 1) == doctest::Approx(0.158655).epsilon(1e-5));
}

TEST_CASE("conditional means") {
  for (int j = -3; j <= 2; ++j)
    CHECK(bin_conditional_mean(j, 0.3, 2) == doctest::Approx(-bin_conditional_mean(-j - 1, 0.3, 2)).epsilon(1e-12));
  const double phi2 = std::exp(-2.0) / std::sqrt(2 * std::numbers::pi);
  CHECK(bin_conditional_mean(2, 0.25, 2) == doctest::Approx(0.5 * phi2 / normal_sf(2.0)).epsilon(1e-12));
  CHECK(bin_conditional_mean(2, 0.25, 2) == doctest::Approx(1.18639).epsilon(5e-4));
  const double w = bin_conditional_mean(0, 1.0, 2);
  CHECK(w >= 0.0);
  CHECK(w <= 0.5);
  for (int N : {1, 2, 8})
    for (double delta : {1.0, 0.25, 0.01})
      for (int j = bin_min(N); j <= N; ++j) {
        if (bin_probability(j, delta, N) < 1e-250) continue;
        const double a = bin_conditional_mean(j, delta, N);
        CHECK(std::abs(a - bin_conditional_mean_quadrature(j, delta, N)) <= 1e-9 * std::max(1.0, std::abs(a)));
      }
  CHECK_THROWS_AS(bin_conditional_mean(8, 1e-4, 8), NumericalError);
}

TEST_CASE("conditional absolute deviation") {
  for (int j = -5; j <= 4; ++j)
    if (bin_probability(j, 0.01, 4) > 1e-250) CHECK(bin_conditional_absdev(j, 0.01, 4) <= 0.25);
  CHECK(bin_conditional_absdev(2, 0.04, 2) <= 0.2);
  // Bin (0, 1] at delta = 1e-4 holds the whole positive half: a half-normal law.
  const double delta = 1e-4;
  const double sigma = std::sqrt(delta);
  const double folded = sigma * std::sqrt(2 / std::numbers::pi);
  CHECK(bin_conditional_mean(0, delta, 1) == doctest::Approx(folded).epsilon(1e-12));
  const double m = std::sqrt(2 / std::numbers::pi);
  const double half_normal_mad = 4 * sigma * (normal_pdf(m) - m * normal_sf(m));
  CHECK(bin_conditional_absdev(0, delta, 1) == doctest::Approx(half_normal_mad).epsilon(1e-8));
}

TEST_CASE("bin paths") {
  BinPath path{1, {1, 1}};
  CHECK(path_probability(path, 0, 1.0) == 1.0);
  CHECK(discrete_noise_value(path, 0, 1.0) == 0.0);
  CHECK(path_probability(path, 2, 1.0) == doctest::Approx(0.025171).epsilon(1e-4));
  BinPath anti{3, {2, -3}};
  CHECK(std::abs(discrete_noise_value(anti, 2, 0.2)) < 1e-14);
  CHECK(classify_bulk_edge(BinPath{2, {0, 0, 0}}) == PathClass::kBulk);
  CHECK(classify_bulk_edge(BinPath{2, {0, 2, 0}}) == PathClass::kEdge);
  const double e = edge_mass(8, 1, 1.0 / 8);
  CHECK(e <= 16 * normal_sf(std::sqrt(8.0)) + 1e-15);
  CHECK(16 * normal_sf(std::sqrt(8.0)) == doctest::Approx(0.0374).epsilon(1e-2));
}

TEST_CASE("truncated Gaussian") {
  CHECK(truncated_gaussian_mean(-40.0) == doctest::Approx(0.0).scale(1.0));
  CHECK(truncated_gaussian_variance(-40.0) == doctest::Approx(1.0));
  CHECK(truncated_gaussian_mean(0.0) == doctest::Approx(std::sqrt(2 / std::numbers::pi)).epsilon(1e-14));
  CHECK(truncated_gaussian_variance(2.0) <= 1.0);
  CHECK(truncated_gaussian_mean(2.0) <= 4.0);
  for (double z = 0.0; z <= 60.0; z += 0.5) {
    CHECK(truncated_gaussian_variance(z) <= 1.0);
    CHECK(truncated_gaussian_variance(z) > 0.0);
    CHECK(truncated_gaussian_mean(z) >= z);
  }
  CHECK(truncated_gaussian_mean(36.999) == doctest::Approx(truncated_gaussian_mean(37.001)).epsilon(1e-4));
}

TEST_CASE("bridge bounds") {
  CHECK(bridge_bound_holds(0.0, 0.0, 1.0, 2000, RngStream(41)));
  CHECK(bridge_bound_holds(0.0, 1.0, 1.0, 2000, RngStream(42)));
  const BridgeCheckReport r = bridge_bound_check(0.0, 0.5, 1.0, 10000, RngStream(43));
  CHECK(r.passed);
  CHECK(r.cells_ok >= static_cast<int>(0.99 * r.cells));
  CHECK(matrix_bridge_bound_check(0.0, 0.5, 1.0, 4, 20, 20, RngStream(44)).passed);
}

TEST_CASE("noise table") {
  const NoiseTable t(2, 0.25);
  double mass = 0.0;
  for (int b = 0; b < bin_count(2); ++b) {
    mass += t.probability(b);
    CHECK(t.mean(b) == doctest::Approx(bin_conditional_mean(b + bin_min(2), 0.25, 2)));
  }
  CHECK(std::abs(mass - 1.0) < 1e-12);
}
