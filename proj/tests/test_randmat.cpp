#include <doctest.h>

#include <cmath>

#include "freelab/nclaw.hpp"
#include "freelab/randmat.hpp"

using namespace freelab;

TEST_CASE("streams are reproducible and splits differ") {
  RngStream a(42), b(42);
  for (int k = 0; k < 10; ++k) CHECK(a() == b());
  RngStream c = RngStream(42).split(1);
  RngStream d = RngStream(42).split(2);
  CHECK(c() != d());
  CHECK(RngStream(42).split({1, 2}).stream_path() == std::vector<std::uint64_t>{1, 2});
  RngStream u(9);
  for (int k = 0; k < 1000; ++k) {
    const double x = u.uniform();
    CHECK((x > 0.0 && x < 1.0));
  }
}

TEST_CASE("GUE normalization") {
  const RngStream base(11);
  double m1 = 0.0, m2 = 0.0;
  constexpr int samples = 2000;
  for (int s = 0; s < samples; ++s) {
    RngStream r = base.split(s);
    const HermitianMatrix g = sample_gue(8, r);
    m1 += normalized_trace(g) / samples;
    m2 += trace_n_product_real(g.matrix(), g.matrix()) / samples;
  }
  CHECK(std::abs(m1) <= 0.02);
  CHECK(m2 >= 0.98);
  CHECK(m2 <= 1.02);

  double m4 = 0.0;
  for (int s = 0; s < 20; ++s) {
    RngStream r = base.split(10000 + s);
    m4 += eigenvalues(sample_gue(256, r)).array().pow(4).mean() / 20;
  }
  CHECK(m4 >= 1.9);
  CHECK(m4 <= 2.1);
}

TEST_CASE("GUE sampling is identical for identical streams") {
  RngStream a(5), b(5);
  CHECK((sample_gue(6, a).matrix() - sample_gue(6, b).matrix()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("GUE increments") {
  const GuePath one = gue_increments(4, 1, {0.0, 1.0}, RngStream(1));
  CHECK(one.increments.size() == 1);
  const RngStream base(12);
  double m2 = 0.0;
  constexpr int samples = 2000;
  for (int s = 0; s < samples; ++s) {
    const GuePath p = gue_increments(8, 1, {0.0, 0.5, 1.0}, base.split(s));
    const CMatrix sum = p.increments[0][0].matrix() + p.increments[1][0].matrix();
    m2 += trace_n_product_real(sum, sum) / samples;
  }
  CHECK(std::abs(m2 - 1.0) <= 0.05);
  CHECK_THROWS_AS(gue_increments(4, 1, {0.0, 0.0}, RngStream(1)), InvalidArgument);
}

TEST_CASE("two GUE components are asymptotically free") {
  NCPolynomial sq(1);
  sq.add_term(Word{0, 0}, 1.0);
  const RngStream base(13);
  double mean = 0.0;
  for (int s = 0; s < 50; ++s) {
    const GuePath p = gue_increments(64, 2, {0.0, 1.0}, base.split(s));
    const MatrixTuple x({p.increments[0][0]}), y({p.increments[0][1]});
    mean += std::abs(freeness_statistic({x, y}, {0, 1}, {sq, sq})) / 50;
  }
  CHECK(mean < 0.1);
}

TEST_CASE("Haar unitaries") {
  RngStream rng(14);
  const CMatrix u = sample_haar_unitary(10, rng);
  CHECK((u.adjoint() * u - CMatrix::Identity(10, 10)).cwiseAbs().maxCoeff() < 1e-10);
  Complex first(0.0);
  for (int s = 0; s < 2000; ++s) first += trace_n(sample_haar_unitary(8, rng)) / 2000.0;
  CHECK(std::abs(first) < 0.05);
}

TEST_CASE("Haar left invariance") {
  RngStream rng(15);
  std::vector<double> diag_a(32), diag_b(32);
  for (int k = 0; k < 32; ++k) {
    diag_a[k] = k < 16 ? 1.0 : -1.0;
    diag_b[k] = k % 3 == 0 ? 2.0 : 0.0;
  }
  const CMatrix A = HermitianMatrix::diagonal(diag_a).matrix();
  const CMatrix B = HermitianMatrix::diagonal(diag_b).matrix();
  const CMatrix V = sample_haar_unitary(32, rng);
  double m1 = 0, m2 = 0, v1 = 0, v2 = 0;
  constexpr int samples = 500;
  for (int s = 0; s < samples; ++s) {
    const CMatrix U = sample_haar_unitary(32, rng);
    const double x = trace_n(U * A * U.adjoint() * B).real();
    const CMatrix W = V * U;
    const double y = trace_n(W * A * W.adjoint() * B).real();
    m1 += x / samples;
    m2 += x * x / samples;
    v1 += y / samples;
    v2 += y * y / samples;
  }
  CHECK(std::abs(m1 - v1) < 0.02);
  CHECK(std::abs(m2 - v2) < 0.02);
}

TEST_CASE("scalar Brownian increments") {
  RngStream rng(16);
  double var = 0.0;
  for (int s = 0; s < 5000; ++s) var += std::pow(brownian_increments({0.0, 1.0}, rng)[0], 2) / 5000;
  CHECK(var >= 0.95);
  CHECK(var <= 1.05);
  CHECK(brownian_increments({0.0}, rng).empty());
  double var4 = 0.0;
  for (int s = 0; s < 5000; ++s) {
    const auto inc = brownian_increments({0.0, 0.25, 0.5, 0.75, 1.0}, rng);
    var4 += std::pow(inc[0] + inc[1] + inc[2] + inc[3], 2) / 5000;
  }
  CHECK(std::abs(var4 - 1.0) <= 0.05);
}
