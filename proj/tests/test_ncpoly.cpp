#include <doctest.h>

#include <cmath>

#include "freelab/laplacian.hpp"
#include "freelab/ncpoly.hpp"

using namespace freelab;

namespace {

MatrixTuple gue_tuple(int d, int n, RngStream& rng) {
  std::vector<HermitianMatrix> c;
  for (int l = 0; l < d; ++l) c.push_back(sample_gue(n, rng));
  return MatrixTuple(std::move(c));
}

}  // namespace

TEST_CASE("parse and print round trip") {
  const NCPolynomial p = NCPolynomial::parse("2*x1*x2*x1 - 0.5*x2 + 0.25i*x1^2 + 3", 2);
  CHECK(p.coefficient(Word{0, 1, 0}) == Complex(2.0));
  CHECK(p.coefficient(Word{1}) == Complex(-0.5));
  CHECK(p.coefficient(Word{0, 0}) == Complex(0.0, 0.25));
  CHECK(p.coefficient(Word{}) == Complex(3.0));
  CHECK(NCPolynomial::parse(p.to_string(), 2) == p);
  CHECK(p.degree() == 3);
  CHECK_THROWS(NCPolynomial::parse("x3", 2));
  CHECK_THROWS(NCPolynomial::parse("2**x1", 2));
}

TEST_CASE("evaluation") {
  const MatrixTuple x = MatrixTuple::identities(2, 3);
  const CMatrix one = evaluate(NCPolynomial::constant(2, 1.0), x);
  CHECK((one - CMatrix::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(evaluate_trace(NCPolynomial::constant(2, 1.0), x) == Complex(1.0));

  const MatrixTuple diag({HermitianMatrix::diagonal({1.0, 2.0}), HermitianMatrix::diagonal({-1.0, 5.0})});
  const NCPolynomial comm = NCPolynomial::parse("x1*x2 - x2*x1", 2);
  CHECK(evaluate(comm, diag).cwiseAbs().maxCoeff() == 0.0);

  CMatrix swap(2, 2);
  swap << 0.0, 1.0, 1.0, 0.0;
  const MatrixTuple s({HermitianMatrix(swap)});
  const CMatrix sq = evaluate(NCPolynomial::parse("x1^2", 1), s);
  CHECK((sq - CMatrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(std::abs(evaluate_trace(NCPolynomial::parse("x1^2", 1), s) - Complex(1.0)) < 1e-15);
}

TEST_CASE("star and self-adjointness") {
  CHECK(star(NCPolynomial::parse("x1*x2", 2)) == NCPolynomial::parse("x2*x1", 2));
  CHECK(star(NCPolynomial::parse("1i*x1", 1)) == NCPolynomial::parse("-1i*x1", 1));
  RngStream rng(21);
  for (int k = 0; k < 10; ++k) {
    NCPolynomial p(2);
    for (int t = 0; t < 5; ++t) {
      Word w;
      const int len = 1 + static_cast<int>(rng() % 3);
      for (int i = 0; i < len; ++i) w.push_back(static_cast<int>(rng() % 2));
      p.add_term(w, Complex(rng.normal(), rng.normal()));
    }
    CHECK(is_selfadjoint(p + star(p)));
  }
  CHECK_FALSE(is_selfadjoint(NCPolynomial::parse("x1*x2", 2)));
}

TEST_CASE("free difference quotient") {
  TensorPolynomial one(1);
  one.add_term({}, {}, 1.0);
  CHECK(free_difference_quotient(NCPolynomial::parse("x1", 1), 0) == one);

  TensorPolynomial expected(2);
  expected.add_term({}, {1, 0}, 1.0);
  expected.add_term({0, 1}, {}, 1.0);
  CHECK(free_difference_quotient(NCPolynomial::parse("x1*x2*x1", 2), 0) == expected);
  CHECK(free_difference_quotient(NCPolynomial::parse("x1^2", 2), 1).is_zero());
}

TEST_CASE("cyclic derivative") {
  CHECK(cyclic_derivative(NCPolynomial::parse("x1^2", 1), 0) == NCPolynomial::parse("2*x1", 1));
  CHECK(cyclic_derivative(NCPolynomial::parse("x1*x2", 2), 0) == NCPolynomial::parse("x2", 2));
  CHECK(cyclic_derivative(NCPolynomial::parse("x1^3", 2), 1).is_zero());
}

TEST_CASE("tensor sharp and trace") {
  RngStream rng(22);
  const MatrixTuple x = gue_tuple(1, 4, rng);
  const CMatrix c = sample_gue(4, rng).matrix();
  TensorPolynomial one(1);
  one.add_term({}, {}, 1.0);
  CHECK((tensor_sharp(one, x, c) - c).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(std::abs(tensor_trace(one, x) - Complex(1.0)) < 1e-15);

  TensorPolynomial xx(1);
  xx.add_term({0}, {0}, 1.0);
  const MatrixTuple id = MatrixTuple::identities(1, 4);
  CHECK((tensor_sharp(xx, id, c) - c).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(std::abs(tensor_trace(xx, id) - Complex(1.0)) < 1e-15);

  const MatrixTuple d12({HermitianMatrix::diagonal({1.0, 2.0})});
  const TensorPolynomial q = free_difference_quotient(NCPolynomial::parse("x1^2", 1), 0);
  CHECK(std::abs(tensor_trace(q, d12) - Complex(3.0)) < 1e-14);
}

TEST_CASE("cyclic derivative is the trace gradient") {
  RngStream rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const NCPolynomial p = random_selfadjoint_polynomial(2, 4, 5, rng);
    const MatrixTuple x = gue_tuple(2, 4, rng);
    const MatrixTuple e = gue_tuple(2, 4, rng);
    double exact = 0.0;
    for (int j = 0; j < 2; ++j)
      exact += trace_n_product_real(evaluate(cyclic_derivative(p, j), x), e[j].matrix());
    const double h = 1e-4 * (1.0 + l2_norm(x));
    const double fd = (evaluate_trace(p, x + e * h).real() - evaluate_trace(p, x - e * h).real()) / (2 * h);
    CHECK(std::abs(fd - exact) <= 1e-6 * (1.0 + std::abs(exact)));
  }
}

TEST_CASE("word evaluator matches direct evaluation") {
  RngStream rng(24);
  const MatrixTuple x = gue_tuple(2, 5, rng);
  const NCPolynomial p = random_selfadjoint_polynomial(2, 4, 6, rng);
  WordEvaluator ev(x);
  CHECK((ev.polynomial(p) - evaluate(p, x)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(ev.trace(p) - evaluate_trace(p, x)) < 1e-12);
}
