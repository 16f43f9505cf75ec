#pragma once

// Cylindrical test functions U(X) = g(tr_n phi_1(X), ..., tr_n phi_m(X)),
// their gradients and Hessians, and the GUE and free Laplacians.

#include <string>
#include <vector>

#include "freelab/ncpoly.hpp"
#include "freelab/randmat.hpp"

namespace freelab {

/// Real polynomial in m commuting variables u1..um.
class OuterPolynomial {
 public:
  struct Term {
    std::vector<int> exponents;
    double coefficient;
  };

  OuterPolynomial() = default;
  explicit OuterPolynomial(int m) : m_(m) {}
  /// Parses "u1*u2 - 0.5*u1^2 + 3"; complex coefficients are rejected.
  static OuterPolynomial parse(const std::string& text, int m);

  int variables() const { return m_; }
  int degree() const;
  const std::vector<Term>& terms() const { return terms_; }
  void add_term(std::vector<int> exponents, double coefficient);

  double value(const std::vector<double>& u) const;
  double partial(const std::vector<double>& u, int o) const;
  double second_partial(const std::vector<double>& u, int o, int q) const;
  std::string to_string() const;

 private:
  double derivative(const std::vector<double>& u, const std::vector<int>& orders) const;

  int m_ = 0;
  std::vector<Term> terms_;
};

class CylindricalFunction {
 public:
  /// Inners must be self-adjoint polynomials in d letters.
  CylindricalFunction(OuterPolynomial outer, std::vector<NCPolynomial> inners);

  /// Inners use d letters per prefix block (see NCPolynomial::parse).
  static CylindricalFunction from_json(const std::string& text, int d,
                                       const std::vector<std::string>& prefixes = {"x"});
  std::string to_json(const std::vector<std::string>& prefixes = {"x"}) const;

  int d() const { return d_; }
  int inner_count() const { return static_cast<int>(inners_.size()); }
  const OuterPolynomial& outer() const { return outer_; }
  const std::vector<NCPolynomial>& inners() const { return inners_; }
  /// D°_j phi_o
  const NCPolynomial& cyclic(int o, int j) const { return cyclic_[o][j]; }
  /// d_i D°_j phi_o
  const TensorPolynomial& quotient(int o, int i, int j) const { return quotient_[o][i][j]; }

 private:
  int d_;
  OuterPolynomial outer_;
  std::vector<NCPolynomial> inners_;
  std::vector<std::vector<NCPolynomial>> cyclic_;
  std::vector<std::vector<std::vector<TensorPolynomial>>> quotient_;
};

double eval(const CylindricalFunction& u, const MatrixTuple& x);

struct CylindricalJet {
  double value = 0.0;
  std::vector<CMatrix> gradient;  // one per letter, empty unless requested
};
/// Value and optional gradient on raw letter matrices. Words of length <= 2
/// are traced without forming matrix products.
CylindricalJet value_and_gradient(const CylindricalFunction& u, std::span<const CMatrix> letters,
                                  bool with_gradient);
MatrixTuple gradient(const CylindricalFunction& u, const MatrixTuple& x);
double hessian_bilinear(const CylindricalFunction& u, const MatrixTuple& x, const MatrixTuple& a,
                        const MatrixTuple& b);

/// d * n^2 above this is rejected by the basis-sum operations.
inline constexpr int kLaplacianBasisGuard = 4096;

/// (1/n^2) sum over letters l and basis elements E of Hess[e^l E, e^l E].
double gue_laplacian(const CylindricalFunction& u, const MatrixTuple& x);
/// sum_i (tr (x) tr)(d_i (grad U)^i) with the outer partials frozen at X.
double free_laplacian(const CylindricalFunction& u, const MatrixTuple& x);
/// (1/n^2) sum_l sum_{o,q} g_oq <D°_l phi_o, D°_l phi_q>.
double correction_term(const CylindricalFunction& u, const MatrixTuple& x);
/// |gue - free - correction|
double identity_residual(const CylindricalFunction& u, const MatrixTuple& x);
bool identity_check(const CylindricalFunction& u, const MatrixTuple& x, double tol);
/// Central second differences of eval along every e^l E, scaled by 1/n^2.
double finite_difference_laplacian(const CylindricalFunction& u, const MatrixTuple& x, double step = 1e-3);

/// Random self-adjoint polynomial with `terms` words of length 1..degree.
NCPolynomial random_selfadjoint_polynomial(int d, int degree, int terms, RngStream& rng);
/// Random cylindrical function with m inners of degree <= inner_degree and an
/// outer polynomial of degree <= outer_degree; coefficients uniform in [-1, 1].
CylindricalFunction random_cylindrical(int d, int m, int inner_degree, int outer_degree, RngStream& rng);

}  // namespace freelab
