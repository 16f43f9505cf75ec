#pragma once

// Hermitian matrix arithmetic under the normalized trace tr_n = Tr/n,
// eigendecomposition and functional calculus.

#include <Eigen/Dense>

#include <complex>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "freelab/error.hpp"

namespace freelab {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using RVector = Eigen::VectorXd;

/// Tolerance below which residual asymmetry is tolerated without repair.
inline constexpr double kHermitianTol = 1e-12;

/// A scalar function usable in functional calculus, with a derivative.
class ScalarFunction {
 public:
  enum class Kind { kPolynomial, kArctan, kClip, kAbs, kSmoothAbs, kArctanPolynomial };

  static ScalarFunction polynomial(std::vector<double> coefficients);
  static ScalarFunction arctan();
  static ScalarFunction clip(double radius);
  static ScalarFunction abs();
  /// sqrt(x^2 + eps^2) - eps: convex, smooth, 1-Lipschitz.
  static ScalarFunction smooth_abs(double eps);
  /// p(arctan x) for a real polynomial p.
  static ScalarFunction arctan_polynomial(std::vector<double> coefficients);

  double value(double x) const;
  double derivative(double x) const;
  /// Lipschitz constant when known globally, +inf otherwise.
  double lipschitz() const;

  Kind kind() const { return kind_; }
  double parameter() const { return param_; }
  const std::vector<double>& coefficients() const { return coef_; }
  std::string describe() const;

 private:
  ScalarFunction(Kind k, double p, std::vector<double> c)
      : kind_(k), param_(p), coef_(std::move(c)) {}
  Kind kind_;
  double param_ = 0.0;
  std::vector<double> coef_;
};

class HermitianMatrix {
 public:
  HermitianMatrix() = default;
  /// Validates finiteness and Hermiticity; asymmetry above kHermitianTol
  /// but below a coarse rejection threshold is repaired as (A + A*)/2.
  explicit HermitianMatrix(CMatrix m);

  static HermitianMatrix zero(int n);
  static HermitianMatrix identity(int n);
  static HermitianMatrix diagonal(std::span<const double> diag);
  static HermitianMatrix diagonal(std::initializer_list<double> diag);
  /// (A + A*)/2 without validation of the input's asymmetry.
  static HermitianMatrix hermitian_part(const CMatrix& m);

  int dim() const { return static_cast<int>(m_.rows()); }
  const CMatrix& matrix() const { return m_; }
  Complex operator()(int a, int b) const { return m_(a, b); }

  HermitianMatrix operator+(const HermitianMatrix& o) const;
  HermitianMatrix operator-(const HermitianMatrix& o) const;
  HermitianMatrix operator*(double s) const;
  HermitianMatrix operator-() const { return *this * -1.0; }

 private:
  struct Unchecked {};
  HermitianMatrix(CMatrix m, Unchecked) : m_(std::move(m)) {}
  CMatrix m_;
};

inline HermitianMatrix operator*(double s, const HermitianMatrix& a) { return a * s; }

/// d-tuple of Hermitian matrices of a common dimension.
class MatrixTuple {
 public:
  MatrixTuple() = default;
  explicit MatrixTuple(std::vector<HermitianMatrix> components);

  static MatrixTuple zeros(int d, int n);
  static MatrixTuple identities(int d, int n);

  int d() const { return static_cast<int>(comps_.size()); }
  int dim() const { return comps_.empty() ? 0 : comps_.front().dim(); }
  const HermitianMatrix& operator[](int j) const { return comps_.at(j); }
  const std::vector<HermitianMatrix>& components() const { return comps_; }
  std::vector<CMatrix> raw() const;

  MatrixTuple operator+(const MatrixTuple& o) const;
  MatrixTuple operator-(const MatrixTuple& o) const;
  MatrixTuple operator*(double s) const;

 private:
  std::vector<HermitianMatrix> comps_;
};

struct SpectralDecomposition {
  RVector eigenvalues;  // ascending
  CMatrix eigenvectors; // unitary, columns
};

/// E_{ij} of the real tr_n-orthonormal basis of n x n Hermitian matrices
/// (1-based indices).
HermitianMatrix basis_element(int n, int i, int j);

/// tr_n of an arbitrary square matrix.
Complex trace_n(const CMatrix& a);
/// Re tr_n(A B) without forming the product.
double trace_n_product_real(const CMatrix& a, const CMatrix& b);
double normalized_trace(const HermitianMatrix& a);

double inner_product(const MatrixTuple& x, const MatrixTuple& y);
double l2_norm(const MatrixTuple& x);
double l1_norm(const MatrixTuple& x);

SpectralDecomposition eigh(const HermitianMatrix& a);
RVector eigenvalues(const HermitianMatrix& a);
HermitianMatrix apply_scalar_function(const HermitianMatrix& a, const ScalarFunction& f);
double operator_norm(const HermitianMatrix& a);
/// tr_n f(A) from the spectrum.
double trace_of_function(const HermitianMatrix& a, const ScalarFunction& f);

/// Max entrywise |A - A*|.
double asymmetry(const CMatrix& a);

}  // namespace freelab
