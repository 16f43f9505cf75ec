#include "freelab/matrixcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace freelab {

namespace {

// Inputs whose asymmetry exceeds this (relative) are rejected outright.
constexpr double kRejectAsymmetry = 1e-6;

double poly_eval(const std::vector<double>& c, double x) {
  double acc = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * x + *it;
  return acc;
}

double poly_deriv(const std::vector<double>& c, double x) {
  double acc = 0.0;
  for (std::size_t k = c.size(); k-- > 1;) acc = acc * x + static_cast<double>(k) * c[k];
  return acc;
}

}  // namespace

// ---------------------------------------------------------------------------
// ScalarFunction

ScalarFunction ScalarFunction::polynomial(std::vector<double> coefficients) {
  return ScalarFunction(Kind::kPolynomial, 0.0, std::move(coefficients));
}
ScalarFunction ScalarFunction::arctan() { return ScalarFunction(Kind::kArctan, 0.0, {}); }
ScalarFunction ScalarFunction::clip(double radius) {
  require(radius > 0.0, "clip radius must be positive");
  return ScalarFunction(Kind::kClip, radius, {});
}
ScalarFunction ScalarFunction::abs() { return ScalarFunction(Kind::kAbs, 0.0, {}); }
ScalarFunction ScalarFunction::smooth_abs(double eps) {
  require(eps > 0.0, "smooth_abs needs eps > 0");
  return ScalarFunction(Kind::kSmoothAbs, eps, {});
}
ScalarFunction ScalarFunction::arctan_polynomial(std::vector<double> coefficients) {
  return ScalarFunction(Kind::kArctanPolynomial, 0.0, std::move(coefficients));
}

double ScalarFunction::value(double x) const {
  switch (kind_) {
    case Kind::kPolynomial: return poly_eval(coef_, x);
    case Kind::kArctan: return std::atan(x);
    case Kind::kClip: return std::clamp(x, -param_, param_);
    case Kind::kAbs: return std::abs(x);
    case Kind::kSmoothAbs: return std::sqrt(x * x + param_ * param_) - param_;
    case Kind::kArctanPolynomial: return poly_eval(coef_, std::atan(x));
  }
  return 0.0;
}

double ScalarFunction::derivative(double x) const {
  switch (kind_) {
    case Kind::kPolynomial: return poly_deriv(coef_, x);
    case Kind::kArctan: return 1.0 / (1.0 + x * x);
    case Kind::kClip: return std::abs(x) < param_ ? 1.0 : 0.0;
    case Kind::kAbs: return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    case Kind::kSmoothAbs: return x / std::sqrt(x * x + param_ * param_);
    case Kind::kArctanPolynomial: return poly_deriv(coef_, std::atan(x)) / (1.0 + x * x);
  }
  return 0.0;
}

double ScalarFunction::lipschitz() const {
  switch (kind_) {
    case Kind::kArctan:
    case Kind::kClip:
    case Kind::kAbs:
    case Kind::kSmoothAbs: return 1.0;
    case Kind::kPolynomial:
      for (std::size_t k = 2; k < coef_.size(); ++k)
        if (coef_[k] != 0.0) return std::numeric_limits<double>::infinity();
      return coef_.size() > 1 ? std::abs(coef_[1]) : 0.0;
    case Kind::kArctanPolynomial: {
      // sup over |t| <= pi/2 of |p'(t)|, bounded by sum k |c_k| (pi/2)^{k-1}.
      double bound = 0.0;
      for (std::size_t k = 1; k < coef_.size(); ++k)
        bound += static_cast<double>(k) * std::abs(coef_[k]) *
                 std::pow(std::numbers::pi / 2, static_cast<double>(k - 1));
      return bound;
    }
  }
  return std::numeric_limits<double>::infinity();
}

std::string ScalarFunction::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case Kind::kPolynomial: os << "poly"; break;
    case Kind::kArctan: os << "arctan"; break;
    case Kind::kClip: os << "clip(" << param_ << ")"; break;
    case Kind::kAbs: os << "abs"; break;
    case Kind::kSmoothAbs: os << "smooth_abs(" << param_ << ")"; break;
    case Kind::kArctanPolynomial: os << "poly∘arctan"; break;
  }
  if (!coef_.empty()) {
    os << "[";
    for (std::size_t k = 0; k < coef_.size(); ++k) os << (k ? "," : "") << coef_[k];
    os << "]";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// HermitianMatrix

double asymmetry(const CMatrix& a) {
  return (a - a.adjoint()).cwiseAbs().maxCoeff();
}

HermitianMatrix::HermitianMatrix(CMatrix m) : m_(std::move(m)) {
  require(m_.rows() == m_.cols(), "HermitianMatrix must be square");
  require(m_.rows() >= 1, "HermitianMatrix must have positive dimension");
  if (!m_.allFinite()) throw InvalidArgument("HermitianMatrix has non-finite entries");
  const double asym = asymmetry(m_);
  if (asym > kHermitianTol) {
    const double scale = 1.0 + m_.cwiseAbs().maxCoeff();
    if (asym > kRejectAsymmetry * scale) throw InvalidArgument("matrix is not Hermitian");
    m_ = (0.5 * (m_ + m_.adjoint())).eval();
  }
}

HermitianMatrix HermitianMatrix::zero(int n) {
  require(n >= 1, "dimension must be positive");
  return HermitianMatrix(CMatrix::Zero(n, n), Unchecked{});
}

HermitianMatrix HermitianMatrix::identity(int n) {
  require(n >= 1, "dimension must be positive");
  return HermitianMatrix(CMatrix::Identity(n, n), Unchecked{});
}

HermitianMatrix HermitianMatrix::diagonal(std::span<const double> diag) {
  require(!diag.empty(), "dimension must be positive");
  CMatrix m = CMatrix::Zero(static_cast<long>(diag.size()), static_cast<long>(diag.size()));
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return HermitianMatrix(std::move(m));
}

HermitianMatrix HermitianMatrix::diagonal(std::initializer_list<double> diag) {
  return diagonal(std::span<const double>(diag.begin(), diag.size()));
}

HermitianMatrix HermitianMatrix::hermitian_part(const CMatrix& m) {
  require(m.rows() == m.cols() && m.rows() >= 1, "hermitian_part needs a square matrix");
  CMatrix h = 0.5 * (m + m.adjoint());
  if (!h.allFinite()) throw InvalidArgument("HermitianMatrix has non-finite entries");
  return HermitianMatrix(std::move(h), Unchecked{});
}

HermitianMatrix HermitianMatrix::operator+(const HermitianMatrix& o) const {
  require(dim() == o.dim(), "dimension mismatch");
  return HermitianMatrix(m_ + o.m_, Unchecked{});
}

HermitianMatrix HermitianMatrix::operator-(const HermitianMatrix& o) const {
  require(dim() == o.dim(), "dimension mismatch");
  return HermitianMatrix(m_ - o.m_, Unchecked{});
}

HermitianMatrix HermitianMatrix::operator*(double s) const {
  return HermitianMatrix(m_ * s, Unchecked{});
}

// ---------------------------------------------------------------------------
// MatrixTuple

MatrixTuple::MatrixTuple(std::vector<HermitianMatrix> components) : comps_(std::move(components)) {
  require(!comps_.empty(), "MatrixTuple needs at least one component");
  for (const auto& c : comps_) require(c.dim() == comps_.front().dim(), "MatrixTuple components differ in dimension");
}

MatrixTuple MatrixTuple::zeros(int d, int n) {
  require(d >= 1, "d must be positive");
  return MatrixTuple(std::vector<HermitianMatrix>(d, HermitianMatrix::zero(n)));
}

MatrixTuple MatrixTuple::identities(int d, int n) {
  require(d >= 1, "d must be positive");
  return MatrixTuple(std::vector<HermitianMatrix>(d, HermitianMatrix::identity(n)));
}

std::vector<CMatrix> MatrixTuple::raw() const {
  std::vector<CMatrix> out;
  out.reserve(comps_.size());
  for (const auto& c : comps_) out.push_back(c.matrix());
  return out;
}

MatrixTuple MatrixTuple::operator+(const MatrixTuple& o) const {
  require(d() == o.d(), "tuple length mismatch");
  std::vector<HermitianMatrix> out;
  for (int j = 0; j < d(); ++j) out.push_back(comps_[j] + o.comps_[j]);
  return MatrixTuple(std::move(out));
}

MatrixTuple MatrixTuple::operator-(const MatrixTuple& o) const {
  require(d() == o.d(), "tuple length mismatch");
  std::vector<HermitianMatrix> out;
  for (int j = 0; j < d(); ++j) out.push_back(comps_[j] - o.comps_[j]);
  return MatrixTuple(std::move(out));
}

MatrixTuple MatrixTuple::operator*(double s) const {
  std::vector<HermitianMatrix> out;
  for (const auto& c : comps_) out.push_back(c * s);
  return MatrixTuple(std::move(out));
}

// ---------------------------------------------------------------------------
// Geometry

HermitianMatrix basis_element(int n, int i, int j) {
  require(n >= 1, "dimension must be positive");
  require(i >= 1 && i <= n && j >= 1 && j <= n, "basis index out of range");
  CMatrix m = CMatrix::Zero(n, n);
  const double rn = std::sqrt(static_cast<double>(n));
  const int a = i - 1;
  const int b = j - 1;
  if (i == j) {
    m(a, a) = rn;
  } else if (i < j) {
    const double s = rn / std::numbers::sqrt2;
    m(a, b) = s;
    m(b, a) = s;
  } else {
    const Complex s(0.0, rn / std::numbers::sqrt2);
    m(a, b) = s;
    m(b, a) = -s;
  }
  return HermitianMatrix(std::move(m));
}

Complex trace_n(const CMatrix& a) {
  require(a.rows() == a.cols(), "trace of a non-square matrix");
  return a.trace() / static_cast<double>(a.rows());
}

double trace_n_product_real(const CMatrix& a, const CMatrix& b) {
  // Re Tr(AB) = Re sum_{ab} A_ab B_ba
  require(a.rows() == b.cols() && a.cols() == b.rows(), "dimension mismatch");
  return (a.array() * b.transpose().array()).sum().real() / static_cast<double>(a.rows());
}

double normalized_trace(const HermitianMatrix& a) {
  const Complex t = trace_n(a.matrix());
  if (std::abs(t.imag()) >= kHermitianTol * (1.0 + std::abs(t.real())))
    throw NumericalError("normalized trace has a non-negligible imaginary part");
  return t.real();
}

double inner_product(const MatrixTuple& x, const MatrixTuple& y) {
  require(x.d() == y.d(), "tuple length mismatch");
  require(x.dim() == y.dim(), "dimension mismatch");
  double acc = 0.0;
  for (int j = 0; j < x.d(); ++j) acc += trace_n_product_real(x[j].matrix(), y[j].matrix());
  return acc;
}

double l2_norm(const MatrixTuple& x) { return std::sqrt(std::max(0.0, inner_product(x, x))); }

double l1_norm(const MatrixTuple& x) {
  double acc = 0.0;
  for (int j = 0; j < x.d(); ++j) acc += trace_of_function(x[j], ScalarFunction::abs());
  return acc;
}

// ---------------------------------------------------------------------------
// Spectral

SpectralDecomposition eigh(const HermitianMatrix& a) {
  Eigen::SelfAdjointEigenSolver<CMatrix> solver(a.matrix(), Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) throw NumericalError("eigh: eigensolver did not converge");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

RVector eigenvalues(const HermitianMatrix& a) {
  Eigen::SelfAdjointEigenSolver<CMatrix> solver(a.matrix(), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NumericalError("eigh: eigensolver did not converge");
  return solver.eigenvalues();
}

HermitianMatrix apply_scalar_function(const HermitianMatrix& a, const ScalarFunction& f) {
  const auto sd = eigh(a);
  RVector fl(sd.eigenvalues.size());
  for (Eigen::Index k = 0; k < fl.size(); ++k) fl[k] = f.value(sd.eigenvalues[k]);
  const CMatrix out = sd.eigenvectors * fl.asDiagonal() * sd.eigenvectors.adjoint();
  return HermitianMatrix::hermitian_part(out);
}

double operator_norm(const HermitianMatrix& a) {
  const RVector ev = eigenvalues(a);
  return std::max(std::abs(ev[0]), std::abs(ev[ev.size() - 1]));
}

double trace_of_function(const HermitianMatrix& a, const ScalarFunction& f) {
  const RVector ev = eigenvalues(a);
  double acc = 0.0;
  for (Eigen::Index k = 0; k < ev.size(); ++k) acc += f.value(ev[k]);
  return acc / static_cast<double>(ev.size());
}

}  // namespace freelab
