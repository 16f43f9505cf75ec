#include "freelab/laplacian.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>

#include <json.hpp>

namespace freelab {

// ---------------------------------------------------------------------------
// OuterPolynomial

OuterPolynomial OuterPolynomial::parse(const std::string& text, int m) {
  require(m >= 1, "outer polynomial needs at least one variable");
  OuterPolynomial p(m);
  for (const ParsedTerm& t : parse_terms(text)) {
    if (std::abs(t.coefficient.imag()) > 0.0) throw ConfigError("outer polynomial coefficients must be real");
    std::vector<int> e(m, 0);
    for (const ParsedFactor& f : t.factors) {
      if (f.prefix != "u") throw ConfigError("unknown outer variable '" + f.prefix + "'");
      if (f.index < 1 || f.index > m) throw ConfigError("outer variable index out of range");
      ++e[f.index - 1];
    }
    p.add_term(std::move(e), t.coefficient.real());
  }
  return p;
}

int OuterPolynomial::degree() const {
  int deg = 0;
  for (const Term& t : terms_) {
    int s = 0;
    for (int e : t.exponents) s += e;
    deg = std::max(deg, s);
  }
  return deg;
}

void OuterPolynomial::add_term(std::vector<int> exponents, double coefficient) {
  require(static_cast<int>(exponents.size()) == m_, "exponent vector length mismatch");
  for (Term& t : terms_) {
    if (t.exponents == exponents) {
      t.coefficient += coefficient;
      return;
    }
  }
  terms_.push_back({std::move(exponents), coefficient});
}

double OuterPolynomial::derivative(const std::vector<double>& u, const std::vector<int>& orders) const {
  require(static_cast<int>(u.size()) == m_, "outer polynomial argument count mismatch");
  double total = 0.0;
  for (const Term& t : terms_) {
    double v = t.coefficient;
    for (int o = 0; o < m_ && v != 0.0; ++o) {
      const int e = t.exponents[o];
      const int k = orders[o];
      if (k > e) {
        v = 0.0;
        break;
      }
      for (int r = 0; r < k; ++r) v *= (e - r);
      v *= std::pow(u[o], e - k);
    }
    total += v;
  }
  return total;
}

double OuterPolynomial::value(const std::vector<double>& u) const {
  return derivative(u, std::vector<int>(m_, 0));
}

double OuterPolynomial::partial(const std::vector<double>& u, int o) const {
  std::vector<int> k(m_, 0);
  ++k.at(o);
  return derivative(u, k);
}

double OuterPolynomial::second_partial(const std::vector<double>& u, int o, int q) const {
  std::vector<int> k(m_, 0);
  ++k.at(o);
  ++k.at(q);
  return derivative(u, k);
}

std::string OuterPolynomial::to_string() const {
  std::ostringstream os;
  os.precision(17);
  bool first = true;
  for (const Term& t : terms_) {
    if (first) os << t.coefficient;
    else os << (t.coefficient < 0 ? " - " : " + ") << std::abs(t.coefficient);
    first = false;
    for (int o = 0; o < m_; ++o)
      if (t.exponents[o] > 0) os << "*u" << (o + 1) << (t.exponents[o] > 1 ? "^" + std::to_string(t.exponents[o]) : "");
  }
  return first ? "0" : os.str();
}

// ---------------------------------------------------------------------------
// CylindricalFunction

CylindricalFunction::CylindricalFunction(OuterPolynomial outer, std::vector<NCPolynomial> inners)
    : d_(0), outer_(std::move(outer)), inners_(std::move(inners)) {
  require(!inners_.empty(), "cylindrical function needs at least one inner polynomial");
  require(outer_.variables() == inner_count(), "outer variable count must equal inner count");
  d_ = inners_.front().d();
  for (const NCPolynomial& p : inners_) {
    require(p.d() == d_, "inner polynomials must share the letter count");
    require(is_selfadjoint(p), "inner polynomials must be self-adjoint");
  }
  for (const NCPolynomial& p : inners_) {
    std::vector<NCPolynomial> cyc;
    std::vector<std::vector<TensorPolynomial>> quo(d_);
    for (int j = 0; j < d_; ++j) cyc.push_back(cyclic_derivative(p, j));
    for (int i = 0; i < d_; ++i)
      for (int j = 0; j < d_; ++j) quo[i].push_back(free_difference_quotient(cyc[j], i));
    cyclic_.push_back(std::move(cyc));
    quotient_.push_back(std::move(quo));
  }
}

CylindricalFunction CylindricalFunction::from_json(const std::string& text, int d,
                                                   const std::vector<std::string>& prefixes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("cylindrical function JSON: ") + e.what());
  }
  if (!j.contains("outer") || !j.contains("inners") || !j["inners"].is_array())
    throw ConfigError("cylindrical function JSON needs 'outer' and 'inners'");
  std::vector<NCPolynomial> inners;
  for (const auto& s : j["inners"]) inners.push_back(NCPolynomial::parse(s.get<std::string>(), d, prefixes));
  const int m = static_cast<int>(inners.size());
  if (m == 0) throw ConfigError("cylindrical function needs at least one inner polynomial");
  OuterPolynomial outer = OuterPolynomial::parse(j["outer"].get<std::string>(), m);
  for (const NCPolynomial& p : inners)
    if (!is_selfadjoint(p)) throw ConfigError("inner polynomial is not self-adjoint");
  return CylindricalFunction(std::move(outer), std::move(inners));
}

std::string CylindricalFunction::to_json(const std::vector<std::string>& prefixes) const {
  nlohmann::json j;
  j["outer"] = outer_.to_string();
  j["inners"] = nlohmann::json::array();
  for (const NCPolynomial& p : inners_) j["inners"].push_back(p.to_string(prefixes));
  return j.dump();
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

void check_tuple(const CylindricalFunction& u, const MatrixTuple& x) {
  require(x.d() >= u.d(), "matrix tuple has fewer components than the polynomial letters");
}

MatrixTuple leading(const MatrixTuple& x, int d) {
  if (x.d() == d) return x;
  std::vector<HermitianMatrix> c(x.components().begin(), x.components().begin() + d);
  return MatrixTuple(std::move(c));
}

struct Frozen {
  std::vector<double> traces;
  std::vector<double> g1;
  std::vector<std::vector<double>> g2;
};

Frozen freeze(const CylindricalFunction& u, WordEvaluator& ev) {
  Frozen f;
  const int m = u.inner_count();
  for (const NCPolynomial& p : u.inners()) f.traces.push_back(ev.trace(p).real());
  for (int o = 0; o < m; ++o) f.g1.push_back(u.outer().partial(f.traces, o));
  f.g2.assign(m, std::vector<double>(m, 0.0));
  for (int o = 0; o < m; ++o)
    for (int q = 0; q < m; ++q) f.g2[o][q] = u.outer().second_partial(f.traces, o, q);
  return f;
}

// Nonzero entries of a basis element.
struct Entry {
  int row, col;
  Complex value;
};

std::vector<Entry> basis_entries(int n, int i, int j) {
  const double rn = std::sqrt(static_cast<double>(n));
  if (i == j) return {{i, i, rn}};
  if (i < j) {
    const double s = rn / std::numbers::sqrt2;
    return {{i, j, s}, {j, i, s}};
  }
  const Complex s(0.0, rn / std::numbers::sqrt2);
  return {{i, j, s}, {j, i, -s}};
}

// tr_n(M E)
double trace_with(const CMatrix& m, const std::vector<Entry>& e) {
  Complex s = 0.0;
  for (const Entry& a : e) s += a.value * m(a.col, a.row);
  return s.real() / m.rows();
}

// tr_n(a E b E)
Complex sandwich_trace(const CMatrix& a, const CMatrix& b, const std::vector<Entry>& e) {
  Complex s = 0.0;
  for (const Entry& p : e)
    for (const Entry& r : e) s += p.value * r.value * a(r.col, p.row) * b(p.col, r.row);
  return s / static_cast<double>(a.rows());
}

void guard(int d, int n) {
  require(static_cast<long long>(d) * n * n <= kLaplacianBasisGuard, "Laplacian basis sum exceeds d*n^2 <= 4096 guard");
}

}  // namespace

double eval(const CylindricalFunction& u, const MatrixTuple& x) {
  check_tuple(u, x);
  WordEvaluator ev(leading(x, u.d()));
  std::vector<double> t;
  for (const NCPolynomial& p : u.inners()) t.push_back(ev.trace(p).real());
  return u.outer().value(t);
}

CylindricalJet value_and_gradient(const CylindricalFunction& u, std::span<const CMatrix> letters,
                                  bool with_gradient) {
  require(static_cast<int>(letters.size()) >= u.d(), "too few letter matrices for the cylindrical function");
  const int n = static_cast<int>(letters.front().rows());
  std::optional<WordEvaluator> ev;
  auto word = [&](const Word& w) -> const CMatrix& {
    if (!ev) ev.emplace(letters.first(u.d()));
    return ev->word(w);
  };
  const int m = u.inner_count();
  std::vector<double> traces(m, 0.0);
  for (int o = 0; o < m; ++o) {
    Complex t = 0.0;
    for (const auto& [w, c] : u.inners()[o].terms()) {
      if (w.empty()) t += c;
      else if (w.size() == 1) t += c * letters[w[0]].trace() / static_cast<double>(n);
      else if (w.size() == 2)
        t += c * letters[w[0]].cwiseProduct(letters[w[1]].transpose()).sum() / static_cast<double>(n);
      else t += c * word(w).trace() / static_cast<double>(n);
    }
    traces[o] = t.real();
  }
  CylindricalJet jet;
  jet.value = u.outer().value(traces);
  if (!with_gradient) return jet;
  for (int j = 0; j < u.d(); ++j) {
    CMatrix g = CMatrix::Zero(n, n);
    for (int o = 0; o < m; ++o) {
      const double go = u.outer().partial(traces, o);
      if (go == 0.0) continue;
      for (const auto& [w, c] : u.cyclic(o, j).terms()) {
        if (w.empty()) g.diagonal().array() += go * c;
        else if (w.size() == 1) g += (go * c) * letters[w[0]];
        else g += (go * c) * word(w);
      }
    }
    jet.gradient.push_back(0.5 * (g + g.adjoint()));
  }
  return jet;
}

MatrixTuple gradient(const CylindricalFunction& u, const MatrixTuple& x) {
  check_tuple(u, x);
  WordEvaluator ev(leading(x, u.d()));
  const Frozen f = freeze(u, ev);
  const int n = x.dim();
  std::vector<HermitianMatrix> comps;
  for (int j = 0; j < x.d(); ++j) {
    CMatrix g = CMatrix::Zero(n, n);
    if (j < u.d())
      for (int o = 0; o < u.inner_count(); ++o) g += f.g1[o] * ev.polynomial(u.cyclic(o, j));
    comps.push_back(HermitianMatrix::hermitian_part(g));
  }
  return MatrixTuple(std::move(comps));
}

double hessian_bilinear(const CylindricalFunction& u, const MatrixTuple& x, const MatrixTuple& a,
                        const MatrixTuple& b) {
  check_tuple(u, x);
  require(a.d() == x.d() && b.d() == x.d() && a.dim() == x.dim() && b.dim() == x.dim(),
          "Hessian directions must match the point's shape");
  WordEvaluator ev(leading(x, u.d()));
  const Frozen f = freeze(u, ev);
  const int m = u.inner_count();
  std::vector<double> da(m, 0.0);
  std::vector<double> db(m, 0.0);
  for (int o = 0; o < m; ++o)
    for (int j = 0; j < u.d(); ++j) {
      const CMatrix dphi = ev.polynomial(u.cyclic(o, j));
      da[o] += trace_n_product_real(dphi, a[j].matrix());
      db[o] += trace_n_product_real(dphi, b[j].matrix());
    }
  double total = 0.0;
  for (int o = 0; o < m; ++o)
    for (int q = 0; q < m; ++q) total += f.g2[o][q] * da[o] * db[q];
  for (int o = 0; o < m; ++o) {
    if (f.g1[o] == 0.0) continue;
    for (int i = 0; i < u.d(); ++i)
      for (int j = 0; j < u.d(); ++j) {
        const TensorPolynomial& t = u.quotient(o, i, j);
        if (t.is_zero()) continue;
        total += f.g1[o] * trace_n_product_real(tensor_sharp(t, ev, a[i].matrix()), b[j].matrix());
      }
  }
  return total;
}

double gue_laplacian(const CylindricalFunction& u, const MatrixTuple& x) {
  check_tuple(u, x);
  const int n = x.dim();
  guard(x.d(), n);
  WordEvaluator ev(leading(x, u.d()));
  const Frozen f = freeze(u, ev);
  const int m = u.inner_count();
  double total = 0.0;
  for (int l = 0; l < u.d(); ++l) {
    std::vector<CMatrix> dphi;
    for (int o = 0; o < m; ++o) dphi.push_back(ev.polynomial(u.cyclic(o, l)));
    // Evaluated tensor legs of d_l D°_l phi_o, weighted by g_o.
    std::vector<std::pair<Complex, std::pair<CMatrix, CMatrix>>> legs;
    for (int o = 0; o < m; ++o) {
      if (f.g1[o] == 0.0) continue;
      for (const auto& [key, c] : u.quotient(o, l, l).terms())
        legs.push_back({f.g1[o] * c, {ev.word(key.first), ev.word(key.second)}});
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const std::vector<Entry> e = basis_entries(n, i, j);
        std::vector<double> dir(m);
        for (int o = 0; o < m; ++o) dir[o] = trace_with(dphi[o], e);
        double h = 0.0;
        for (int o = 0; o < m; ++o)
          for (int q = 0; q < m; ++q) h += f.g2[o][q] * dir[o] * dir[q];
        Complex s = 0.0;
        for (const auto& [c, ab] : legs) s += c * sandwich_trace(ab.first, ab.second, e);
        total += h + s.real();
      }
  }
  return total / (static_cast<double>(n) * n);
}

double free_laplacian(const CylindricalFunction& u, const MatrixTuple& x) {
  check_tuple(u, x);
  WordEvaluator ev(leading(x, u.d()));
  const Frozen f = freeze(u, ev);
  double total = 0.0;
  for (int o = 0; o < u.inner_count(); ++o) {
    if (f.g1[o] == 0.0) continue;
    for (int i = 0; i < u.d(); ++i) total += f.g1[o] * tensor_trace(u.quotient(o, i, i), ev).real();
  }
  return total;
}

double correction_term(const CylindricalFunction& u, const MatrixTuple& x) {
  check_tuple(u, x);
  const int n = x.dim();
  guard(x.d(), n);
  WordEvaluator ev(leading(x, u.d()));
  const Frozen f = freeze(u, ev);
  const int m = u.inner_count();
  double total = 0.0;
  for (int l = 0; l < u.d(); ++l) {
    std::vector<CMatrix> dphi;
    for (int o = 0; o < m; ++o) dphi.push_back(ev.polynomial(u.cyclic(o, l)));
    for (int o = 0; o < m; ++o)
      for (int q = 0; q < m; ++q) total += f.g2[o][q] * trace_n_product_real(dphi[o], dphi[q]);
  }
  return total / (static_cast<double>(n) * n);
}

double identity_residual(const CylindricalFunction& u, const MatrixTuple& x) {
  return std::abs(gue_laplacian(u, x) - free_laplacian(u, x) - correction_term(u, x));
}

bool identity_check(const CylindricalFunction& u, const MatrixTuple& x, double tol) {
  return identity_residual(u, x) < tol;
}

double finite_difference_laplacian(const CylindricalFunction& u, const MatrixTuple& x, double step) {
  check_tuple(u, x);
  require(step > 0.0, "finite-difference step must be positive");
  const int n = x.dim();
  guard(x.d(), n);
  const double centre = eval(u, x);
  double total = 0.0;
  for (int l = 0; l < u.d(); ++l)
    for (int i = 1; i <= n; ++i)
      for (int j = 1; j <= n; ++j) {
        const HermitianMatrix e = basis_element(n, i, j) * step;
        std::vector<HermitianMatrix> plus = x.components();
        std::vector<HermitianMatrix> minus = x.components();
        plus[l] = plus[l] + e;
        minus[l] = minus[l] - e;
        total += (eval(u, MatrixTuple(plus)) - 2.0 * centre + eval(u, MatrixTuple(minus))) / (step * step);
      }
  return total / (static_cast<double>(n) * n);
}

// ---------------------------------------------------------------------------
// Random instances

NCPolynomial random_selfadjoint_polynomial(int d, int degree, int terms, RngStream& rng) {
  require(d >= 1 && degree >= 1 && terms >= 1, "random polynomial parameters must be positive");
  NCPolynomial p(d);
  for (int t = 0; t < terms; ++t) {
    const int len = 1 + static_cast<int>(rng.uniform() * degree) % degree;
    Word w;
    for (int k = 0; k < len; ++k) w.push_back(static_cast<int>(rng.uniform() * d) % d);
    const Complex c(2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0);
    p = p + NCPolynomial::monomial(d, w, c) + NCPolynomial::monomial(d, reversed(w), std::conj(c));
  }
  return p;
}

CylindricalFunction random_cylindrical(int d, int m, int inner_degree, int outer_degree, RngStream& rng) {
  require(m >= 1 && outer_degree >= 1, "random cylindrical parameters must be positive");
  std::vector<NCPolynomial> inners;
  for (int o = 0; o < m; ++o) inners.push_back(random_selfadjoint_polynomial(d, inner_degree, 3, rng));
  OuterPolynomial outer(m);
  // Every exponent vector of total degree 1..outer_degree.
  std::vector<int> e(m, 0);
  while (true) {
    int k = 0;
    while (k < m && ++e[k] > outer_degree) e[k++] = 0;
    if (k == m) break;
    int total = 0;
    for (int v : e) total += v;
    if (total <= outer_degree) outer.add_term(e, 2.0 * rng.uniform() - 1.0);
  }
  return CylindricalFunction(std::move(outer), std::move(inners));
}

}  // namespace freelab
