#include "freelab/nclaw.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "freelab/quadrature.hpp"

namespace freelab {

// ---------------------------------------------------------------------------
// Quadrature (shared with gaussdisc)

namespace {

double simpson_step(const std::function<double(double)>& f, double a, double fa, double b, double fb,
                    double m, double fm, double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  if (depth <= 0) throw NumericalError("adaptive Simpson did not converge");
  return simpson_step(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol, int max_depth) {
  if (a == b) return 0.0;
  // Seed with a few panels so narrow features are not missed at the top level.
  constexpr int kPanels = 8;
  double total = 0.0;
  const double h = (b - a) / kPanels;
  for (int p = 0; p < kPanels; ++p) {
    const double lo = a + p * h;
    const double hi = p + 1 == kPanels ? b : lo + h;
    const double mid = 0.5 * (lo + hi);
    const double flo = f(lo);
    const double fhi = f(hi);
    const double fmid = f(mid);
    const double whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
    total += simpson_step(f, lo, flo, hi, fhi, mid, fmid, whole, tol / kPanels, max_depth);
  }
  return total;
}

// ---------------------------------------------------------------------------
// NCLaw

NCLaw::NCLaw(int d, int max_degree, std::map<Word, Complex, GradedLexLess> moments, std::optional<double> radius_bound)
    : d_(d), max_degree_(max_degree), moments_(std::move(moments)), radius_(radius_bound) {
  require(d >= 1 && max_degree >= 0, "NCLaw: bad shape");
}

Complex NCLaw::moment(const Word& w) const {
  const auto it = moments_.find(w);
  if (it == moments_.end()) throw InvalidArgument("NCLaw: no moment stored for word " + word_to_string(w));
  return it->second;
}

Complex NCLaw::apply(const NCPolynomial& p) const {
  require(p.degree() <= max_degree_, "NCLaw::apply: polynomial degree exceeds the truncation");
  Complex acc = 0.0;
  for (const auto& [w, c] : p.terms()) acc += c * moment(w);
  return acc;
}

void NCLaw::validate(double tol) const {
  if (std::abs(moment({}) - Complex(1.0)) > tol) throw InvalidArgument("NCLaw: moment(1) != 1");
  for (const auto& [w, m] : moments_) {
    for (std::size_t s = 1; s < w.size(); ++s) {
      Word rot(w.begin() + static_cast<long>(s), w.end());
      rot.insert(rot.end(), w.begin(), w.begin() + static_cast<long>(s));
      if (std::abs(moment(rot) - m) > tol) throw InvalidArgument("NCLaw: cyclic invariance fails at " + word_to_string(w));
    }
    if (std::abs(moment(reversed(w)) - std::conj(m)) > tol)
      throw InvalidArgument("NCLaw: conjugate symmetry fails at " + word_to_string(w));
    if (radius_ && std::abs(m) > std::pow(*radius_, static_cast<double>(w.size())) * (1.0 + tol))
      throw InvalidArgument("NCLaw: radius bound fails at " + word_to_string(w));
  }
}

std::string NCLaw::to_json() const {
  nlohmann::json j;
  j["d"] = d_;
  j["D"] = max_degree_;
  if (radius_) j["radius_bound"] = *radius_;
  auto arr = nlohmann::json::array();
  for (const auto& [w, m] : moments_) {
    std::vector<int> letters;
    for (int l : w) letters.push_back(l + 1);
    arr.push_back({{"word", letters}, {"re", m.real()}, {"im", m.imag()}});
  }
  j["moments"] = std::move(arr);
  return j.dump();
}

NCLaw NCLaw::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const int d = j.at("d").get<int>();
    std::map<Word, Complex, GradedLexLess> moments;
    for (const auto& e : j.at("moments")) {
      Word w;
      for (int l : e.at("word").get<std::vector<int>>()) {
        if (l < 1 || l > d) throw ConfigError("NCLaw JSON: letter out of range");
        w.push_back(l - 1);
      }
      moments[w] = Complex(e.at("re").get<double>(), e.at("im").get<double>());
    }
    std::optional<double> radius;
    if (j.contains("radius_bound")) radius = j["radius_bound"].get<double>();
    return NCLaw(d, j.at("D").get<int>(), std::move(moments), radius);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("NCLaw JSON: ") + e.what());
  }
}

NCLaw empirical_law(const MatrixTuple& x, int max_degree) {
  require(max_degree >= 0, "empirical_law: degree must be non-negative");
  WordEvaluator ev(x);
  std::map<Word, Complex, GradedLexLess> moments;
  for (const auto& w : enumerate_words(x.d(), max_degree)) moments[w] = trace_n(ev.word(w));
  double radius = 0.0;
  for (int j = 0; j < x.d(); ++j) radius = std::max(radius, operator_norm(x[j]));
  return NCLaw(x.d(), max_degree, std::move(moments), radius);
}

NCLaw arctan_law(const MatrixTuple& x, int max_degree) {
  std::vector<HermitianMatrix> comps;
  for (int j = 0; j < x.d(); ++j) comps.push_back(apply_scalar_function(x[j], ScalarFunction::arctan()));
  return empirical_law(MatrixTuple(std::move(comps)), max_degree);
}

double law_metric(const NCLaw& a, const NCLaw& b, int max_degree) {
  require(a.d() == b.d(), "law_metric: d mismatch");
  require(max_degree >= 0, "law_metric: degree must be non-negative");
  require(a.max_degree() >= max_degree && b.max_degree() >= max_degree, "law_metric: law truncated below D");
  double acc = 0.0;
  double weight = 1.0;
  for (const auto& w : enumerate_words(a.d(), max_degree)) {
    if (w.empty()) continue;
    weight *= 0.5;
    acc += weight * std::pow(std::numbers::pi / 2, -static_cast<double>(w.size())) * std::abs(a.moment(w) - b.moment(w));
  }
  return acc;
}

double freeness_statistic(const std::vector<MatrixTuple>& groups, const std::vector<int>& index_sequence,
                          const std::vector<NCPolynomial>& polys) {
  require(!index_sequence.empty(), "freeness_statistic: empty index sequence");
  require(index_sequence.size() == polys.size(), "freeness_statistic: one polynomial per factor");
  for (std::size_t k = 0; k < index_sequence.size(); ++k) {
    require(index_sequence[k] >= 0 && index_sequence[k] < static_cast<int>(groups.size()),
            "freeness_statistic: group index out of range");
    if (k > 0 && index_sequence[k] == index_sequence[k - 1])
      throw InvalidArgument("freeness_statistic: consecutive indices must differ");
    require(is_selfadjoint(polys[k]), "freeness_statistic: polynomials must be self-adjoint");
  }
  const int n = groups.front().dim();
  CMatrix product = CMatrix::Identity(n, n);
  for (std::size_t k = 0; k < index_sequence.size(); ++k) {
    CMatrix f = evaluate(polys[k], groups[index_sequence[k]]);
    const Complex t = trace_n(f);
    f.diagonal().array() -= t;
    product = product * f;
  }
  const Complex s = trace_n(product);
  if (std::abs(s.imag()) >= 1e-9 * (1.0 + std::abs(s.real())))
    throw NumericalError("freeness_statistic: imaginary part too large");
  return s.real();
}

double catalan(int k) {
  require(k >= 0, "catalan: k must be non-negative");
  std::vector<double> c(static_cast<std::size_t>(k) + 1, 0.0);
  c[0] = 1.0;
  for (int m = 1; m <= k; ++m)
    for (int i = 0; i < m; ++i) c[m] += c[i] * c[m - 1 - i];
  return c[k];
}

double semicircle_moment(int k) {
  require(k >= 0, "semicircle_moment: k must be non-negative");
  return k % 2 ? 0.0 : catalan(k / 2);
}

NCLaw semicircle_arctan_reference(int max_degree) {
  require(max_degree >= 0, "degree must be non-negative");
  std::map<Word, Complex, GradedLexLess> moments;
  for (int m = 0; m <= max_degree; ++m) {
    // x = 2 sin(theta): d rho_sc = (2/pi) cos^2(theta) d theta
    auto integrand = [m](double th) {
      const double c = std::cos(th);
      return (2.0 / std::numbers::pi) * c * c * std::pow(std::atan(2.0 * std::sin(th)), m);
    };
    const double v = m % 2 ? 0.0 : adaptive_simpson(integrand, -std::numbers::pi / 2, std::numbers::pi / 2, 1e-10);
    moments[Word(static_cast<std::size_t>(m), 0)] = v;
  }
  return NCLaw(1, max_degree, std::move(moments), std::atan(2.0));
}

}  // namespace freelab
