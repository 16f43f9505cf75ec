#include "freelab/control.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace freelab {

using nlohmann::json;

namespace {

double tau_square(const CMatrix& a) { return a.squaredNorm() / static_cast<double>(a.rows()); }

CMatrix spectral_gradient(const CMatrix& z, const ScalarFunction& f) {
  const SpectralDecomposition sd = eigh(HermitianMatrix::hermitian_part(z));
  RVector dv(sd.eigenvalues.size());
  for (Eigen::Index k = 0; k < dv.size(); ++k) dv[k] = f.derivative(sd.eigenvalues[k]);
  return sd.eigenvectors * dv.asDiagonal() * sd.eigenvectors.adjoint();
}

double spectral_value(const CMatrix& z, const ScalarFunction& f) {
  return trace_of_function(HermitianMatrix::hermitian_part(z), f);
}

json function_to_json(const ScalarFunction& f) {
  switch (f.kind()) {
    case ScalarFunction::Kind::kPolynomial:
      return {{"kind", "polynomial"}, {"coefficients", f.coefficients()}};
    case ScalarFunction::Kind::kArctan:
      return {{"kind", "arctan"}};
    case ScalarFunction::Kind::kClip:
      return {{"kind", "clip"}, {"radius", f.parameter()}};
    case ScalarFunction::Kind::kAbs:
      return {{"kind", "abs"}};
    case ScalarFunction::Kind::kSmoothAbs:
      return {{"kind", "smooth_abs"}, {"eps", f.parameter()}};
    case ScalarFunction::Kind::kArctanPolynomial:
      return {{"kind", "arctan_polynomial"}, {"coefficients", f.coefficients()}};
  }
  return {};
}

ScalarFunction function_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "polynomial") return ScalarFunction::polynomial(j.at("coefficients").get<std::vector<double>>());
  if (kind == "arctan") return ScalarFunction::arctan();
  if (kind == "clip") return ScalarFunction::clip(j.at("radius").get<double>());
  if (kind == "abs") return ScalarFunction::abs();
  if (kind == "smooth_abs") return ScalarFunction::smooth_abs(j.at("eps").get<double>());
  if (kind == "arctan_polynomial")
    return ScalarFunction::arctan_polynomial(j.at("coefficients").get<std::vector<double>>());
  throw ConfigError("unknown scalar function kind '" + kind + "'");
}

// Letters are written "x3" / "a1"; internally x_k -> k-1, a_k -> d + k-1.
std::string letter_name(int letter, int d) {
  return letter < d ? "x" + std::to_string(letter + 1) : "a" + std::to_string(letter - d + 1);
}

int letter_index(const std::string& name, int d, bool allow_controls) {
  if (name.size() < 2) throw ConfigError("bad letter '" + name + "'");
  const char p = name[0];
  int k = 0;
  try {
    k = std::stoi(name.substr(1));
  } catch (const std::exception&) {
    throw ConfigError("bad letter '" + name + "'");
  }
  if (k < 1 || k > d) throw ConfigError("letter index out of range in '" + name + "'");
  if (p == 'x') return k - 1;
  if (p == 'a' && allow_controls) return d + k - 1;
  throw ConfigError("unknown letter '" + name + "'");
}

json spectral_to_json(const std::vector<SpectralTerm>& terms, int d) {
  json a = json::array();
  for (const SpectralTerm& t : terms)
    a.push_back({{"letter", letter_name(t.letter, d)}, {"function", function_to_json(t.function)}, {"weight", t.weight}});
  return a;
}

std::vector<SpectralTerm> spectral_from_json(const json& a, int d, bool allow_controls) {
  std::vector<SpectralTerm> out;
  for (const json& t : a)
    out.push_back({letter_index(t.at("letter").get<std::string>(), d, allow_controls), function_from_json(t.at("function")),
                   t.value("weight", 1.0)});
  return out;
}

CylindricalFunction sum_of_powers(int d, int power) {
  NCPolynomial p(d);
  for (int j = 0; j < d; ++j) p.add_term(Word(power, j), 1.0);
  OuterPolynomial g(1);
  g.add_term({1}, 1.0);
  return CylindricalFunction(std::move(g), {p});
}

MatrixTuple random_tuple(int d, int n, double scale, RngStream& rng) {
  std::vector<HermitianMatrix> c;
  for (int j = 0; j < d; ++j) c.push_back(sample_gue(n, rng) * scale);
  return MatrixTuple(std::move(c));
}

}  // namespace

// ---------------------------------------------------------------------------
// CostSpec

CostSpec::RunningJet CostSpec::running_jet(std::span<const CMatrix> x, std::span<const CMatrix> a,
                                           bool with_gradient) const {
  const int d = static_cast<int>(x.size());
  require(static_cast<int>(a.size()) == d, "state and control component counts differ");
  const int n = static_cast<int>(x.front().rows());
  RunningJet jet;
  if (with_gradient) {
    jet.grad_x.assign(d, CMatrix::Zero(n, n));
    jet.grad_a.assign(d, CMatrix::Zero(n, n));
  }
  if (running) {
    std::vector<CMatrix> letters(x.begin(), x.end());
    letters.insert(letters.end(), a.begin(), a.end());
    CylindricalJet c = value_and_gradient(*running, letters, with_gradient);
    jet.value += c.value;
    if (with_gradient)
      for (int k = 0; k < static_cast<int>(c.gradient.size()); ++k) {
        if (k < d) jet.grad_x[k] += c.gradient[k];
        else jet.grad_a[k - d] += c.gradient[k];
      }
  }
  for (const SpectralTerm& t : running_spectral) {
    const CMatrix& z = t.letter < d ? x[t.letter] : a[t.letter - d];
    jet.value += t.weight * spectral_value(z, t.function);
    if (with_gradient) {
      CMatrix g = t.weight * spectral_gradient(z, t.function);
      if (t.letter < d) jet.grad_x[t.letter] += g;
      else jet.grad_a[t.letter - d] += g;
    }
  }
  if (quad_coef != 0.0)
    for (int j = 0; j < d; ++j) {
      jet.value += quad_coef * tau_square(a[j]);
      if (with_gradient) jet.grad_a[j] += (2.0 * quad_coef) * a[j];
    }
  return jet;
}

CylindricalJet CostSpec::terminal_jet(std::span<const CMatrix> x, bool with_gradient) const {
  const int d = static_cast<int>(x.size());
  const int n = static_cast<int>(x.front().rows());
  CylindricalJet jet;
  jet.value = terminal_offset;
  if (with_gradient) jet.gradient.assign(d, CMatrix::Zero(n, n));
  if (terminal) {
    CylindricalJet c = value_and_gradient(*terminal, x, with_gradient);
    jet.value += c.value;
    if (with_gradient)
      for (std::size_t k = 0; k < c.gradient.size(); ++k) jet.gradient[k] += c.gradient[k];
  }
  for (const SpectralTerm& t : terminal_spectral) {
    jet.value += t.weight * spectral_value(x[t.letter], t.function);
    if (with_gradient) jet.gradient[t.letter] += t.weight * spectral_gradient(x[t.letter], t.function);
  }
  return jet;
}

double CostSpec::running_cost(const MatrixTuple& x, const MatrixTuple& a) const {
  const std::vector<CMatrix> xs = x.raw();
  const std::vector<CMatrix> as = a.raw();
  return running_jet(xs, as, false).value;
}

double CostSpec::terminal_cost(const MatrixTuple& x) const {
  const std::vector<CMatrix> xs = x.raw();
  return terminal_jet(xs, false).value;
}

std::string CostSpec::to_json() const {
  json j;
  // d is recovered from the problem; letters are written with explicit names.
  int d = 1;
  if (terminal) d = terminal->d();
  if (running) d = running->d() / 2;
  j["d"] = d;
  if (running) j["running"] = json::parse(running->to_json({"x", "a"}));
  j["running_spectral"] = spectral_to_json(running_spectral, d);
  j["quad_coef"] = quad_coef;
  if (terminal) j["terminal"] = json::parse(terminal->to_json());
  j["terminal_spectral"] = spectral_to_json(terminal_spectral, d);
  j["terminal_offset"] = terminal_offset;
  if (std::isfinite(lip_const)) j["lip_const"] = lip_const;
  j["convexity_declared"] = convexity_declared;
  j["c1"] = c1;
  return j.dump();
}

CostSpec CostSpec::from_json(const std::string& text, int d) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("cost JSON: ") + e.what());
  }
  try {
    if (j.contains("template")) {
      const std::string t = j["template"].get<std::string>();
      if (t == "lq") return lq_cost(d);
      if (t == "quartic") return quartic_cost(d);
      if (t == "smooth_abs") return smooth_abs_cost(d, j.value("eps", 0.1), j.value("quad_coef", 0.0));
      throw ConfigError("unknown cost template '" + t + "'");
    }
    CostSpec c;
    if (j.contains("running")) c.running = CylindricalFunction::from_json(j["running"].dump(), d, {"x", "a"});
    if (j.contains("running_spectral")) c.running_spectral = spectral_from_json(j["running_spectral"], d, true);
    c.quad_coef = j.value("quad_coef", 0.0);
    if (j.contains("terminal")) c.terminal = CylindricalFunction::from_json(j["terminal"].dump(), d);
    if (j.contains("terminal_spectral")) c.terminal_spectral = spectral_from_json(j["terminal_spectral"], d, false);
    c.terminal_offset = j.value("terminal_offset", 0.0);
    c.lip_const = j.value("lip_const", std::numeric_limits<double>::infinity());
    c.convexity_declared = j.value("convexity_declared", false);
    c.c1 = j.value("c1", 1.0);
    if (c.quad_coef < 0.0) throw ConfigError("quad_coef must be non-negative");
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("cost JSON: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("cost JSON: ") + e.what());
  }
}

CostSpec lq_cost(int d) {
  CostSpec c;
  c.quad_coef = 0.5;
  c.terminal = sum_of_powers(d, 2);
  c.convexity_declared = true;
  c.c1 = 1.0;
  return c;
}

CostSpec quartic_cost(int d) {
  CostSpec c;
  c.quad_coef = 0.5;
  c.terminal = sum_of_powers(d, 4);
  c.convexity_declared = true;
  c.c1 = 1.0;
  return c;
}

CostSpec smooth_abs_cost(int d, double eps, double quad_coef) {
  require(eps > 0.0 && quad_coef >= 0.0, "smooth_abs_cost: eps > 0 and quad_coef >= 0 required");
  CostSpec c;
  for (int l = 0; l < 2 * d; ++l) c.running_spectral.push_back({l, ScalarFunction::smooth_abs(eps), 1.0});
  c.quad_coef = quad_coef;
  c.lip_const = 1.0;
  c.convexity_declared = true;
  return c;
}

ConvexityReport check_midpoint_convexity(const CostSpec& cost, int n, int d, int segments, RngStream rng) {
  ConvexityReport rep;
  rep.worst_gap = -std::numeric_limits<double>::infinity();
  auto record = [&](double fa, double fb, double fm) {
    const double gap = fm - 0.5 * (fa + fb);
    rep.worst_gap = std::max(rep.worst_gap, gap);
    if (gap > 1e-10 * (1.0 + std::abs(fa) + std::abs(fb))) ++rep.violations;
  };
  for (int s = 0; s < segments; ++s) {
    RngStream r = rng.split(static_cast<std::uint64_t>(s));
    const double scale = 0.5 + 2.0 * r.uniform();
    const MatrixTuple x1 = random_tuple(d, n, scale, r), x2 = random_tuple(d, n, scale, r);
    const MatrixTuple a1 = random_tuple(d, n, scale, r), a2 = random_tuple(d, n, scale, r);
    const MatrixTuple xm = (x1 + x2) * 0.5, am = (a1 + a2) * 0.5;
    record(cost.running_cost(x1, a1), cost.running_cost(x2, a2), cost.running_cost(xm, am));
    record(cost.terminal_cost(x1), cost.terminal_cost(x2), cost.terminal_cost(xm));
    ++rep.segments;
  }
  return rep;
}

double observed_lipschitz(const CostSpec& cost, int n, int d, int pairs, RngStream rng) {
  CostSpec l0 = cost;
  l0.quad_coef = 0.0;
  double worst = 0.0;
  for (int s = 0; s < pairs; ++s) {
    RngStream r = rng.split(static_cast<std::uint64_t>(s));
    const double scale = 0.2 + 2.0 * r.uniform();
    const MatrixTuple x1 = random_tuple(d, n, scale, r), a1 = random_tuple(d, n, scale, r);
    const MatrixTuple x2 = x1 + random_tuple(d, n, 0.1 * scale, r);
    const MatrixTuple a2 = a1 + random_tuple(d, n, 0.1 * scale, r);
    const double dist = l1_norm(x1 - x2) + l1_norm(a1 - a2);
    if (dist <= 0.0) continue;
    worst = std::max(worst, std::abs(l0.running_cost(x1, a1) - l0.running_cost(x2, a2)) / dist);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// ControlProblem

void ControlProblem::validate() const {
  require(n >= 1 && d >= 1, "problem dimensions must be positive");
  require(x0.d() == d && x0.dim() == n, "x0 must be a d-tuple of n x n matrices");
  require(beta_c >= 0.0 && beta_f >= 0.0, "noise strengths must be non-negative");
  require(T > t0, "horizon must satisfy T > t0");
  if (cost.running) require(cost.running->d() == 2 * d, "running cost must use 2d letters (x then a)");
  if (cost.terminal) require(cost.terminal->d() == d, "terminal cost must use d letters");
  for (const SpectralTerm& t : cost.running_spectral)
    require(t.letter >= 0 && t.letter < 2 * d, "running spectral letter out of range");
  for (const SpectralTerm& t : cost.terminal_spectral)
    require(t.letter >= 0 && t.letter < d, "terminal spectral letter out of range");
}

MatrixTuple ramp_tuple(int d, int n, double lo, double hi) {
  std::vector<double> diag(n);
  for (int k = 0; k < n; ++k) diag[k] = n == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * k / (n - 1);
  std::vector<HermitianMatrix> c(d, HermitianMatrix::diagonal(diag));
  return MatrixTuple(std::move(c));
}

namespace {

json tuple_to_json(const MatrixTuple& x) {
  json a = json::array();
  for (const HermitianMatrix& m : x.components()) {
    json re = json::array(), im = json::array();
    for (int r = 0; r < m.dim(); ++r) {
      json rr = json::array(), ir = json::array();
      for (int c = 0; c < m.dim(); ++c) {
        rr.push_back(m(r, c).real());
        ir.push_back(m(r, c).imag());
      }
      re.push_back(rr);
      im.push_back(ir);
    }
    a.push_back({{"re", re}, {"im", im}});
  }
  return a;
}

MatrixTuple tuple_from_json(const json& j, int d, int n) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "zero") return MatrixTuple::zeros(d, n);
    if (s == "identity") return MatrixTuple::identities(d, n);
    throw ConfigError("unknown x0 shortcut '" + s + "'");
  }
  if (j.is_object() && j.contains("ramp")) {
    const auto r = j["ramp"].get<std::vector<double>>();
    if (r.size() != 2) throw ConfigError("x0 ramp needs [lo, hi]");
    return ramp_tuple(d, n, r[0], r[1]);
  }
  if (!j.is_array() || static_cast<int>(j.size()) != d) throw ConfigError("x0 must list d components");
  std::vector<HermitianMatrix> comps;
  for (const json& c : j) {
    CMatrix m(n, n);
    for (int r = 0; r < n; ++r)
      for (int k = 0; k < n; ++k) m(r, k) = Complex(c.at("re").at(r).at(k).get<double>(), c.at("im").at(r).at(k).get<double>());
    comps.emplace_back(std::move(m));
  }
  return MatrixTuple(std::move(comps));
}

}  // namespace

std::string ControlProblem::to_json() const {
  json j;
  j["n"] = n;
  j["d"] = d;
  j["x0"] = tuple_to_json(x0);
  j["beta_c"] = beta_c;
  j["beta_f"] = beta_f;
  j["t0"] = t0;
  j["T"] = T;
  j["cost"] = json::parse(cost.to_json());
  return j.dump();
}

ControlProblem ControlProblem::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("problem JSON: ") + e.what());
  }
  try {
    ControlProblem p;
    p.n = j.at("n").get<int>();
    p.d = j.value("d", 1);
    if (p.n < 1 || p.d < 1) throw ConfigError("n and d must be positive");
    p.x0 = tuple_from_json(j.value("x0", json("zero")), p.d, p.n);
    p.beta_c = j.value("beta_c", 0.0);
    p.beta_f = j.value("beta_f", 0.0);
    p.t0 = j.value("t0", 0.0);
    p.T = j.value("T", 1.0);
    p.cost = CostSpec::from_json(j.value("cost", json{{"template", "lq"}}).dump(), p.d);
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("problem JSON: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("problem JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Hermitian coordinates and clipping

void hermitian_to_coords(const CMatrix& m, double* out) {
  const int n = static_cast<int>(m.rows());
  const double rn = std::sqrt(static_cast<double>(n));
  const double off = std::sqrt(2.0) / rn;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double v;
      if (i == j) v = m(i, i).real() / rn;
      else if (i < j) v = 0.5 * off * (m(i, j).real() + m(j, i).real());
      else v = 0.5 * off * (m(i, j).imag() - m(j, i).imag());
      out[i * n + j] = v;
    }
}

CMatrix coords_to_hermitian(const double* coords, int n) {
  const double rn = std::sqrt(static_cast<double>(n));
  const double s = rn / std::sqrt(2.0);
  CMatrix m = CMatrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double c = coords[i * n + j];
      if (i == j) m(i, i) += c * rn;
      else if (i < j) {
        m(i, j) += c * s;
        m(j, i) += c * s;
      } else {
        m(i, j) += Complex(0.0, c * s);
        m(j, i) -= Complex(0.0, c * s);
      }
    }
  return m;
}

CMatrix clip_operator_norm(const CMatrix& m, double R) {
  if (!std::isfinite(R)) return m;
  const double frob = m.norm();
  const double rows = m.cwiseAbs().rowwise().sum().maxCoeff();
  if (std::min(frob, rows) <= R) return m;
  return apply_scalar_function(HermitianMatrix::hermitian_part(m), ScalarFunction::clip(R)).matrix();
}

// ---------------------------------------------------------------------------
// Samples

GuePath coarsen_path(const GuePath& fine, int factor) {
  require(factor >= 1, "coarsening factor must be positive");
  const int K = static_cast<int>(fine.increments.size());
  require(K % factor == 0, "coarsening factor must divide the step count");
  if (factor == 1) return fine;
  GuePath out;
  out.n = fine.n;
  out.d = fine.d;
  for (int k = 0; k <= K; k += factor) out.time_grid.push_back(fine.time_grid[k]);
  for (int k = 0; k < K; k += factor) {
    MatrixTuple sum = fine.increments[k];
    for (int r = 1; r < factor; ++r) sum = sum + fine.increments[k + r];
    out.increments.push_back(std::move(sum));
  }
  return out;
}

SampleSource SampleSource::stored(std::vector<GuePath> paths) {
  SampleSource s;
  s.count_ = paths.size();
  s.paths_ = std::move(paths);
  return s;
}

SampleSource SampleSource::generated(int n, int d, std::vector<double> fine_grid, RngStream rng, std::size_t count,
                                     int coarsen) {
  require(n >= 1 && d >= 1, "sample dimensions must be positive");
  require(coarsen >= 1 && (fine_grid.size() - 1) % coarsen == 0, "coarsening factor must divide the step count");
  SampleSource s;
  s.n_ = n;
  s.d_ = d;
  s.grid_ = std::move(fine_grid);
  s.rng_ = std::move(rng);
  s.count_ = count;
  s.coarsen_ = coarsen;
  return s;
}

GuePath SampleSource::at(std::size_t s) const {
  require(s < count_, "sample index out of range");
  if (!rng_) return paths_[s];
  return coarsen_path(gue_increments(n_, d_, grid_, rng_->split(static_cast<std::uint64_t>(s))), coarsen_);
}

// ---------------------------------------------------------------------------
// Direct simulation over the bin tree

namespace {

void check_path(const ControlProblem& problem, const TimeGrid& grid, const GuePath& path) {
  require(static_cast<int>(path.increments.size()) == grid.K, "GUE path step count differs from the grid");
  require(path.n == problem.n && path.d == problem.d, "GUE path dimensions differ from the problem");
  for (int i = 0; i <= grid.K; ++i)
    require(std::abs(path.time_grid[i] - (i == grid.K ? grid.T : grid.time(i))) <= 1e-12 * (1.0 + std::abs(grid.T)),
            "GUE path is sampled on a different time grid");
}

}  // namespace

TrajectoryBundle simulate_discrete(const ControlProblem& problem, const DiscretePolicy& policy, const TimeGrid& grid,
                                   const GuePath& path) {
  problem.validate();
  require(policy.shape().K == grid.K, "policy K differs from the grid");
  require(policy.n() == problem.n && policy.d() == problem.d, "policy dimensions differ from the problem");
  check_path(problem, grid, path);
  const int K = grid.K;
  const int N = policy.shape().N;
  const bool collapsed = problem.beta_c == 0.0 && policy.shape().shared_across_bins;
  const int B = collapsed ? 1 : bin_count(N);
  require(std::pow(static_cast<double>(B), K) <= kBinPathGuard, "bin-path guard (2N+2)^K <= 1e6 exceeded");
  const double delta = grid.delta();
  const NoiseTable table(N, delta);
  const int n = problem.n;
  const int d = problem.d;

  TrajectoryBundle out;
  out.K = K;
  out.bins = B;
  out.states.resize(K + 1);
  out.controls.resize(K + 1);
  out.probability.resize(K + 1);
  out.common_noise.resize(K + 1);
  out.states[0] = {problem.x0};
  out.controls[0] = {MatrixTuple()};
  out.probability[0] = {1.0};
  out.common_noise[0] = {0.0};

  std::vector<CMatrix> letters = problem.x0.raw();
  const CMatrix eye = CMatrix::Identity(n, n);
  for (int i = 1; i <= K; ++i) {
    if (i - policy.shape().info_lag >= 1) {
      const std::vector<CMatrix> inc = path.increments[i - policy.shape().info_lag - 1].raw();
      letters.insert(letters.end(), inc.begin(), inc.end());
    }
    const std::vector<CMatrix> dw = path.increments[i - 1].raw();
    const std::size_t width = static_cast<std::size_t>(std::pow(B, i));
    out.states[i].assign(width, MatrixTuple());
    out.controls[i].assign(width, MatrixTuple());
    out.probability[i].assign(width, 0.0);
    out.common_noise[i].assign(width, 0.0);
    for (std::size_t parent = 0; parent < width / B; ++parent) {
      const double pp = out.probability[i - 1][parent];
      if (pp == 0.0) continue;
      for (int b = 0; b < B; ++b) {
        const double pb = collapsed ? 1.0 : table.probability(b);
        const double p = pp * pb;
        if (p == 0.0) continue;
        const std::size_t id = parent * B + b;
        const double omega = collapsed ? 0.0 : table.mean(b);
        const std::uint64_t key = policy.shape().shared_across_bins ? 0 : id;
        const std::vector<CMatrix> alpha = policy.realize(i, key, letters);
        std::vector<HermitianMatrix> xs, as;
        const MatrixTuple& xp = out.states[i - 1][parent];
        for (int l = 0; l < d; ++l) {
          CMatrix x = xp[l].matrix() + delta * alpha[l] + (problem.beta_c * omega) * eye + problem.beta_f * dw[l];
          xs.push_back(HermitianMatrix::hermitian_part(x));
          as.push_back(HermitianMatrix::hermitian_part(alpha[l]));
        }
        out.states[i][id] = MatrixTuple(std::move(xs));
        out.controls[i][id] = MatrixTuple(std::move(as));
        out.probability[i][id] = p;
        out.common_noise[i][id] = out.common_noise[i - 1][parent] + omega;
      }
    }
  }
  return out;
}

double bundle_cost(const ControlProblem& problem, const TrajectoryBundle& bundle, const TimeGrid& grid) {
  const double delta = grid.delta();
  double total = 0.0;
  for (int i = 1; i <= bundle.K; ++i)
    for (std::size_t id = 0; id < bundle.states[i].size(); ++id) {
      const double p = bundle.probability[i][id];
      if (p == 0.0) continue;
      total += p * delta * problem.cost.running_cost(bundle.states[i][id], bundle.controls[i][id]);
      if (i == bundle.K) total += p * problem.cost.terminal_cost(bundle.states[i][id]);
    }
  return total;
}

// ---------------------------------------------------------------------------
// Oracles and transformations

bool matches_lq_template(const CostSpec& cost, int d) {
  if (cost.running || !cost.running_spectral.empty() || !cost.terminal_spectral.empty()) return false;
  if (cost.quad_coef != 0.5 || cost.terminal_offset != 0.0 || !cost.terminal) return false;
  const CylindricalFunction& g = *cost.terminal;
  if (g.inner_count() != 1 || g.d() != d) return false;
  const auto& terms = g.outer().terms();
  double linear = 0.0;
  for (const auto& t : terms) {
    if (t.coefficient == 0.0) continue;
    if (t.exponents != std::vector<int>{1}) return false;
    linear += t.coefficient;
  }
  if (linear != 1.0) return false;
  NCPolynomial target(d);
  for (int j = 0; j < d; ++j) target.add_term(Word{j, j}, 1.0);
  return g.inners().front() == target;
}

double lq_reference(const ControlProblem& problem) {
  problem.validate();
  if (!matches_lq_template(problem.cost, problem.d))
    throw InvalidArgument("lq_reference: cost is not L = 1/2 ||a||^2, g = ||x||^2");
  const double horizon = problem.T - problem.t0;
  const double x2 = std::pow(l2_norm(problem.x0), 2);
  const double noise = problem.beta_c * problem.beta_c + problem.beta_f * problem.beta_f;
  return x2 / (1.0 + 2.0 * horizon) + 0.5 * noise * problem.d * std::log1p(2.0 * horizon);
}

CoarseningResult coarsen_control(const std::vector<FineControlSample>& samples, const std::vector<double>& fine_grid,
                                 const TimeGrid& grid, int N) {
  require(!samples.empty(), "coarsen_control: no samples");
  const int fine_steps = static_cast<int>(fine_grid.size()) - 1;
  require(fine_steps >= grid.K && fine_steps % grid.K == 0, "fine grid must refine the coarse grid");
  const int r = fine_steps / grid.K;
  for (int i = 0; i <= grid.K; ++i)
    require(std::abs(fine_grid[i * r] - (i == grid.K ? grid.T : grid.time(i))) <= 1e-9, "fine grid misaligned");
  const int d = samples.front().controls.front().d();
  const int n = samples.front().controls.front().dim();
  for (const FineControlSample& s : samples)
    require(static_cast<int>(s.controls.size()) == fine_steps && static_cast<int>(s.common_increments.size()) == fine_steps,
            "fine sample length differs from the grid");
  PolicyShape shape;
  shape.K = grid.K;
  shape.N = N;
  shape.kind = NodeKind::kConstant;
  DiscretePolicy policy(shape, n, d);
  CoarseningResult out{policy, {}};
  const int B = bin_count(N);

  // Bin offsets of each sample's coarse increments.
  std::vector<std::vector<int>> offsets(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s)
    for (int i = 0; i < grid.K; ++i) {
      double w = 0.0;
      for (int k = 0; k < r; ++k) w += samples[s].common_increments[i * r + k];
      int j = static_cast<int>(std::ceil(w * N)) - 1;  // (j/N, (j+1)/N]
      j = std::clamp(j, -N - 1, N);
      offsets[s].push_back(j + N + 1);
    }
  for (int i = 1; i <= grid.K; ++i) {
    const std::uint64_t nodes = policy.node_count(i);
    std::vector<MatrixTuple> sum(nodes, MatrixTuple::zeros(d, n));
    std::vector<int> count(nodes, 0);
    MatrixTuple all = MatrixTuple::zeros(d, n);
    for (std::size_t s = 0; s < samples.size(); ++s) {
      MatrixTuple avg = MatrixTuple::zeros(d, n);
      for (int k = 0; k < r; ++k) avg = avg + samples[s].controls[(i - 1) * r + k] * (1.0 / r);
      const std::vector<int> prefix(offsets[s].begin(), offsets[s].begin() + i);
      const std::uint64_t id = policy.prefix_id(prefix);
      sum[id] = sum[id] + avg;
      ++count[id];
      all = all + avg;
    }
    const MatrixTuple mean_all = all * (1.0 / static_cast<double>(samples.size()));
    for (std::uint64_t id = 0; id < nodes; ++id) {
      if (count[id] == 0) {
        out.policy.set_constant_node(i, id, mean_all);
        out.empty_cells.emplace_back(i, id);
      } else {
        out.policy.set_constant_node(i, id, sum[id] * (1.0 / count[id]));
      }
    }
  }
  (void)B;
  return out;
}

DiscretePolicy clip_policy(const DiscretePolicy& policy, double R) {
  require(R > 0.0, "clip radius must be positive");
  PolicyShape shape = policy.shape();
  shape.R = std::min(shape.R, R);
  DiscretePolicy out(shape, policy.n(), policy.d());
  out.parameters() = policy.parameters();
  if (shape.kind == NodeKind::kConstant)
    for (int i = 1; i <= shape.K; ++i)
      for (std::uint64_t id = 0; id < out.node_count(i); ++id) {
        MatrixTuple a = policy.constant_node(i, id);
        std::vector<HermitianMatrix> c;
        for (const HermitianMatrix& m : a.components())
          c.push_back(HermitianMatrix::hermitian_part(clip_operator_norm(m.matrix(), R)));
        out.set_constant_node(i, id, MatrixTuple(std::move(c)));
      }
  return out;
}

TruncationReport truncation_inequality_check(const ControlProblem& problem, const ControlPath& path, double R) {
  require(R > 0.0, "clip radius must be positive");
  const int K = static_cast<int>(path.controls.size());
  require(K >= 1 && static_cast<int>(path.base.size()) == K && static_cast<int>(path.grid.size()) == K + 1,
          "control path shape mismatch");
  require(std::isfinite(problem.cost.lip_const), "truncation check needs the Lipschitz constant kappa");
  TruncationReport rep;
  MatrixTuple drift = MatrixTuple::zeros(problem.d, problem.n);
  MatrixTuple drift_clip = drift;
  double energy = 0.0;
  for (int k = 0; k < K; ++k) {
    const double dt = path.grid[k + 1] - path.grid[k];
    require(dt > 0.0, "control path grid must increase");
    const MatrixTuple& a = path.controls[k];
    std::vector<HermitianMatrix> c;
    for (const HermitianMatrix& m : a.components()) c.push_back(apply_scalar_function(m, ScalarFunction::clip(R)));
    const MatrixTuple ac(std::move(c));
    drift = drift + a * dt;
    drift_clip = drift_clip + ac * dt;
    rep.original += problem.cost.running_cost(path.base[k] + drift, a) * dt;
    rep.clipped += problem.cost.running_cost(path.base[k] + drift_clip, ac) * dt;
    energy += std::pow(l2_norm(a), 2) * dt;
  }
  const double horizon = path.grid.back() - path.grid.front();
  rep.penalty = (1.0 + horizon) * problem.cost.lip_const / R * energy;
  rep.passed = rep.clipped <= rep.original + rep.penalty + 1e-12 * (1.0 + std::abs(rep.original));
  return rep;
}

EulerTrajectory euler_maruyama(const ControlProblem& problem, const FeedbackPolicy& feedback, int steps,
                               RngStream rng) {
  problem.validate();
  require(steps >= 1, "euler_maruyama: steps must be positive");
  const TimeGrid grid = problem.grid(steps);
  EulerTrajectory out;
  out.grid = grid.points();
  const GuePath gue = gue_increments(problem.n, problem.d, out.grid, rng.split(0));
  RngStream common = rng.split(1);
  const std::vector<double> dw0 = brownian_increments(out.grid, common);
  const MatrixTuple ones = MatrixTuple::identities(problem.d, problem.n);
  out.states.push_back(problem.x0);
  out.common_noise.push_back(0.0);
  for (int k = 0; k < steps; ++k) {
    const double dt = out.grid[k + 1] - out.grid[k];
    const MatrixTuple& x = out.states.back();
    MatrixTuple a = feedback(out.grid[k], x, out.common_noise.back());
    require(a.d() == problem.d && a.dim() == problem.n, "feedback returned a control of the wrong shape");
    out.cost += problem.cost.running_cost(x, a) * dt;
    out.states.push_back(x + a * dt + ones * (problem.beta_c * dw0[k]) + gue.increments[k] * problem.beta_f);
    out.controls.push_back(std::move(a));
    out.common_noise.push_back(out.common_noise.back() + dw0[k]);
  }
  out.cost += problem.cost.terminal_cost(out.states.back());
  return out;
}

}  // namespace freelab
