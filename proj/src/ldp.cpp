#include "freelab/ldp.hpp"

#include <cmath>

namespace freelab {

double TerminalFunctional::operator()(const MatrixTuple& x) const {
  require(x.d() == d, "functional arity differs from the tuple");
  return as_terminal_cost().terminal_cost(x);
}

CostSpec TerminalFunctional::as_terminal_cost() const {
  CostSpec c;
  c.quad_coef = 0.5;
  c.terminal = cylindrical;
  c.terminal_spectral = spectral;
  c.terminal_offset = offset;
  c.convexity_declared = true;
  return c;
}

LdpEstimate boue_dupuis_lhs(const TerminalFunctional& psi, int n, std::size_t mc_samples, RngStream rng) {
  require(n >= 1, "n must be positive");
  require(mc_samples >= 1, "mc_samples must be >= 1");
  const double n2 = static_cast<double>(n) * n;
  std::vector<double> expo(mc_samples);
  for (std::size_t s = 0; s < mc_samples; ++s) {
    RngStream r = rng.split(static_cast<std::uint64_t>(s));
    std::vector<HermitianMatrix> w;
    for (int l = 0; l < psi.d; ++l) w.push_back(sample_gue(n, r));
    expo[s] = -n2 * psi(MatrixTuple(std::move(w)));
  }
  double top = -std::numeric_limits<double>::infinity();
  for (double e : expo)
    if (!std::isnan(e)) top = std::max(top, e);
  if (!std::isfinite(top)) throw NumericalError("boue_dupuis_lhs: every exponential weight underflowed");
  double sum = 0.0, sum2 = 0.0;
  for (double e : expo) {
    const double w = std::exp(e - top);
    sum += w;
    sum2 += w * w;
  }
  const double M = static_cast<double>(mc_samples);
  const double mean = sum / M;
  LdpEstimate out;
  out.samples = mc_samples;
  out.value = -(top + std::log(mean)) / n2;
  if (mc_samples > 1) {
    const double var = std::max(0.0, (sum2 / M - mean * mean) * M / (M - 1.0));
    out.std_error = std::sqrt(var / M) / mean / n2;
  }
  return out;
}

OptimizationResult boue_dupuis_rhs(const TerminalFunctional& psi, int n, int time_steps,
                                   const OptimizerConfig& config, RngStream rng, int degree) {
  require(time_steps >= 1, "time_steps must be positive");
  ControlProblem p;
  p.n = n;
  p.d = psi.d;
  p.x0 = MatrixTuple::zeros(psi.d, n);
  p.beta_c = 0.0;
  p.beta_f = 1.0;
  p.t0 = 0.0;
  p.T = 1.0;
  p.cost = psi.as_terminal_cost();
  PolicyShape shape;
  shape.K = time_steps;
  shape.N = 1;
  shape.kind = NodeKind::kPolynomial;
  shape.degree = degree;
  shape.info_lag = 1;
  shape.shared_across_bins = true;
  return optimize_discrete_value(p, shape, config, std::move(rng));
}

double TraceFunctional::on_law(const NCLaw& law) const {
  double v = offset;
  for (const Term& t : terms) {
    require(t.letter >= 0 && t.letter < law.d(), "trace functional letter out of range");
    NCPolynomial p(law.d());
    for (std::size_t k = 0; k < t.coefficients.size(); ++k) p.add_term(Word(k, t.letter), t.coefficients[k]);
    v += t.weight * law.apply(p).real();
  }
  return v;
}

TerminalFunctional TraceFunctional::negated_on_arctan(int d) const {
  TerminalFunctional psi;
  psi.d = d;
  psi.offset = -offset;
  for (const Term& t : terms) {
    require(t.letter >= 0 && t.letter < d, "trace functional letter out of range");
    psi.spectral.push_back({t.letter, ScalarFunction::arctan_polynomial(t.coefficients), -t.weight});
  }
  return psi;
}

RateEstimate rate_function_candidate(const NCLaw& target, const std::vector<TraceFunctional>& family, int n,
                                     int time_steps, const OptimizerConfig& config, RngStream rng) {
  require(!family.empty(), "rate_function_candidate: empty test family");
  RateEstimate out;
  out.value = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < family.size(); ++k) {
    const TerminalFunctional psi = family[k].negated_on_arctan(target.d());
    const OptimizationResult bd =
        boue_dupuis_rhs(psi, n, time_steps, config, rng.split(static_cast<std::uint64_t>(k)));
    const double v = family[k].on_law(target) + bd.value;
    out.per_function.push_back(v);
    if (v > out.value) {
      out.value = v;
      out.best_index = static_cast<int>(k);
    }
  }
  return out;
}

}  // namespace freelab
