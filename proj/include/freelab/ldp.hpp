#pragma once

// Exponential functionals of GUE(n): Monte Carlo log-Laplace transforms,
// their variational (drift-control) representation, and a rate-function
// candidate over a finite test family.

#include <vector>

#include "freelab/control.hpp"
#include "freelab/nclaw.hpp"

namespace freelab {

/// psi(X) = offset + sum weight * tr_n f(X_letter) + (optional) cylindrical part.
struct TerminalFunctional {
  int d = 1;
  std::optional<CylindricalFunction> cylindrical;
  std::vector<SpectralTerm> spectral;
  double offset = 0.0;

  double operator()(const MatrixTuple& x) const;
  CostSpec as_terminal_cost() const;
};

struct LdpEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

/// -(1/n^2) log of the sample mean of exp(-n^2 psi(W_1)), by log-sum-exp.
LdpEstimate boue_dupuis_lhs(const TerminalFunctional& psi, int n, std::size_t mc_samples, RngStream rng);

/// min E[1/2 int ||a||^2 dt + psi(W_1 + int a dt)] over polynomial drifts
/// that read GUE increments strictly before the current step.
OptimizationResult boue_dupuis_rhs(const TerminalFunctional& psi, int n, int time_steps,
                                   const OptimizerConfig& config, RngStream rng, int degree = 1);

/// phi(law) = offset + sum weight * law(p(x_letter)) with p a univariate
/// polynomial; applied to matrices as offset + sum weight * tr_n p(arctan X).
struct TraceFunctional {
  struct Term {
    int letter = 0;
    std::vector<double> coefficients;
    double weight = 1.0;
  };
  double offset = 0.0;
  std::vector<Term> terms;

  double on_law(const NCLaw& law) const;
  /// psi = -phi(arctan X)
  TerminalFunctional negated_on_arctan(int d) const;
};

struct RateEstimate {
  /// Lower bound of the supremum, taken over the supplied family only.
  double value = 0.0;
  int best_index = -1;
  std::vector<double> per_function;
};

RateEstimate rate_function_candidate(const NCLaw& target, const std::vector<TraceFunctional>& family, int n,
                                     int time_steps, const OptimizerConfig& config, RngStream rng);

}  // namespace freelab
