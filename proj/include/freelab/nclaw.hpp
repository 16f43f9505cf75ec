#pragma once

// Empirical non-commutative laws, the arctan pushforward and its weak-*
// metric, semicircle references and freeness statistics.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "freelab/ncpoly.hpp"

namespace freelab {

/// Truncated moment map word -> tau(word) for all words up to max_degree.
class NCLaw {
 public:
  NCLaw() = default;
  NCLaw(int d, int max_degree, std::map<Word, Complex, GradedLexLess> moments,
        std::optional<double> radius_bound = std::nullopt);

  int d() const { return d_; }
  int max_degree() const { return max_degree_; }
  const std::map<Word, Complex, GradedLexLess>& moments() const { return moments_; }
  Complex moment(const Word& w) const;
  std::optional<double> radius_bound() const { return radius_; }
  /// tau(p) from the stored moments; p's degree must not exceed max_degree.
  Complex apply(const NCPolynomial& p) const;

  /// Throws InvalidArgument when a structural invariant fails (unit mass,
  /// cyclic invariance, conjugate symmetry, radius bound).
  void validate(double tol = 1e-9) const;

  std::string to_json() const;
  static NCLaw from_json(const std::string& text);

 private:
  int d_ = 0;
  int max_degree_ = 0;
  std::map<Word, Complex, GradedLexLess> moments_;
  std::optional<double> radius_;
};

NCLaw empirical_law(const MatrixTuple& x, int max_degree);
NCLaw arctan_law(const MatrixTuple& x, int max_degree);

/// Truncated weak-* metric: sum over non-constant words of degree <= D in
/// graded-lex order k = 1, 2, ... of 2^{-k} (pi/2)^{-|w|} |l1(w) - l2(w)|.
/// Inputs are laws of arctan-transformed tuples.
double law_metric(const NCLaw& a, const NCLaw& b, int max_degree = 6);

/// tr_n prod_i (f_i(X_{j_i}) - tr_n f_i(X_{j_i}) I); consecutive indices
/// must differ. Indices are 0-based into `groups`.
double freeness_statistic(const std::vector<MatrixTuple>& groups, const std::vector<int>& index_sequence,
                          const std::vector<NCPolynomial>& polys);

/// m-th moment of the semicircle law on [-2, 2]: Catalan C_{m/2} or 0.
double semicircle_moment(int k);
/// Catalan numbers by the recurrence C_{k+1} = sum C_i C_{k-i}.
double catalan(int k);

/// d = 1 law of arctan(s) for s semicircular: moments int arctan(x)^m
/// d rho_sc by adaptive Simpson (tolerance 1e-10) after x = 2 sin(theta).
NCLaw semicircle_arctan_reference(int max_degree);

}  // namespace freelab
