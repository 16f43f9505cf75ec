#pragma once

// Common-noise discretization: bins of width 1/N on [-1, 1] plus two tails,
// per-step probabilities and conditional means, bin paths, and truncated
// Gaussian estimates.

#include <limits>
#include <vector>

#include "freelab/randmat.hpp"

namespace freelab {

struct TimeGrid {
  double t0 = 0.0;
  double T = 1.0;
  int K = 1;

  TimeGrid() = default;
  TimeGrid(double t0_, double T_, int K_);
  double delta() const { return (T - t0) / K; }
  double time(int i) const { return t0 + i * delta(); }
  std::vector<double> points() const;
};

struct Interval {
  double lower;  // open
  double upper;  // closed, +inf for the upper tail
};

/// Bin index range [N] = {-N-1, ..., N}.
inline int bin_count(int N) { return 2 * N + 2; }
inline int bin_min(int N) { return -N - 1; }

Interval bin_boundaries(int N, int j);

double normal_cdf(double x);
/// 1 - Phi(x) without cancellation.
double normal_sf(double x);
double normal_pdf(double x);
/// Mills ratio (1 - Phi(z)) / phi(z), stable for large z.
double mills_ratio(double z);

/// P(increment in bin j) for increment ~ N(0, delta).
double bin_probability(int j, double delta, int N);
/// E[increment | bin j]. Throws NumericalError when the bin probability
/// is below 1e-300.
double bin_conditional_mean(int j, double delta, int N);
/// E[increment | bin j] by quadrature of x phi(x) over the bin.
double bin_conditional_mean_quadrature(int j, double delta, int N);
/// E[|increment - omega_j| | bin j] by quadrature; throws NumericalError if
/// it exceeds 1/N (interior) or sqrt(delta) (tails).
double bin_conditional_absdev(int j, double delta, int N);

/// Per-step probabilities and conditional means, identical across steps.
class NoiseTable {
 public:
  NoiseTable(int N, double delta);

  int N() const { return N_; }
  double delta() const { return delta_; }
  /// Bins are addressed by offset b = j + N + 1 in [0, 2N+2).
  double probability(int offset) const { return p_[offset]; }
  /// NaN for bins whose probability underflows.
  double mean(int offset) const { return omega_[offset]; }
  double tail_probability() const { return p_.back(); }

 private:
  int N_;
  double delta_;
  std::vector<double> p_;
  std::vector<double> omega_;
};

struct BinPath {
  int N = 1;
  std::vector<int> indices;  // entries in [N]
};

double path_probability(const BinPath& path, int prefix_length, double delta);
/// W^0_{i,J}: partial sum of conditional means over the first i steps.
double discrete_noise_value(const BinPath& path, int prefix_length, double delta);

enum class PathClass { kBulk, kEdge };
PathClass classify_bulk_edge(const BinPath& path);
/// 1 - (1 - 2 p_tail)^K; throws NumericalError if above 2 K p_tail.
double edge_mass(int K, int N, double delta);

/// E[Z | Z >= z]; asymptotic series above z = 37.
double truncated_gaussian_mean(double z);
/// Var(Z | Z >= z).
double truncated_gaussian_variance(double z);

struct BridgeCheckReport {
  bool passed = false;
  int cells = 0;
  int cells_ok = 0;
  double worst_margin = 0.0;  // min over cells of bound - estimate
};

/// Scalar bridge bound: E[|W_b - W_a| | W_c - W_a = x] <= r |x| + s with
/// r = (b-a)/(c-a), s = sqrt((c-b)(b-a)/(c-a)). Joint samples are grouped
/// into equal-count cells of x; passes when >= 99% of cells satisfy the
/// bound on cell averages.
BridgeCheckReport bridge_bound_check(double a, double b, double c, int samples, RngStream rng, int cells = 50);
bool bridge_bound_holds(double a, double b, double c, int samples, RngStream rng);

/// Matrix analogue: for sampled Delta = W_c - W_a (GUE(n) paths), the
/// bridge decomposition W_b - W_a = r Delta + Xi gives E[||W_b - W_a|| | Delta]
/// <= r ||Delta|| + 3 sqrt(b - a); inner expectation over `inner` draws of Xi.
BridgeCheckReport matrix_bridge_bound_check(double a, double b, double c, int n, int outer, int inner, RngStream rng);

}  // namespace freelab
