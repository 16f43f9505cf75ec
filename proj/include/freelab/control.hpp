#pragma once

// Matrix control problems driven by common (scalar) and GUE noise,
// bin-path-adapted discrete policies, their cost and its optimization.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "freelab/gaussdisc.hpp"
#include "freelab/laplacian.hpp"

namespace freelab {

/// weight * tr_n f(Z_letter)
struct SpectralTerm {
  int letter = 0;
  ScalarFunction function = ScalarFunction::polynomial({0.0});
  double weight = 1.0;
};

/// Running cost L(X, a) = L0(X, a) + c ||a||^2 and terminal cost g(X).
/// L0 is a cylindrical function over 2d letters (x1..xd, a1..ad) plus
/// spectral terms over the same letters; g is a cylindrical function over d
/// letters plus spectral terms and a constant.
struct CostSpec {
  std::optional<CylindricalFunction> running;
  std::vector<SpectralTerm> running_spectral;
  double quad_coef = 0.0;
  std::optional<CylindricalFunction> terminal;
  std::vector<SpectralTerm> terminal_spectral;
  double terminal_offset = 0.0;
  double lip_const = std::numeric_limits<double>::infinity();
  bool convexity_declared = false;
  double c1 = 1.0;

  struct RunningJet {
    double value = 0.0;
    std::vector<CMatrix> grad_x;
    std::vector<CMatrix> grad_a;
  };
  RunningJet running_jet(std::span<const CMatrix> x, std::span<const CMatrix> a, bool with_gradient) const;
  CylindricalJet terminal_jet(std::span<const CMatrix> x, bool with_gradient) const;
  double running_cost(const MatrixTuple& x, const MatrixTuple& a) const;
  double terminal_cost(const MatrixTuple& x) const;

  std::string to_json() const;
  static CostSpec from_json(const std::string& text, int d);
};

/// L = 1/2 ||a||^2, g = ||X||^2.
CostSpec lq_cost(int d);
/// L = 1/2 ||a||^2, g = sum_j tr_n X_j^4.
CostSpec quartic_cost(int d);
/// L0 = sum_j tr_n h(X_j) + tr_n h(a_j) with h = smooth_abs(eps), so kappa = 1.
CostSpec smooth_abs_cost(int d, double eps, double quad_coef);

struct ConvexityReport {
  int segments = 0;
  int violations = 0;
  double worst_gap = 0.0;  // max of f(mid) - (f(a) + f(b))/2
};
/// Midpoint convexity of (X, a) -> L(X, a) and X -> g(X) on random segments.
ConvexityReport check_midpoint_convexity(const CostSpec& cost, int n, int d, int segments, RngStream rng);
/// Largest observed |L0(p) - L0(q)| / (||dX||_1 + ||da||_1) on random pairs.
double observed_lipschitz(const CostSpec& cost, int n, int d, int pairs, RngStream rng);

struct ControlProblem {
  int n = 1;
  int d = 1;
  MatrixTuple x0;
  double beta_c = 0.0;
  double beta_f = 0.0;
  double t0 = 0.0;
  double T = 1.0;
  CostSpec cost;

  void validate() const;
  TimeGrid grid(int K) const { return TimeGrid(t0, T, K); }
  std::string to_json() const;
  static ControlProblem from_json(const std::string& text);
};

/// Diagonal with entries equispaced on [lo, hi], replicated over d components.
MatrixTuple ramp_tuple(int d, int n, double lo, double hi);

enum class NodeKind { kConstant, kPolynomial };

struct PolicyShape {
  int K = 1;
  int N = 1;
  double R = std::numeric_limits<double>::infinity();
  /// Polynomial nodes return 0 when an input letter has operator norm above this.
  double gate = std::numeric_limits<double>::infinity();
  NodeKind kind = NodeKind::kConstant;
  int degree = 1;
  /// 0: step i may read GUE increments up to t_i; 1: only up to t_{i-1}.
  int info_lag = 0;
  /// One parameter block per step rather than per bin prefix.
  bool shared_across_bins = false;
};

/// A self-adjoint basis element of a polynomial node: (w + w*)/2, or
/// i(w - w*)/2 when `imaginary`, over letters x0 (d) then dW_1, dW_2, ...
struct Feature {
  Word word;
  bool imaginary = false;
};

/// Control table alpha_{i,J} for steps i = 1..K and bin prefixes J of length
/// i. Nodes are keyed by the mixed-radix prefix id sum_k b_k B^{i-k} with
/// bin offsets b_k = j_k + N + 1 and B = 2N+2 (B = 1 when shared).
class DiscretePolicy {
 public:
  DiscretePolicy(PolicyShape shape, int n, int d);

  const PolicyShape& shape() const { return shape_; }
  int n() const { return n_; }
  int d() const { return d_; }
  int bins_per_step() const { return shape_.shared_across_bins ? 1 : bin_count(shape_.N); }
  std::uint64_t node_count(int step) const;
  /// Letters visible to step i's polynomial features.
  int letter_count(int step) const;
  const std::vector<Feature>& features(int step) const { return features_.at(step - 1); }
  int block_size(int step) const;
  std::size_t block_offset(int step, std::uint64_t prefix_id) const;
  /// Node key of a full bin prefix given as bin offsets.
  std::uint64_t prefix_id(const std::vector<int>& offsets) const;

  const Eigen::VectorXd& parameters() const { return theta_; }
  Eigen::VectorXd& parameters() { return theta_; }

  MatrixTuple constant_node(int step, std::uint64_t prefix_id) const;
  void set_constant_node(int step, std::uint64_t prefix_id, const MatrixTuple& value);
  /// Feature matrices of step i evaluated on its visible letters.
  std::vector<CMatrix> feature_matrices(int step, std::span<const CMatrix> letters) const;
  /// True when the norm gate switches step i's polynomial nodes off.
  bool gated(int step, std::span<const CMatrix> letters) const;
  /// Unclipped node output: the constant matrices, or the feature combination.
  std::vector<CMatrix> combine(int step, std::uint64_t prefix_id, std::span<const CMatrix> features) const;
  /// Realized, gated and clipped control of a node given the visible letters.
  std::vector<CMatrix> realize(int step, std::uint64_t prefix_id, std::span<const CMatrix> letters) const;

  std::string to_json() const;
  static DiscretePolicy from_json(const std::string& text);

 private:
  PolicyShape shape_;
  int n_;
  int d_;
  std::vector<std::vector<Feature>> features_;
  std::vector<std::size_t> step_offset_;
  Eigen::VectorXd theta_;
};

/// Bin-path explosion guard on the enumerated tree.
inline constexpr double kBinPathGuard = 1e6;

/// Coordinates of a Hermitian matrix in the tr_n-orthonormal basis E_ij.
void hermitian_to_coords(const CMatrix& m, double* out);
CMatrix coords_to_hermitian(const double* coords, int n);
/// phi_R applied by functional calculus, skipped when a cheap norm bound
/// already shows ||m|| <= R.
CMatrix clip_operator_norm(const CMatrix& m, double R);

/// GUE paths for Monte Carlo, either stored or regenerated on demand from a
/// seed (sample s uses rng.split(s)). A coarsening factor sums consecutive
/// increments, so grids of different K can share one fine sample.
class SampleSource {
 public:
  static SampleSource stored(std::vector<GuePath> paths);
  static SampleSource generated(int n, int d, std::vector<double> fine_grid, RngStream rng, std::size_t count,
                                int coarsen = 1);
  std::size_t size() const { return count_; }
  GuePath at(std::size_t s) const;

 private:
  SampleSource() = default;
  std::vector<GuePath> paths_;
  int n_ = 0;
  int d_ = 0;
  std::vector<double> grid_;
  std::optional<RngStream> rng_;
  std::size_t count_ = 0;
  int coarsen_ = 1;
};

GuePath coarsen_path(const GuePath& fine, int factor);

struct TrajectoryBundle {
  int K = 0;
  int bins = 1;
  /// [i][prefix id]: states X_{i,J} (i = 0..K), controls alpha_{i,J}
  /// (i = 1..K, index 0 unused) and prefix probabilities.
  std::vector<std::vector<MatrixTuple>> states;
  std::vector<std::vector<MatrixTuple>> controls;
  std::vector<std::vector<double>> probability;
  /// W^0_{i,J}
  std::vector<std::vector<double>> common_noise;
};

TrajectoryBundle simulate_discrete(const ControlProblem& problem, const DiscretePolicy& policy, const TimeGrid& grid,
                                   const GuePath& path);
/// Cost of a single GUE path from a simulated bundle.
double bundle_cost(const ControlProblem& problem, const TrajectoryBundle& bundle, const TimeGrid& grid);

struct CostEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
  /// Sample mean of sum_i sum_J P(O_{i,J}) ||alpha_{i,J}||^2 delta.
  double control_energy = 0.0;
};

CostEstimate discrete_cost(const ControlProblem& problem, const DiscretePolicy& policy, const SampleSource& samples);
CostEstimate discrete_cost(const ControlProblem& problem, const DiscretePolicy& policy, std::size_t mc_samples,
                           RngStream rng);

struct OptimizerConfig {
  int max_iterations = 200;
  std::size_t train_samples = 64;
  std::size_t validation_samples = 256;
  int history = 10;
  int patience = 20;
  double rel_tol = 1e-10;
  std::string log_path;
};

struct IterationRecord {
  int iter = 0;
  double batch_cost = 0.0;
  double step_size = 0.0;
  double max_grad_norm = 0.0;
};

struct OptimizationResult {
  double value = 0.0;
  double std_error = 0.0;
  double train_cost = 0.0;
  CostEstimate zero_policy;
  DiscretePolicy policy;
  int iterations = 0;
  bool converged = false;
  bool fell_back_to_zero = false;
  std::vector<IterationRecord> log;
};

OptimizationResult optimize_discrete_value(const ControlProblem& problem, const PolicyShape& shape,
                                           const OptimizerConfig& config, RngStream rng);
OptimizationResult optimize_discrete_value(const ControlProblem& problem, const PolicyShape& shape,
                                           const OptimizerConfig& config, const SampleSource& train,
                                           const SampleSource& validation);
void write_iteration_log(const std::vector<IterationRecord>& log, const std::string& path);

/// p(t0) ||x0||^2 + ((beta_C^2 + beta_F^2) d / 2) ln(1 + 2 (T - t0)).
double lq_reference(const ControlProblem& problem);
bool matches_lq_template(const CostSpec& cost, int d);

struct FineControlSample {
  std::vector<double> common_increments;  // scalar Brownian increments per fine step
  std::vector<MatrixTuple> controls;      // piecewise-constant control per fine step
};

struct CoarseningResult {
  DiscretePolicy policy;
  /// (step, prefix id) cells that had no samples and took the step mean.
  std::vector<std::pair<int, std::uint64_t>> empty_cells;
};

CoarseningResult coarsen_control(const std::vector<FineControlSample>& samples, const std::vector<double>& fine_grid,
                                 const TimeGrid& grid, int N);

DiscretePolicy clip_policy(const DiscretePolicy& policy, double R);

/// A deterministic reference path Y_k plus piecewise-constant control a_k on
/// a uniform grid; states are Y_k + sum_{k' <= k} a_k' dt.
struct ControlPath {
  std::vector<double> grid;
  std::vector<MatrixTuple> base;
  std::vector<MatrixTuple> controls;
};

struct TruncationReport {
  double clipped = 0.0;
  double original = 0.0;
  double penalty = 0.0;
  bool passed = false;
};
TruncationReport truncation_inequality_check(const ControlProblem& problem, const ControlPath& path, double R);

using FeedbackPolicy = std::function<MatrixTuple(double t, const MatrixTuple& x, double common_noise)>;

struct EulerTrajectory {
  std::vector<double> grid;
  std::vector<MatrixTuple> states;
  std::vector<MatrixTuple> controls;
  std::vector<double> common_noise;  // W^0 at grid points
  double cost = 0.0;
};
EulerTrajectory euler_maruyama(const ControlProblem& problem, const FeedbackPolicy& feedback, int steps,
                               RngStream rng);

}  // namespace freelab
