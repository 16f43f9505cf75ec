#pragma once

// Experiment configuration, orchestration, persistence and the acceptance
// suite behind the command-line tool.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "freelab/control.hpp"
#include "freelab/laplacian.hpp"
#include "freelab/randmat.hpp"

namespace freelab {

/// A CSV-shaped result: fixed header per experiment kind.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row);
  std::string to_csv() const;
  std::string to_json() const;
};

/// Shortest round-trip decimal form; "nan"/"inf" spelled out.
std::string format_number(double v);

struct ExperimentOutcome {
  Table table;
  std::map<std::string, bool> checks;
  std::map<std::string, double> metrics;
};

/// Experiment kinds: spectrum, freeness, laplacian-check, value, sweep, ldp,
/// gaussdisc-check, truncation-check. `params` is the experiment's JSON
/// object; validation happens before any sampling.
class Experiment {
 public:
  static Experiment parse(const std::string& json_text, int index);

  const std::string& name() const { return name_; }
  const std::string& kind() const { return kind_; }
  const std::string& params() const { return params_; }
  ExperimentOutcome run(const RngStream& rng) const;
  /// As run(); value experiments with write_logs also write iteration logs
  /// to <log_prefix>_n<n>.csv.
  ExperimentOutcome run_with_logs(const RngStream& rng, const std::string& log_prefix) const;

 private:
  std::string name_;
  std::string kind_;
  std::string params_;
};

const std::vector<std::string>& experiment_kinds();
const std::vector<std::string>& csv_header(const std::string& kind);

/// Mean of |tr_n((A^2 - tr_n A^2)(B^2 - tr_n B^2))^2| over independent GUE
/// pairs, one entry per n; sample s of size index a uses rng.split({a, s}).
std::vector<double> freeness_means(const std::vector<int>& ns, int samples, const RngStream& rng,
                                   std::vector<double>* stderrs = nullptr);

struct LaplacianInstance {
  CylindricalFunction u;
  MatrixTuple x;
};
/// Random cylindrical function with 1..max_inners inners and a GUE point.
LaplacianInstance laplacian_instance(int d, int n, int max_inners, int inner_degree, int outer_degree, RngStream rng);

/// Smooth-abs cost (kappa = 1), GUE Brownian base path and GUE controls of
/// size up to amplitude * R, checked against the clipped path.
TruncationReport truncation_instance(int n, int d, double R, int steps, double eps, double quad_coef,
                                     double amplitude, RngStream rng);

struct RunOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  int threads = 1;
  std::string format = "csv";
};

/// Exit codes: 0 ok, 1 configuration, 2 numerical failure, 3 I/O.
int run_command(const RunOptions& options);

/// 64-bit FNV-1a, used to fingerprint configurations in the manifest.
std::uint64_t fnv1a(const std::string& text);

struct AcceptanceRow {
  int id = 0;
  std::string name;
  double measured = 0.0;
  double target = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string detail;
};

/// Pure decision rules of individual checks, exposed for testing.
AcceptanceRow semicircle_rule(const std::vector<double>& mean_even_moments);
AcceptanceRow operator_norm_rule(double median_norm);
AcceptanceRow freeness_rule(const std::vector<double>& mean_abs_statistic);

std::vector<AcceptanceRow> run_acceptance(const std::string& out_dir);
std::string format_acceptance(const std::vector<AcceptanceRow>& rows);
int acceptance_command(const std::optional<std::string>& out_dir);

}  // namespace freelab
