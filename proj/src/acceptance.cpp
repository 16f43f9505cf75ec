#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "freelab/control.hpp"
#include "freelab/gaussdisc.hpp"
#include "freelab/harness.hpp"
#include "freelab/laplacian.hpp"
#include "freelab/ldp.hpp"
#include "freelab/nclaw.hpp"
#include "freelab/parallel.hpp"

namespace freelab {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kMomentTol = 0.05;
constexpr double kNormLow = 1.90;
constexpr double kNormHigh = 2.15;
constexpr double kFreenessCeiling = 0.05;
constexpr double kIdentityTol = 1e-10;
constexpr double kFdTol = 1e-5;
constexpr double kFdStep = 1e-3;
constexpr double kLqRelTol = 0.05;
constexpr double kLqCrossNTol = 0.02;
constexpr double kBdLhsAbsTol = 0.02;
constexpr double kBdRhsRelTol = 0.05;
constexpr double kStderrMultiple = 3.0;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

AcceptanceRow laplacian_rows(AcceptanceRow* fd_row) {
  const RngStream rng(404);
  const std::vector<int> ns{3, 4, 6};
  constexpr int instances = 50;
  std::vector<double> residual(instances), fd_rel(instances);
  parallel_for(instances, [&](std::size_t i) {
    const LaplacianInstance inst = laplacian_instance(2, ns[i % ns.size()], 2, 4, 3, rng.split(i));
    const double gue = gue_laplacian(inst.u, inst.x);
    residual[i] = std::abs(gue - free_laplacian(inst.u, inst.x) - correction_term(inst.u, inst.x));
    fd_rel[i] = std::abs(gue - finite_difference_laplacian(inst.u, inst.x, kFdStep)) / (1.0 + std::abs(gue));
  });
  const double worst = *std::max_element(residual.begin(), residual.end());
  const double worst_fd = *std::max_element(fd_rel.begin(), fd_rel.end());
  *fd_row = {5, "laplacian_vs_finite_differences", worst_fd, 0.0, kFdTol, worst_fd < kFdTol,
             "max over 50 instances of |gue - fd| / (1 + |gue|), step 1e-3"};
  return {4, "laplacian_identity", worst, 0.0, kIdentityTol, worst < kIdentityTol,
          "max over 50 instances, n in {3,4,6}, d = 2"};
}

ControlProblem lq_problem(int n) {
  ControlProblem p;
  p.n = n;
  p.d = 1;
  p.x0 = MatrixTuple::zeros(1, n);
  p.beta_c = 0.5;
  p.beta_f = 1.0;
  p.cost = lq_cost(1);
  return p;
}

AcceptanceRow lq_row() {
  PolicyShape shape;
  shape.K = 4;
  shape.N = 2;
  shape.R = 8.0;
  shape.kind = NodeKind::kPolynomial;
  shape.degree = 1;
  OptimizerConfig cfg;
  cfg.train_samples = 64;
  cfg.validation_samples = 256;
  cfg.max_iterations = 100;
  const RngStream rng(606);
  std::map<int, OptimizationResult> res;
  for (int n : {4, 8, 16}) res.emplace(n, optimize_discrete_value(lq_problem(n), shape, cfg, rng.split(n)));
  const double ref = lq_reference(lq_problem(8));
  const double rel = std::abs(res.at(8).value - ref) / ref;
  const double cross = std::abs(res.at(4).value - res.at(16).value);
  const double cross_tol = kLqCrossNTol * ref + kStderrMultiple * std::hypot(res.at(4).std_error, res.at(16).std_error);
  const bool cross_ok = cross < cross_tol;
  std::ostringstream detail;
  detail << "V8 = " << fmt(res.at(8).value) << " +- " << fmt(res.at(8).std_error) << ", ref " << fmt(ref)
         << "; |V4 - V16| = " << fmt(cross) << " vs " << fmt(cross_tol) << (cross_ok ? " ok" : " FAIL");
  return {6, "lq_value_oracle", rel, 0.0, kLqRelTol, rel <= kLqRelTol && cross_ok, detail.str()};
}

AcceptanceRow boue_dupuis_row() {
  TerminalFunctional psi;
  psi.d = 1;
  NCPolynomial square(1);
  square.add_term(Word{0, 0}, 1.0);
  OuterPolynomial half(1);
  half.add_term({1}, 0.5);
  psi.cylindrical = CylindricalFunction(half, {square});
  const double ref = 0.5 * std::log(2.0);
  const LdpEstimate lhs = boue_dupuis_lhs(psi, 8, 10000, RngStream(707));
  OptimizerConfig cfg;
  cfg.train_samples = 512;
  cfg.validation_samples = 20000;
  cfg.max_iterations = 100;
  const OptimizationResult rhs = boue_dupuis_rhs(psi, 8, 8, cfg, RngStream(708));
  const double lhs_err = std::abs(lhs.value - ref);
  const double rhs_rel = std::abs(rhs.value - ref) / ref;
  const bool ordered = rhs.value >= lhs.value - kStderrMultiple * lhs.std_error;
  const bool pass = lhs_err <= kBdLhsAbsTol && rhs_rel <= kBdRhsRelTol && ordered;
  std::ostringstream detail;
  detail << "lhs " << fmt(lhs.value) << " +- " << fmt(lhs.std_error) << " (|err| " << fmt(lhs_err) << " <= 0.02), rhs "
         << fmt(rhs.value) << " +- " << fmt(rhs.std_error) << " (rel " << fmt(rhs_rel) << " <= 0.05), rhs >= lhs - 3se "
         << (ordered ? "ok" : "FAIL");
  return {7, "boue_dupuis_consistency", rhs.value, ref, kBdRhsRelTol, pass, detail.str()};
}

ControlProblem quartic_problem(int n, double beta_c) {
  ControlProblem p;
  p.n = n;
  p.d = 1;
  p.x0 = ramp_tuple(1, n, 0.0, 2.0);
  p.beta_c = beta_c;
  p.beta_f = 1.0;
  p.cost = quartic_cost(1);
  return p;
}

AcceptanceRow discretization_row() {
  const ControlProblem problem = quartic_problem(8, 0.0);
  const std::vector<double> fine = problem.grid(8).points();
  OptimizerConfig cfg;
  cfg.train_samples = 128;
  cfg.validation_samples = 2000;
  cfg.max_iterations = 100;
  const RngStream rng(808);
  std::vector<double> values;
  for (auto [K, N] : {std::pair{2, 4}, {4, 8}, {8, 16}}) {
    PolicyShape s;
    s.K = K;
    s.N = N;
    s.R = 8.0;
    s.kind = NodeKind::kPolynomial;
    s.degree = 1;
    s.shared_across_bins = true;
    const auto train = SampleSource::generated(8, 1, fine, rng.split(0), cfg.train_samples, 8 / K);
    const auto valid = SampleSource::generated(8, 1, fine, rng.split(1), cfg.validation_samples, 8 / K);
    values.push_back(optimize_discrete_value(problem, s, cfg, train, valid).value);
  }
  const double d1 = std::abs(values[1] - values[0]);
  const double d2 = std::abs(values[2] - values[1]);
  std::ostringstream detail;
  detail << "V(2,4) = " << fmt(values[0]) << ", V(4,8) = " << fmt(values[1]) << ", V(8,16) = " << fmt(values[2])
         << "; |diffs| " << fmt(d1) << " > " << fmt(d2);
  return {8, "discretization_shape", d2, d1, 0.0, d2 < d1, detail.str()};
}

AcceptanceRow n_convergence_row() {
  PolicyShape shape;
  shape.K = 2;
  shape.N = 2;
  shape.R = 8.0;
  shape.kind = NodeKind::kPolynomial;
  shape.degree = 1;
  OptimizerConfig cfg;
  cfg.train_samples = 64;
  cfg.validation_samples = 512;
  cfg.max_iterations = 100;
  const RngStream rng(909);
  std::map<int, OptimizationResult> res;
  for (int n : {4, 8, 16}) res.emplace(n, optimize_discrete_value(quartic_problem(n, 0.5), shape, cfg, rng.split(n)));
  const double far = std::abs(res.at(16).value - res.at(8).value);
  const double near = std::abs(res.at(8).value - res.at(4).value);
  const double se = std::sqrt(std::pow(res.at(4).std_error, 2) + 2.0 * std::pow(res.at(8).std_error, 2) +
                              std::pow(res.at(16).std_error, 2));
  const double bound = near + kStderrMultiple * se;
  std::ostringstream detail;
  detail << "V4 = " << fmt(res.at(4).value) << ", V8 = " << fmt(res.at(8).value) << ", V16 = " << fmt(res.at(16).value)
         << "; 3 combined se = " << fmt(kStderrMultiple * se);
  return {9, "convergence_in_n", far, bound, 0.0, far <= bound, detail.str()};
}

AcceptanceRow truncation_row() {
  const RngStream rng(1010);
  constexpr int instances = 100;
  std::vector<int> ok(instances);
  parallel_for(instances, [&](std::size_t i) {
    RngStream r = rng.split(i);
    const int n = 2 + static_cast<int>(r() % 4);
    const int d = 1 + static_cast<int>(r() % 2);
    const double R = 0.5 + 2.0 * r.uniform();
    const double quad = r.uniform();
    ok[i] = truncation_instance(n, d, R, 8, 0.05 + 0.2 * r.uniform(), quad, 3.0, r.split(7)).passed;
  });
  const int passed = std::count(ok.begin(), ok.end(), 1);
  return {10, "truncation_inequality", static_cast<double>(passed), instances, 0.0, passed == instances,
          "instances passing with penalty (1 + T) kappa / R * int ||a||^2"};
}

AcceptanceRow gaussian_row() {
  double max_var = 0.0;
  for (int k = 0; k <= 50; ++k) max_var = std::max(max_var, truncated_gaussian_variance(0.1 * k));
  double worst_ratio = 0.0;
  for (int k = 10; k <= 50; ++k) worst_ratio = std::max(worst_ratio, truncated_gaussian_mean(0.1 * k) / (0.2 * k));
  const BridgeCheckReport bridge = bridge_bound_check(0.0, 0.5, 1.0, 10000, RngStream(1111));
  std::ostringstream detail;
  detail << "max Var(Z | Z >= z) = " << fmt(max_var) << ", max E[Z | Z >= K] / 2K = " << fmt(worst_ratio)
         << ", bridge cells " << bridge.cells_ok << "/" << bridge.cells;
  return {11, "gaussian_analytics", max_var, 1.0, 0.0, max_var <= 1.0 && worst_ratio <= 1.0 && bridge.passed,
          detail.str()};
}

const char* kDeterminismConfig = R"({
  "seed": 1212,
  "experiments": [
    {"name": "spectrum", "kind": "spectrum", "n": [64], "samples": 6, "norm_samples": 3},
    {"name": "laplacian", "kind": "laplacian-check", "instances": 12},
    {"name": "value", "kind": "value", "n": [4],
     "problem": {"d": 1, "beta_c": 0.5, "beta_f": 1.0, "cost": {"template": "lq"}},
     "policy": {"K": 2, "N": 2, "R": 8, "kind": "polynomial", "degree": 1},
     "optimizer": {"train_samples": 24, "validation_samples": 64, "max_iterations": 15}}
  ]
})";

AcceptanceRow determinism_row(const fs::path& out_dir) {
  const fs::path base = out_dir / "determinism";
  std::error_code ec;
  fs::remove_all(base, ec);
  fs::create_directories(base, ec);
  if (ec) throw IoError("cannot create " + base.string());
  const fs::path config = base / "config.json";
  {
    std::ofstream out(config);
    out << kDeterminismConfig;
    if (!out) throw IoError("cannot write " + config.string());
  }
  const int saved = worker_threads();
  bool same = true;
  std::string detail;
  std::map<int, std::vector<std::string>> files;
  for (int threads : {1, 8}) {
    RunOptions opt;
    opt.config_path = config.string();
    opt.out_dir = (base / ("threads" + std::to_string(threads))).string();
    opt.threads = threads;
    const int code = run_command(opt);
    if (code != 0) {
      set_worker_threads(saved);
      return {12, "determinism", 0.0, 1.0, 0.0, false, "harness run failed with exit code " + std::to_string(code)};
    }
  }
  set_worker_threads(saved);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  int compared = 0;
  for (const char* name : {"spectrum.csv", "laplacian.csv", "value.csv"}) {
    const std::string a = slurp(base / "threads1" / name);
    const std::string b = slurp(base / "threads8" / name);
    ++compared;
    if (a.empty() || a != b) {
      same = false;
      detail += std::string(name) + " differs; ";
    }
  }
  if (same) detail = std::to_string(compared) + " CSV files byte-identical at 1 and 8 workers";
  return {12, "determinism", same ? 1.0 : 0.0, 1.0, 0.0, same, detail};
}

}  // namespace

AcceptanceRow semicircle_rule(const std::vector<double>& mean_even_moments) {
  require(!mean_even_moments.empty(), "semicircle_rule: no moments");
  double worst = 0.0;
  std::ostringstream detail;
  for (std::size_t k = 1; k <= mean_even_moments.size(); ++k) {
    const double c = catalan(static_cast<int>(k));
    worst = std::max(worst, std::abs(mean_even_moments[k - 1] - c) / c);
    detail << "tr S^" << 2 * k << " = " << fmt(mean_even_moments[k - 1]) << " (C = " << c << ") ";
  }
  return {1, "semicircle_moments", worst, 0.0, kMomentTol, worst <= kMomentTol, detail.str()};
}

AcceptanceRow operator_norm_rule(double median_norm) {
  const bool pass = median_norm >= kNormLow && median_norm <= kNormHigh;
  return {2, "operator_norm", median_norm, 2.0, kNormHigh - 2.0, pass, "median must lie in [1.90, 2.15]"};
}

AcceptanceRow freeness_rule(const std::vector<double>& mean_abs_statistic) {
  require(!mean_abs_statistic.empty(), "freeness_rule: no values");
  bool decreasing = true;
  std::ostringstream detail;
  for (std::size_t k = 0; k < mean_abs_statistic.size(); ++k) {
    if (k > 0) decreasing = decreasing && mean_abs_statistic[k] < mean_abs_statistic[k - 1];
    detail << fmt(mean_abs_statistic[k]) << (k + 1 < mean_abs_statistic.size() ? " > " : "");
  }
  const double last = mean_abs_statistic.back();
  detail << (decreasing ? " (strictly decreasing)" : " (NOT decreasing)");
  return {3, "freeness_decay", last, 0.0, kFreenessCeiling, decreasing && last < kFreenessCeiling, detail.str()};
}

std::vector<AcceptanceRow> run_acceptance(const std::string& out_dir) {
  std::vector<AcceptanceRow> rows;
  auto guarded = [&rows](int id, const std::string& name, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      rows.push_back({id, name, std::nan(""), 0.0, 0.0, false, std::string("error: ") + e.what()});
    }
  };

  guarded(1, "semicircle_moments", [&] {
    const RngStream rng(101);
    constexpr int samples = 20;
    std::vector<std::vector<double>> m(samples, std::vector<double>(4));
    parallel_for(samples, [&](std::size_t s) {
      RngStream r = rng.split(s);
      const RVector ev = eigenvalues(sample_gue(256, r));
      for (int k = 1; k <= 4; ++k) m[s][k - 1] = ev.array().pow(2 * k).mean();
    });
    std::vector<double> mean(4, 0.0);
    for (const auto& v : m)
      for (int k = 0; k < 4; ++k) mean[k] += v[k] / samples;
    rows.push_back(semicircle_rule(mean));
  });
  guarded(2, "operator_norm", [&] {
    const RngStream rng(202);
    std::vector<double> norms(10);
    parallel_for(10, [&](std::size_t s) {
      RngStream r = rng.split(s);
      norms[s] = eigenvalues(sample_gue(512, r)).cwiseAbs().maxCoeff();
    });
    std::sort(norms.begin(), norms.end());
    rows.push_back(operator_norm_rule(0.5 * (norms[4] + norms[5])));
  });
  guarded(3, "freeness_decay", [&] { rows.push_back(freeness_rule(freeness_means({8, 32, 128}, 50, RngStream(303)))); });
  guarded(4, "laplacian_identity", [&] {
    AcceptanceRow fd;
    rows.push_back(laplacian_rows(&fd));
    rows.push_back(fd);
  });
  guarded(6, "lq_value_oracle", [&] { rows.push_back(lq_row()); });
  guarded(7, "boue_dupuis_consistency", [&] { rows.push_back(boue_dupuis_row()); });
  guarded(8, "discretization_shape", [&] { rows.push_back(discretization_row()); });
  guarded(9, "convergence_in_n", [&] { rows.push_back(n_convergence_row()); });
  guarded(10, "truncation_inequality", [&] { rows.push_back(truncation_row()); });
  guarded(11, "gaussian_analytics", [&] { rows.push_back(gaussian_row()); });
  guarded(12, "determinism", [&] { rows.push_back(determinism_row(out_dir)); });
  return rows;
}

std::string format_acceptance(const std::vector<AcceptanceRow>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-3s %-32s %-14s %-14s %-12s %s\n", "id", "check", "measured", "target",
                "tolerance", "result");
  out << line;
  for (const AcceptanceRow& r : rows) {
    std::snprintf(line, sizeof line, "%-3d %-32s %-14s %-14s %-12s %s\n", r.id, r.name.c_str(), fmt(r.measured).c_str(),
                  fmt(r.target).c_str(), fmt(r.tolerance).c_str(), r.pass ? "PASS" : "FAIL");
    out << line;
    if (!r.detail.empty()) out << "    " << r.detail << "\n";
  }
  const auto passed = std::count_if(rows.begin(), rows.end(), [](const AcceptanceRow& r) { return r.pass; });
  out << passed << "/" << rows.size() << " checks passed\n";
  return out.str();
}

int acceptance_command(const std::optional<std::string>& out_dir) {
  std::string dir = "acceptance_out";
  if (out_dir) dir = *out_dir;
  else if (const char* env = std::getenv("FREELAB_OUT_DIR"); env && *env) dir = env;
  try {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir);
    const std::vector<AcceptanceRow> rows = run_acceptance(dir);
    std::cout << format_acceptance(rows) << std::flush;
    json a = json::array();
    for (const AcceptanceRow& r : rows)
      a.push_back({{"id", r.id},
                   {"name", r.name},
                   {"measured", std::isfinite(r.measured) ? json(r.measured) : json(format_number(r.measured))},
                   {"target", r.target},
                   {"tolerance", r.tolerance},
                   {"pass", r.pass},
                   {"detail", r.detail}});
    std::ofstream out(fs::path(dir) / "acceptance.json");
    out << a.dump(2) << "\n";
    if (!out) throw IoError("cannot write acceptance.json");
    return std::all_of(rows.begin(), rows.end(), [](const AcceptanceRow& r) { return r.pass; }) ? 0 : 1;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace freelab
