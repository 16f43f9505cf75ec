#include "freelab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "freelab/control.hpp"
#include "freelab/gaussdisc.hpp"
#include "freelab/laplacian.hpp"
#include "freelab/ldp.hpp"
#include "freelab/nclaw.hpp"
#include "freelab/parallel.hpp"

namespace freelab {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void Table::add(std::vector<std::string> row) {
  require(row.size() == header.size(), "table row width does not match the header");
  rows.push_back(std::move(row));
}

std::string Table::to_csv() const {
  std::string out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k) out += ',';
      out += cells[k];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

std::string Table::to_json() const {
  json a = json::array();
  for (const auto& r : rows) {
    json o = json::object();
    for (std::size_t k = 0; k < header.size(); ++k) {
      char* end = nullptr;
      const double v = std::strtod(r[k].c_str(), &end);
      if (!r[k].empty() && end && *end == '\0' && std::isfinite(v)) o[header[k]] = v;
      else o[header[k]] = r[k];
    }
    a.push_back(std::move(o));
  }
  return json{{"columns", header}, {"rows", a}}.dump(2) + "\n";
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds{"spectrum", "freeness",        "laplacian-check", "value",
                                              "sweep",    "ldp",             "gaussdisc-check", "truncation-check"};
  return kinds;
}

const std::vector<std::string>& csv_header(const std::string& kind) {
  static const std::map<std::string, std::vector<std::string>> headers{
      {"spectrum", {"n", "quantity", "k", "value", "reference", "rel_error"}},
      {"freeness", {"n", "samples", "statistic_mean", "statistic_stderr"}},
      {"laplacian-check",
       {"instance", "n", "d", "gue_laplacian", "free_laplacian", "correction", "residual", "fd_laplacian",
        "fd_rel_error"}},
      {"value", {"K", "N", "R", "n", "value", "stderr", "zero_policy_cost", "train_cost", "iterations", "reference"}},
      {"sweep", {"K", "N", "R", "n", "value", "stderr", "abs_diff_prev"}},
      {"ldp", {"n", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "reference"}},
      {"gaussdisc-check",
       {"j", "lower", "upper", "probability", "mean_closed", "mean_quadrature", "abs_deviation", "bound"}},
      {"truncation-check", {"instance", "n", "d", "R", "clipped", "original", "penalty", "passed"}},
  };
  auto it = headers.find(kind);
  if (it == headers.end()) throw ConfigError("unknown experiment kind '" + kind + "'");
  return it->second;
}

namespace {

std::string num(double v) { return format_number(v); }
std::string num(int v) { return std::to_string(v); }

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

int get_int(const json& j, const char* key, int fallback, int lo, int hi) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer()) throw ConfigError(std::string("'") + key + "' must be an integer");
  const long long v = j[key].get<long long>();
  if (v < lo || v > hi)
    throw ConfigError(std::string("'") + key + "' must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return static_cast<int>(v);
}

double get_double(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) throw ConfigError(std::string("'") + key + "' must be a number");
  return j[key].get<double>();
}

std::vector<int> get_sizes(const json& j, const char* key, std::vector<int> fallback, int hi = 4096) {
  if (!j.contains(key)) return fallback;
  std::vector<int> out;
  if (j[key].is_number_integer()) {
    out.push_back(j[key].get<int>());
  } else if (j[key].is_array()) {
    for (const json& v : j[key]) {
      if (!v.is_number_integer()) throw ConfigError(std::string("'") + key + "' entries must be integers");
      out.push_back(v.get<int>());
    }
  } else {
    throw ConfigError(std::string("'") + key + "' must be an integer or a list");
  }
  if (out.empty()) throw ConfigError(std::string("'") + key + "' must not be empty");
  for (int v : out)
    if (v < 1 || v > hi) throw ConfigError(std::string("'") + key + "' entries must lie in [1, " + std::to_string(hi) + "]");
  return out;
}

PolicyShape parse_shape(const json& j) {
  check_keys(j, {"K", "N", "R", "gate", "kind", "degree", "info_lag", "shared_across_bins"}, "policy");
  PolicyShape s;
  s.K = get_int(j, "K", 1, 1, 64);
  s.N = get_int(j, "N", 1, 1, 1024);
  s.R = get_double(j, "R", s.R);
  s.gate = get_double(j, "gate", s.gate);
  const std::string kind = j.value("kind", std::string("polynomial"));
  if (kind == "constant") s.kind = NodeKind::kConstant;
  else if (kind == "polynomial") s.kind = NodeKind::kPolynomial;
  else throw ConfigError("policy kind must be 'constant' or 'polynomial'");
  s.degree = get_int(j, "degree", 1, 0, 3);
  s.info_lag = get_int(j, "info_lag", 0, 0, 1);
  s.shared_across_bins = j.value("shared_across_bins", false);
  if (!(s.R > 0.0) || !(s.gate > 0.0)) throw ConfigError("policy R and gate must be positive");
  return s;
}

OptimizerConfig parse_optimizer(const json& j) {
  check_keys(j, {"max_iterations", "train_samples", "validation_samples", "history", "patience", "rel_tol"},
             "optimizer");
  OptimizerConfig c;
  c.max_iterations = get_int(j, "max_iterations", c.max_iterations, 0, 100000);
  c.train_samples = static_cast<std::size_t>(get_int(j, "train_samples", static_cast<int>(c.train_samples), 1, 1 << 24));
  c.validation_samples =
      static_cast<std::size_t>(get_int(j, "validation_samples", static_cast<int>(c.validation_samples), 1, 1 << 24));
  c.history = get_int(j, "history", c.history, 1, 100);
  c.patience = get_int(j, "patience", c.patience, 1, 100000);
  c.rel_tol = get_double(j, "rel_tol", c.rel_tol);
  if (!(c.rel_tol > 0.0)) throw ConfigError("optimizer rel_tol must be positive");
  return c;
}

ControlProblem parse_problem(const json& problem, int n) {
  json p = problem;
  p["n"] = n;
  return ControlProblem::from_json(p.dump());
}

void guard_tree(const ControlProblem& p, const PolicyShape& s) {
  const bool collapsed = p.beta_c == 0.0;
  const double bins = collapsed ? 1.0 : static_cast<double>(bin_count(s.N));
  if (std::pow(bins, s.K) > kBinPathGuard)
    throw ConfigError("bin tree with (2N+2)^K = " + format_number(std::pow(bins, s.K)) + " paths exceeds the guard");
}

struct SpectrumParams {
  std::vector<int> ns;
  int samples = 20;
  int max_moment = 4;
  int norm_samples = 0;
  double tol = 0.05;
};

SpectrumParams parse_spectrum(const json& j) {
  check_keys(j, {"name", "kind", "n", "samples", "max_moment", "norm_samples", "tol"}, "spectrum");
  SpectrumParams p;
  p.ns = get_sizes(j, "n", {64});
  p.samples = get_int(j, "samples", p.samples, 1, 100000);
  p.max_moment = get_int(j, "max_moment", p.max_moment, 1, 12);
  p.norm_samples = get_int(j, "norm_samples", p.norm_samples, 0, 100000);
  p.tol = get_double(j, "tol", p.tol);
  return p;
}

ExperimentOutcome run_spectrum(const SpectrumParams& p, const RngStream& rng) {
  ExperimentOutcome out;
  out.table.header = csv_header("spectrum");
  bool moments_ok = true;
  for (std::size_t a = 0; a < p.ns.size(); ++a) {
    const int n = p.ns[a];
    std::vector<std::vector<double>> moments(p.samples, std::vector<double>(p.max_moment, 0.0));
    parallel_for(p.samples, [&](std::size_t s) {
      RngStream r = rng.split({a, 0, s});
      const RVector ev = eigenvalues(sample_gue(n, r));
      for (int k = 1; k <= p.max_moment; ++k) moments[s][k - 1] = ev.array().pow(2 * k).mean();
    });
    for (int k = 1; k <= p.max_moment; ++k) {
      double mean = 0.0;
      for (const auto& m : moments) mean += m[k - 1];
      mean /= p.samples;
      const double ref = catalan(k);
      const double rel = std::abs(mean - ref) / ref;
      moments_ok = moments_ok && rel <= p.tol;
      out.table.add({num(n), "moment", num(2 * k), num(mean), num(ref), num(rel)});
    }
    if (p.norm_samples > 0) {
      std::vector<double> norms(p.norm_samples);
      parallel_for(p.norm_samples, [&](std::size_t s) {
        RngStream r = rng.split({a, 1, s});
        norms[s] = eigenvalues(sample_gue(n, r)).cwiseAbs().maxCoeff();
      });
      std::sort(norms.begin(), norms.end());
      const std::size_t m = norms.size();
      const double median = m % 2 ? norms[m / 2] : 0.5 * (norms[m / 2 - 1] + norms[m / 2]);
      out.table.add({num(n), "operator_norm_median", "0", num(median), "2", num(std::abs(median - 2.0) / 2.0)});
      out.metrics["operator_norm_median_n" + std::to_string(n)] = median;
    }
  }
  out.checks["moments_within_tol"] = moments_ok;
  return out;
}

struct FreenessParams {
  std::vector<int> ns;
  int samples = 50;
};

FreenessParams parse_freeness(const json& j) {
  check_keys(j, {"name", "kind", "n", "samples"}, "freeness");
  FreenessParams p;
  p.ns = get_sizes(j, "n", {8, 32, 128}, 1024);
  p.samples = get_int(j, "samples", p.samples, 2, 100000);
  return p;
}

std::pair<double, double> mean_and_stderr(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double se = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())) : 0.0;
  return {mean, se};
}

}  // namespace

std::vector<double> freeness_means(const std::vector<int>& ns, int samples, const RngStream& rng,
                                   std::vector<double>* stderrs) {
  NCPolynomial square(1);
  square.add_term(Word{0, 0}, 1.0);
  const std::vector<NCPolynomial> polys(4, square);
  std::vector<double> means;
  for (std::size_t a = 0; a < ns.size(); ++a) {
    std::vector<double> stat(samples);
    parallel_for(samples, [&](std::size_t s) {
      RngStream r = rng.split({a, s});
      const MatrixTuple x({sample_gue(ns[a], r)});
      const MatrixTuple y({sample_gue(ns[a], r)});
      stat[s] = std::abs(freeness_statistic({x, y}, {0, 1, 0, 1}, polys));
    });
    const auto [m, se] = mean_and_stderr(stat);
    means.push_back(m);
    if (stderrs) stderrs->push_back(se);
  }
  return means;
}

namespace {

ExperimentOutcome run_freeness(const FreenessParams& p, const RngStream& rng) {
  ExperimentOutcome out;
  out.table.header = csv_header("freeness");
  std::vector<double> se;
  const std::vector<double> means = freeness_means(p.ns, p.samples, rng, &se);
  bool decreasing = true;
  for (std::size_t a = 0; a < p.ns.size(); ++a) {
    out.table.add({num(p.ns[a]), num(p.samples), num(means[a]), num(se[a])});
    if (a > 0) decreasing = decreasing && means[a] < means[a - 1];
  }
  out.checks["strictly_decreasing"] = decreasing;
  return out;
}

struct LaplacianParams {
  int instances = 50;
  std::vector<int> ns{3, 4, 6};
  int d = 2;
  int max_inners = 2;
  int inner_degree = 4;
  int outer_degree = 3;
  double tol = 1e-10;
  double fd_tol = 1e-5;
  double fd_step = 1e-3;
};

LaplacianParams parse_laplacian(const json& j) {
  check_keys(j, {"name", "kind", "instances", "n", "d", "max_inners", "inner_degree", "outer_degree", "tol", "fd_tol",
                 "fd_step"},
             "laplacian-check");
  LaplacianParams p;
  p.instances = get_int(j, "instances", p.instances, 1, 100000);
  p.ns = get_sizes(j, "n", p.ns, 64);
  p.d = get_int(j, "d", p.d, 1, 8);
  p.max_inners = get_int(j, "max_inners", p.max_inners, 1, 8);
  p.inner_degree = get_int(j, "inner_degree", p.inner_degree, 1, 8);
  p.outer_degree = get_int(j, "outer_degree", p.outer_degree, 1, 6);
  p.tol = get_double(j, "tol", p.tol);
  p.fd_tol = get_double(j, "fd_tol", p.fd_tol);
  p.fd_step = get_double(j, "fd_step", p.fd_step);
  if (!(p.fd_step > 0.0)) throw ConfigError("fd_step must be positive");
  for (int n : p.ns)
    if (p.d * n * n > kLaplacianBasisGuard) throw ConfigError("d * n^2 exceeds the Laplacian basis guard");
  return p;
}

}  // namespace

LaplacianInstance laplacian_instance(int d, int n, int max_inners, int inner_degree, int outer_degree, RngStream rng) {
  const int m = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_inners));
  CylindricalFunction u = random_cylindrical(d, m, inner_degree, outer_degree, rng);
  std::vector<HermitianMatrix> comps;
  for (int l = 0; l < d; ++l) comps.push_back(sample_gue(n, rng));
  return {std::move(u), MatrixTuple(std::move(comps))};
}

namespace {

ExperimentOutcome run_laplacian(const LaplacianParams& p, const RngStream& rng) {
  ExperimentOutcome out;
  out.table.header = csv_header("laplacian-check");
  struct Row {
    int n;
    double gue, free, corr, fd;
  };
  std::vector<Row> rows(p.instances);
  parallel_for(p.instances, [&](std::size_t i) {
    const int n = p.ns[i % p.ns.size()];
    const LaplacianInstance inst =
        laplacian_instance(p.d, n, p.max_inners, p.inner_degree, p.outer_degree, rng.split(i));
    rows[i] = {n, gue_laplacian(inst.u, inst.x), free_laplacian(inst.u, inst.x), correction_term(inst.u, inst.x),
               finite_difference_laplacian(inst.u, inst.x, p.fd_step)};
  });
  double worst_residual = 0.0, worst_fd = 0.0;
  for (int i = 0; i < p.instances; ++i) {
    const Row& r = rows[i];
    const double residual = std::abs(r.gue - r.free - r.corr);
    const double fd_rel = std::abs(r.gue - r.fd) / (1.0 + std::abs(r.gue));
    worst_residual = std::max(worst_residual, residual);
    worst_fd = std::max(worst_fd, fd_rel);
    out.table.add({num(i), num(r.n), num(p.d), num(r.gue), num(r.free), num(r.corr), num(residual), num(r.fd),
                   num(fd_rel)});
  }
  out.metrics["max_residual"] = worst_residual;
  out.metrics["max_fd_rel_error"] = worst_fd;
  out.checks["identity"] = worst_residual < p.tol;
  out.checks["finite_difference"] = worst_fd < p.fd_tol;
  return out;
}

struct ValueParams {
  json problem;
  std::vector<int> ns;
  PolicyShape shape;
  OptimizerConfig optimizer;
  std::optional<double> reference;
  std::optional<double> reference_rel_tol;
  bool write_logs = false;
};

ValueParams parse_value(const json& j) {
  check_keys(j, {"name", "kind", "problem", "n", "policy", "optimizer", "reference", "reference_rel_tol", "write_logs"},
             "value");
  ValueParams p;
  p.problem = j.value("problem", json::object());
  if (!p.problem.is_object()) throw ConfigError("value: 'problem' must be an object");
  if (p.problem.contains("n")) throw ConfigError("value: give n in the experiment's 'n' list, not in 'problem'");
  p.ns = get_sizes(j, "n", {8}, 64);
  p.shape = parse_shape(j.value("policy", json::object()));
  p.optimizer = parse_optimizer(j.value("optimizer", json::object()));
  if (j.contains("reference")) {
    if (j["reference"].is_string()) {
      if (j["reference"] != "lq") throw ConfigError("value: reference must be a number or \"lq\"");
      p.reference = lq_reference(parse_problem(p.problem, 1));
    } else {
      p.reference = get_double(j, "reference", 0.0);
    }
  }
  if (j.contains("reference_rel_tol")) p.reference_rel_tol = get_double(j, "reference_rel_tol", 0.05);
  p.write_logs = j.value("write_logs", false);
  for (int n : p.ns) guard_tree(parse_problem(p.problem, n), p.shape);
  return p;
}

ExperimentOutcome run_value(const ValueParams& p, const RngStream& rng, const std::string& log_prefix) {
  ExperimentOutcome out;
  out.table.header = csv_header("value");
  bool within = true;
  for (std::size_t a = 0; a < p.ns.size(); ++a) {
    const int n = p.ns[a];
    const ControlProblem problem = parse_problem(p.problem, n);
    OptimizerConfig cfg = p.optimizer;
    if (p.write_logs && !log_prefix.empty()) cfg.log_path = log_prefix + "_n" + std::to_string(n) + ".csv";
    const OptimizationResult r = optimize_discrete_value(problem, p.shape, cfg, rng.split(a));
    const double ref = p.reference.value_or(std::nan(""));
    out.table.add({num(p.shape.K), num(p.shape.N), num(p.shape.R), num(n), num(r.value), num(r.std_error),
                   num(r.zero_policy.mean), num(r.train_cost), num(r.iterations), num(ref)});
    out.metrics["value_n" + std::to_string(n)] = r.value;
    if (p.reference && p.reference_rel_tol)
      within = within && std::abs(r.value - *p.reference) <= *p.reference_rel_tol * std::abs(*p.reference);
  }
  if (p.reference && p.reference_rel_tol) out.checks["within_reference"] = within;
  return out;
}

struct SweepParams {
  json problem;
  std::vector<int> ns;
  std::vector<std::pair<int, int>> grid;
  PolicyShape shape;
  OptimizerConfig optimizer;
};

SweepParams parse_sweep(const json& j) {
  check_keys(j, {"name", "kind", "problem", "n", "grid", "policy", "optimizer"}, "sweep");
  SweepParams p;
  p.problem = j.value("problem", json::object());
  if (!p.problem.is_object() || p.problem.contains("n")) throw ConfigError("sweep: 'problem' must be an object without n");
  p.ns = get_sizes(j, "n", {8}, 64);
  if (!j.contains("grid") || !j["grid"].is_array() || j["grid"].empty())
    throw ConfigError("sweep: 'grid' must list [K, N] pairs");
  for (const json& g : j["grid"]) {
    if (!g.is_array() || g.size() != 2 || !g[0].is_number_integer() || !g[1].is_number_integer())
      throw ConfigError("sweep: grid entries must be [K, N] integer pairs");
    p.grid.emplace_back(g[0].get<int>(), g[1].get<int>());
  }
  json policy = j.value("policy", json::object());
  if (policy.contains("K") || policy.contains("N")) throw ConfigError("sweep: K and N come from 'grid'");
  p.shape = parse_shape(policy);
  p.optimizer = parse_optimizer(j.value("optimizer", json::object()));
  int kmax = 0;
  for (auto [K, N] : p.grid) {
    if (K < 1 || N < 1) throw ConfigError("sweep: K and N must be positive");
    kmax = std::max(kmax, K);
  }
  for (auto [K, N] : p.grid) {
    if (kmax % K) throw ConfigError("sweep: every K must divide the largest K");
    PolicyShape s = p.shape;
    s.K = K;
    s.N = N;
    for (int n : p.ns) guard_tree(parse_problem(p.problem, n), s);
  }
  return p;
}

ExperimentOutcome run_sweep(const SweepParams& p, const RngStream& rng) {
  ExperimentOutcome out;
  out.table.header = csv_header("sweep");
  int kmax = 0;
  for (auto [K, N] : p.grid) kmax = std::max(kmax, K);
  bool monotone = true;
  for (std::size_t a = 0; a < p.ns.size(); ++a) {
    const int n = p.ns[a];
    const ControlProblem problem = parse_problem(p.problem, n);
    const std::vector<double> fine = problem.grid(kmax).points();
    double prev = std::nan(""), prev_diff = std::nan("");
    for (auto [K, N] : p.grid) {
      PolicyShape s = p.shape;
      s.K = K;
      s.N = N;
      if (problem.beta_c == 0.0) s.shared_across_bins = true;
      const auto train = SampleSource::generated(n, problem.d, fine, rng.split({a, 0}), p.optimizer.train_samples, kmax / K);
      const auto valid =
          SampleSource::generated(n, problem.d, fine, rng.split({a, 1}), p.optimizer.validation_samples, kmax / K);
      const OptimizationResult r = optimize_discrete_value(problem, s, p.optimizer, train, valid);
      const double diff = std::abs(r.value - prev);
      if (!std::isnan(prev_diff)) monotone = monotone && diff < prev_diff;
      out.table.add({num(K), num(N), num(s.R), num(n), num(r.value), num(r.std_error), num(diff)});
      prev_diff = std::isnan(prev) ? prev_diff : diff;
      prev = r.value;
    }
  }
  out.checks["monotone_decay"] = monotone;
  return out;
}

TerminalFunctional parse_psi(const json& j, int d) {
  if (!j.is_object()) throw ConfigError("ldp: 'psi' must be an object");
  check_keys(j, {"terminal", "terminal_spectral", "terminal_offset"}, "psi");
  const CostSpec c = CostSpec::from_json(j.dump(), d);
  TerminalFunctional psi;
  psi.d = d;
  psi.cylindrical = c.terminal;
  psi.spectral = c.terminal_spectral;
  psi.offset = c.terminal_offset;
  return psi;
}

struct LdpParams {
  TerminalFunctional psi;
  std::vector<int> ns;
  std::size_t lhs_samples = 10000;
  int steps = 8;
  int degree = 1;
  OptimizerConfig optimizer;
  std::optional<double> reference;
};

LdpParams parse_ldp(const json& j) {
  check_keys(j, {"name", "kind", "psi", "d", "n", "lhs_samples", "steps", "degree", "optimizer", "reference"}, "ldp");
  LdpParams p;
  const int d = get_int(j, "d", 1, 1, 8);
  if (!j.contains("psi")) throw ConfigError("ldp: 'psi' is required");
  p.psi = parse_psi(j["psi"], d);
  p.ns = get_sizes(j, "n", {8}, 64);
  p.lhs_samples = static_cast<std::size_t>(get_int(j, "lhs_samples", 10000, 1, 1 << 24));
  p.steps = get_int(j, "steps", p.steps, 1, 64);
  p.degree = get_int(j, "degree", p.degree, 0, 3);
  p.optimizer = parse_optimizer(j.value("optimizer", json::object()));
  if (j.contains("reference")) p.reference = get_double(j, "reference", 0.0);
  return p;
}

ExperimentOutcome run_ldp(const LdpParams& p, const RngStream& rng) {
  ExperimentOutcome out;
  out.table.header = csv_header("ldp");
  bool consistent = true;
  for (std::size_t a = 0; a < p.ns.size(); ++a) {
    const int n = p.ns[a];
    const LdpEstimate lhs = boue_dupuis_lhs(p.psi, n, p.lhs_samples, rng.split({a, 0}));
    const OptimizationResult rhs = boue_dupuis_rhs(p.psi, n, p.steps, p.optimizer, rng.split({a, 1}), p.degree);
    consistent = consistent && rhs.value >= lhs.value - 3.0 * std::hypot(lhs.std_error, rhs.std_error);
    out.table.add({num(n), num(lhs.value), num(lhs.std_error), num(rhs.value), num(rhs.std_error),
                   num(p.reference.value_or(std::nan("")))});
  }
  out.checks["rhs_not_below_lhs"] = consistent;
  return out;
}

struct GaussdiscParams {
  int N = 4;
  double delta = 0.25;
};

GaussdiscParams parse_gaussdisc(const json& j) {
  check_keys(j, {"name", "kind", "N", "delta"}, "gaussdisc-check");
  GaussdiscParams p;
  p.N = get_int(j, "N", p.N, 1, 4096);
  p.delta = get_double(j, "delta", p.delta);
  if (!(p.delta > 0.0)) throw ConfigError("gaussdisc-check: delta must be positive");
  return p;
}

ExperimentOutcome run_gaussdisc(const GaussdiscParams& p) {
  ExperimentOutcome out;
  out.table.header = csv_header("gaussdisc-check");
  double mass = 0.0, worst = 0.0, largest = 0.0;
  for (int j = bin_min(p.N); j <= p.N; ++j) {
    const Interval iv = bin_boundaries(p.N, j);
    const double prob = bin_probability(j, p.delta, p.N);
    mass += prob;
    const bool tail = j == bin_min(p.N) || j == p.N;
    const double bound = tail ? std::sqrt(p.delta) : 1.0 / p.N;
    const double closed = bin_conditional_mean(j, p.delta, p.N);
    const double quad = bin_conditional_mean_quadrature(j, p.delta, p.N);
    const double absdev = bin_conditional_absdev(j, p.delta, p.N);
    worst = std::max(worst, std::abs(closed - quad) / std::max(1.0, std::abs(closed)));
    largest = std::max(largest, std::abs(closed));
    out.table.add({num(j), num(iv.lower), num(iv.upper), num(prob), num(closed), num(quad), num(absdev), num(bound)});
  }
  double max_var = 0.0;
  for (int k = 0; k <= 50; ++k) max_var = std::max(max_var, truncated_gaussian_variance(0.1 * k));
  out.metrics["probability_mass"] = mass;
  out.metrics["max_mean_discrepancy"] = worst;
  out.metrics["max_truncated_variance"] = max_var;
  out.metrics["max_abs_mean"] = largest;
  if (p.delta <= 1.0) out.checks["mean_within_2"] = largest <= 2.0;
  out.checks["unit_mass"] = std::abs(mass - 1.0) <= 1e-12;
  out.checks["means_agree"] = worst <= 1e-8;
  out.checks["truncated_variance_le_1"] = max_var <= 1.0;
  return out;
}

struct TruncationParams {
  int instances = 100;
  int n = 4;
  int d = 1;
  double R = 1.0;
  int steps = 8;
  double eps = 0.1;
  double quad_coef = 0.5;
  double amplitude = 3.0;
};

TruncationParams parse_truncation(const json& j) {
  check_keys(j, {"name", "kind", "instances", "n", "d", "R", "steps", "eps", "quad_coef", "amplitude"},
             "truncation-check");
  TruncationParams p;
  p.instances = get_int(j, "instances", p.instances, 1, 100000);
  p.n = get_int(j, "n", p.n, 1, 256);
  p.d = get_int(j, "d", p.d, 1, 8);
  p.R = get_double(j, "R", p.R);
  p.steps = get_int(j, "steps", p.steps, 1, 1024);
  p.eps = get_double(j, "eps", p.eps);
  p.quad_coef = get_double(j, "quad_coef", p.quad_coef);
  p.amplitude = get_double(j, "amplitude", p.amplitude);
  if (!(p.R > 0.0) || !(p.eps > 0.0) || p.quad_coef < 0.0 || !(p.amplitude > 0.0))
    throw ConfigError("truncation-check: R, eps, amplitude must be positive and quad_coef non-negative");
  return p;
}

}  // namespace

TruncationReport truncation_instance(int n, int d, double R, int steps, double eps, double quad_coef,
                                     double amplitude, RngStream rng) {
  ControlProblem problem;
  problem.n = n;
  problem.d = d;
  problem.x0 = MatrixTuple::zeros(d, n);
  problem.beta_f = 1.0;
  problem.cost = smooth_abs_cost(d, eps, quad_coef);
  const TimeGrid grid = problem.grid(steps);
  ControlPath path;
  path.grid = grid.points();
  const GuePath noise = gue_increments(n, d, path.grid, rng.split(0));
  RngStream draw = rng.split(1);
  MatrixTuple y = problem.x0;
  for (int k = 0; k < steps; ++k) {
    path.base.push_back(y);
    y = y + noise.increments[k];
    std::vector<HermitianMatrix> a;
    for (int l = 0; l < d; ++l) a.push_back(sample_gue(n, draw) * (amplitude * R * draw.uniform()));
    path.controls.emplace_back(std::move(a));
  }
  return truncation_inequality_check(problem, path, R);
}

namespace {

ExperimentOutcome run_truncation(const TruncationParams& p, const RngStream& rng) {
  ExperimentOutcome out;
  out.table.header = csv_header("truncation-check");
  std::vector<TruncationReport> reps(p.instances);
  parallel_for(p.instances, [&](std::size_t i) {
    reps[i] = truncation_instance(p.n, p.d, p.R, p.steps, p.eps, p.quad_coef, p.amplitude, rng.split(i));
  });
  int passed = 0;
  for (int i = 0; i < p.instances; ++i) {
    const TruncationReport& r = reps[i];
    passed += r.passed;
    out.table.add({num(i), num(p.n), num(p.d), num(p.R), num(r.clipped), num(r.original), num(r.penalty),
                   r.passed ? "1" : "0"});
  }
  out.metrics["passed_instances"] = passed;
  out.checks["all_instances_pass"] = passed == p.instances;
  return out;
}

void validate_kind(const std::string& kind, const json& j) {
  if (kind == "spectrum") parse_spectrum(j);
  else if (kind == "freeness") parse_freeness(j);
  else if (kind == "laplacian-check") parse_laplacian(j);
  else if (kind == "value") parse_value(j);
  else if (kind == "sweep") parse_sweep(j);
  else if (kind == "ldp") parse_ldp(j);
  else if (kind == "gaussdisc-check") parse_gaussdisc(j);
  else if (kind == "truncation-check") parse_truncation(j);
  else throw ConfigError("unknown experiment kind '" + kind + "'");
}

bool valid_name(const std::string& s) {
  if (s.empty() || s.size() > 100) return false;
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'; });
}

}  // namespace

Experiment Experiment::parse(const std::string& json_text, int index) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("experiment " + std::to_string(index) + " must be an object");
  if (!j.contains("kind") || !j["kind"].is_string()) throw ConfigError("experiment " + std::to_string(index) + " needs a 'kind'");
  Experiment e;
  e.kind_ = j["kind"].get<std::string>();
  e.name_ = j.value("name", e.kind_ + "_" + std::to_string(index));
  if (!valid_name(e.name_)) throw ConfigError("experiment name '" + e.name_ + "' must be [A-Za-z0-9_-]+");
  try {
    validate_kind(e.kind_, j);
  } catch (const json::exception& ex) {
    throw ConfigError(e.name_ + ": " + ex.what());
  } catch (const InvalidArgument& ex) {
    throw ConfigError(e.name_ + ": " + ex.what());
  }
  e.params_ = j.dump();
  return e;
}

ExperimentOutcome Experiment::run(const RngStream& rng) const { return run_with_logs(rng, ""); }

ExperimentOutcome Experiment::run_with_logs(const RngStream& rng, const std::string& log_prefix) const {
  const json j = json::parse(params_);
  if (kind_ == "spectrum") return run_spectrum(parse_spectrum(j), rng);
  if (kind_ == "freeness") return run_freeness(parse_freeness(j), rng);
  if (kind_ == "laplacian-check") return run_laplacian(parse_laplacian(j), rng);
  if (kind_ == "value") return run_value(parse_value(j), rng, log_prefix);
  if (kind_ == "sweep") return run_sweep(parse_sweep(j), rng);
  if (kind_ == "ldp") return run_ldp(parse_ldp(j), rng);
  if (kind_ == "gaussdisc-check") return run_gaussdisc(parse_gaussdisc(j));
  return run_truncation(parse_truncation(j), rng);
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

struct Config {
  std::uint64_t seed = 0;
  std::optional<std::string> output_dir;
  std::vector<Experiment> experiments;
  std::string canonical;
};

Config load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  check_keys(j, {"seed", "output_dir", "experiments"}, "config");
  Config c;
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<long long>() >= 0))
      throw ConfigError("seed must be a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string()) throw ConfigError("output_dir must be a string");
    c.output_dir = j["output_dir"].get<std::string>();
  }
  const json list = j.value("experiments", json::array());
  if (!list.is_array()) throw ConfigError("experiments must be a list");
  std::set<std::string> names;
  for (std::size_t k = 0; k < list.size(); ++k) {
    Experiment e = Experiment::parse(list[k].dump(), static_cast<int>(k));
    if (!names.insert(e.name()).second) throw ConfigError("duplicate experiment name '" + e.name() + "'");
    c.experiments.push_back(std::move(e));
  }
  c.canonical = j.dump();
  return c;
}

json outcome_checks(const ExperimentOutcome& o) {
  json checks = json::object();
  for (const auto& [k, v] : o.checks) checks[k] = v;
  return checks;
}

json outcome_metrics(const ExperimentOutcome& o) {
  json m = json::object();
  for (const auto& [k, v] : o.metrics) m[k] = std::isfinite(v) ? json(v) : json(format_number(v));
  return m;
}

}  // namespace

int run_command(const RunOptions& options) {
  try {
    if (options.format != "csv" && options.format != "json") throw ConfigError("format must be csv or json");
    if (options.threads < 1) throw ConfigError("threads must be positive");
    const Config config = load_config(options.config_path);
    const std::uint64_t seed = options.seed.value_or(config.seed);

    std::string out_dir = "freelab_out";
    if (options.out_dir) out_dir = *options.out_dir;
    else if (const char* env = std::getenv("FREELAB_OUT_DIR"); env && *env) out_dir = env;
    else if (config.output_dir) out_dir = *config.output_dir;

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
    set_worker_threads(options.threads);

    const std::string config_hash = hex(fnv1a(config.canonical + "|seed=" + std::to_string(seed) + "|format=" + options.format));
    const fs::path manifest_path = fs::path(out_dir) / "manifest.json";
    json previous;
    if (fs::exists(manifest_path)) {
      try {
        previous = json::parse(read_file(manifest_path));
      } catch (const json::exception&) {
        previous = json();
      }
    }
    auto previous_entry = [&](const std::string& name, const std::string& hash) -> const json* {
      if (!previous.is_object() || !previous.contains("experiments")) return nullptr;
      for (const json& e : previous["experiments"]) {
        if (e.value("name", "") != name || e.value("hash", "") != hash || e.value("status", "") != "completed") continue;
        for (const json& f : e.value("artifacts", json::array()))
          if (!fs::exists(fs::path(out_dir) / f.get<std::string>())) return nullptr;
        return &e;
      }
      return nullptr;
    };

    json manifest{{"config_hash", config_hash}, {"seed", seed}, {"started_at", utc_now()}, {"experiments", json::array()}};
    json summary{{"config_hash", config_hash}, {"seed", seed}, {"format", options.format},
                 {"experiments", json::array()}};
    bool recomputed = !previous.is_object() || previous.value("config_hash", "") != config_hash;
    bool all_pass = true;
    int exit_code = 0;
    const RngStream master(seed);

    for (std::size_t k = 0; k < config.experiments.size(); ++k) {
      const Experiment& e = config.experiments[k];
      const std::string hash = hex(fnv1a(e.params() + "|" + std::to_string(k) + "|" + config_hash));
      const std::string file = e.name() + (options.format == "csv" ? ".csv" : ".json");
      json entry{{"name", e.name()}, {"kind", e.kind()}, {"hash", hash}};
      if (const json* prior = previous_entry(e.name(), hash)) {
        entry = *prior;
      } else {
        recomputed = true;
        try {
          const std::string log_prefix = (fs::path(out_dir) / (e.name() + "_iterations")).string();
          const ExperimentOutcome o = e.run_with_logs(master.split(k), log_prefix);
          write_file(fs::path(out_dir) / file, options.format == "csv" ? o.table.to_csv() : o.table.to_json());
          json artifacts = json::array({file});
          for (const auto& it : fs::directory_iterator(out_dir)) {
            const std::string fn = it.path().filename().string();
            if (fn.rfind(e.name() + "_iterations_n", 0) == 0) artifacts.push_back(fn);
          }
          entry["status"] = "completed";
          entry["artifacts"] = artifacts;
          entry["rows"] = o.table.rows.size();
          entry["checks"] = outcome_checks(o);
          entry["metrics"] = outcome_metrics(o);
        } catch (const NumericalError& ex) {
          entry["status"] = "failed";
          entry["error"] = ex.what();
          exit_code = 2;
        }
      }
      manifest["experiments"].push_back(entry);
      json s{{"name", e.name()}, {"kind", e.kind()}, {"status", entry["status"]}};
      if (entry.contains("artifacts")) s["file"] = entry["artifacts"][0];
      s["checks"] = entry.value("checks", json::object());
      s["metrics"] = entry.value("metrics", json::object());
      for (const auto& [key, v] : s["checks"].items()) all_pass = all_pass && v.get<bool>();
      if (entry["status"] != "completed") all_pass = false;
      summary["experiments"].push_back(s);
      if (exit_code) break;
    }
    summary["all_checks_passed"] = all_pass;

    const std::string summary_text = summary.dump(2) + "\n";
    const fs::path summary_path = fs::path(out_dir) / "summary.json";
    if (!fs::exists(summary_path) || read_file(summary_path) != summary_text) write_file(summary_path, summary_text);
    if (recomputed || !fs::exists(manifest_path)) {
      manifest["finished_at"] = utc_now();
      manifest["artifacts"] = json::array();
      for (const json& e : manifest["experiments"])
        for (const json& f : e.value("artifacts", json::array())) manifest["artifacts"].push_back(f);
      manifest["artifacts"].push_back("summary.json");
      write_file(manifest_path, manifest.dump(2) + "\n");
    }
    if (exit_code) std::cerr << "numerical failure; see " << manifest_path.string() << "\n";
    return exit_code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace freelab
