#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "freelab/control.hpp"

using namespace freelab;

namespace {

ControlProblem lq_problem(int n, double beta_c, double beta_f) {
  ControlProblem p;
  p.n = n;
  p.d = 1;
  p.x0 = MatrixTuple::zeros(1, n);
  p.beta_c = beta_c;
  p.beta_f = beta_f;
  p.cost = lq_cost(1);
  return p;
}

// Discrete LQ optimum when step i sees its own increments: backward
// recursion q <- q / (1 + 2 q delta) and the noise variance of each step.
double anticipating_lq_value(const ControlProblem& p, int K, int N) {
  const double delta = (p.T - p.t0) / K;
  const NoiseTable table(N, delta);
  double var_omega = 0.0;
  for (int b = 0; b < bin_count(N); ++b) var_omega += table.probability(b) * table.mean(b) * table.mean(b);
  double q = 1.0, value = 0.0;
  for (int i = K - 1; i >= 0; --i) {
    q = q / (1.0 + 2.0 * q * delta);
    value += q * p.d * (p.beta_f * p.beta_f * delta + p.beta_c * p.beta_c * var_omega);
  }
  return value + q * std::pow(l2_norm(p.x0), 2);
}

// Riccati ODE p' = 2 p^2, r' = -(beta_C^2 + beta_F^2) d p, integrated backward from T by RK4.
double riccati_rk4(const ControlProblem& pb, int steps) {
  const double h = (pb.T - pb.t0) / steps;
  const double noise = (pb.beta_c * pb.beta_c + pb.beta_f * pb.beta_f) * pb.d;
  double p = 1.0, r = 0.0;
  auto fp = [](double x) { return -2.0 * x * x; };  // d/ds with s = T - t
  for (int k = 0; k < steps; ++k) {
    const double k1 = fp(p), l1 = noise * p;
    const double k2 = fp(p + 0.5 * h * k1), l2 = noise * (p + 0.5 * h * k1);
    const double k3 = fp(p + 0.5 * h * k2), l3 = noise * (p + 0.5 * h * k2);
    const double k4 = fp(p + h * k3), l4 = noise * (p + h * k3);
    p += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    r += h / 6 * (l1 + 2 * l2 + 2 * l3 + l4);
  }
  return p * std::pow(l2_norm(pb.x0), 2) + r;
}

PolicyShape poly_shape(int K, int N, double R = 8.0) {
  PolicyShape s;
  s.K = K;
  s.N = N;
  s.R = R;
  s.kind = NodeKind::kPolynomial;
  s.degree = 1;
  return s;
}

}  // namespace

TEST_CASE("cost templates") {
  const CostSpec lq = lq_cost(2);
  RngStream rng(61);
  const MatrixTuple x({sample_gue(3, rng), sample_gue(3, rng)});
  const MatrixTuple a({sample_gue(3, rng), sample_gue(3, rng)});
  CHECK(lq.running_cost(x, a) == doctest::Approx(0.5 * std::pow(l2_norm(a), 2)));
  CHECK(lq.terminal_cost(x) == doctest::Approx(std::pow(l2_norm(x), 2)));
  CHECK(matches_lq_template(lq, 2));
  CHECK_FALSE(matches_lq_template(quartic_cost(2), 2));

  const CostSpec q = quartic_cost(1);
  const MatrixTuple d({HermitianMatrix::diagonal({1.0, 2.0})});
  CHECK(q.terminal_cost(d) == doctest::Approx(8.5));

  const CostSpec back = CostSpec::from_json(lq.to_json(), 2);
  CHECK(back.terminal_cost(x) == doctest::Approx(lq.terminal_cost(x)));
  CHECK(back.running_cost(x, a) == doctest::Approx(lq.running_cost(x, a)));
  CHECK_THROWS_AS(CostSpec::from_json(R"({"template": "nope"})", 1), ConfigError);
}

TEST_CASE("convexity and Lipschitz spot checks") {
  for (const CostSpec& c : {lq_cost(1), quartic_cost(1), smooth_abs_cost(1, 0.1, 0.5)}) {
    const ConvexityReport r = check_midpoint_convexity(c, 3, 1, 100, RngStream(62));
    CHECK(r.segments == 100);
    CHECK(r.violations == 0);
  }
  const CostSpec s = smooth_abs_cost(2, 0.1, 0.5);
  CHECK(observed_lipschitz(s, 3, 2, 200, RngStream(63)) <= s.lip_const + 1e-12);
}

TEST_CASE("problem JSON") {
  ControlProblem p = lq_problem(3, 0.5, 1.0);
  p.x0 = ramp_tuple(1, 3, 0.0, 2.0);
  const ControlProblem back = ControlProblem::from_json(p.to_json());
  CHECK(back.n == 3);
  CHECK(back.beta_c == 0.5);
  CHECK(l2_norm(back.x0 - p.x0) < 1e-15);
  CHECK(ControlProblem::from_json(R"({"n": 2, "x0": {"ramp": [0, 1]}})").x0[0](1, 1).real() == 1.0);
  CHECK_THROWS_AS(ControlProblem::from_json(R"({"n": 0})"), ConfigError);
  CHECK_THROWS_AS(ControlProblem::from_json(R"({"n": 2, "x0": "bogus"})"), ConfigError);
}

TEST_CASE("discrete policy structure") {
  PolicyShape s;
  s.K = 3;
  s.N = 1;
  s.kind = NodeKind::kConstant;
  const DiscretePolicy p(s, 2, 1);
  CHECK(p.bins_per_step() == 4);
  CHECK(p.node_count(1) == 4);
  CHECK(p.node_count(3) == 64);
  CHECK(p.prefix_id({1, 2, 3}) == 1 * 16 + 2 * 4 + 3);
  CHECK(p.parameters().size() == (4 + 16 + 64) * 4);
  CHECK_THROWS_AS(DiscretePolicy(PolicyShape{0, 1}, 2, 1), InvalidArgument);

  const DiscretePolicy q(poly_shape(3, 1), 2, 1);
  CHECK(q.letter_count(1) == 2);
  CHECK(q.letter_count(3) == 4);
  PolicyShape lagged = poly_shape(3, 1);
  lagged.info_lag = 1;
  CHECK(DiscretePolicy(lagged, 2, 1).letter_count(1) == 1);
}

TEST_CASE("policy JSON and clipping") {
  PolicyShape s;
  s.K = 2;
  s.N = 1;
  s.kind = NodeKind::kConstant;
  DiscretePolicy p(s, 3, 1);
  RngStream rng(64);
  for (int i = 1; i <= 2; ++i)
    for (std::uint64_t id = 0; id < p.node_count(i); ++id) p.set_constant_node(i, id, MatrixTuple({sample_gue(3, rng) * 4.0}));
  const DiscretePolicy back = DiscretePolicy::from_json(p.to_json());
  CHECK((back.parameters() - p.parameters()).cwiseAbs().maxCoeff() == 0.0);

  const DiscretePolicy clipped = clip_policy(p, 1.5);
  for (int i = 1; i <= 2; ++i)
    for (std::uint64_t id = 0; id < p.node_count(i); ++id) CHECK(operator_norm(clipped.constant_node(i, id)[0]) <= 1.5 + 1e-12);

  const DiscretePolicy same = clip_policy(p, 1e6);
  CHECK((same.parameters() - p.parameters()).cwiseAbs().maxCoeff() < 1e-12);

  PolicyShape ps = poly_shape(2, 1, 0.7);
  DiscretePolicy poly(ps, 3, 1);
  for (int k = 0; k < poly.parameters().size(); ++k) poly.parameters()(k) = rng.normal();
  const GuePath path = gue_increments(3, 1, {0.0, 0.5, 1.0}, RngStream(65));
  std::vector<CMatrix> letters = ramp_tuple(1, 3, -1.0, 1.0).raw();
  letters.push_back(path.increments[0][0].matrix());
  for (std::uint64_t id = 0; id < poly.node_count(1); ++id)
    for (const CMatrix& m : poly.realize(1, id, letters)) CHECK(operator_norm(HermitianMatrix(m)) <= 0.7 + 1e-12);
}

TEST_CASE("simulation") {
  PolicyShape s;
  s.K = 2;
  s.N = 1;
  s.kind = NodeKind::kConstant;
  const TimeGrid grid(0.0, 1.0, 2);
  {
    ControlProblem p = lq_problem(2, 1.0, 0.0);
    p.x0 = MatrixTuple::identities(1, 2);
    const DiscretePolicy zero(s, 2, 1);
    const TrajectoryBundle b = simulate_discrete(p, zero, grid, gue_increments(2, 1, grid.points(), RngStream(66)));
    for (std::size_t id = 0; id < b.states[2].size(); ++id) {
      const CMatrix expect = CMatrix::Identity(2, 2) * (1.0 + b.common_noise[2][id]);
      CHECK((b.states[2][id][0].matrix() - expect).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
  {
    ControlProblem p = lq_problem(2, 0.0, 0.0);
    PolicyShape one;
    one.K = 1;
    one.N = 1;
    one.kind = NodeKind::kConstant;
    DiscretePolicy pol(one, 2, 1);
    const HermitianMatrix A = HermitianMatrix::diagonal({0.3, -0.2});
    for (std::uint64_t id = 0; id < pol.node_count(1); ++id) pol.set_constant_node(1, id, MatrixTuple({A}));
    const TimeGrid g1(0.0, 1.0, 1);
    const TrajectoryBundle b = simulate_discrete(p, pol, g1, gue_increments(2, 1, g1.points(), RngStream(67)));
    for (const MatrixTuple& x : b.states[1]) CHECK((x[0].matrix() - A.matrix()).cwiseAbs().maxCoeff() < 1e-15);
  }
  {
    const ControlProblem p = lq_problem(3, 0.0, 1.0);
    const DiscretePolicy zero(s, 3, 1);
    const TrajectoryBundle b = simulate_discrete(p, zero, grid, gue_increments(3, 1, grid.points(), RngStream(68)));
    for (std::size_t id = 1; id < b.states[2].size(); ++id)
      CHECK((b.states[2][id][0].matrix() - b.states[2][0][0].matrix()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("discrete cost of the zero policy") {
  PolicyShape s;
  s.K = 1;
  s.N = 1;
  s.kind = NodeKind::kConstant;
  ControlProblem none = lq_problem(4, 0.0, 1.0);
  none.cost.terminal.reset();
  CHECK(discrete_cost(none, DiscretePolicy(s, 4, 1), 50, RngStream(69)).mean == 0.0);

  const ControlProblem p = lq_problem(8, 0.0, 1.0);
  const CostEstimate e = discrete_cost(p, DiscretePolicy(s, 8, 1), 2000, RngStream(70));
  CHECK(std::abs(e.mean - 1.0) <= 3 * e.std_error);
}

TEST_CASE("LQ references") {
  CHECK(lq_reference(lq_problem(4, 0.0, 0.0)) == 0.0);
  ControlProblem p = lq_problem(4, 0.5, 1.0);
  CHECK(lq_reference(p) == doctest::Approx(0.625 * std::log(3.0)).epsilon(1e-14));
  CHECK(lq_reference(p) == doctest::Approx(0.68663).epsilon(1e-5));
  CHECK(riccati_rk4(p, 2000) == doctest::Approx(lq_reference(p)).epsilon(1e-10));
  p.x0 = ramp_tuple(1, 4, -1.0, 2.0);
  p.T = 2.5;
  CHECK(riccati_rk4(p, 4000) == doctest::Approx(lq_reference(p)).epsilon(1e-10));
  p.T = p.t0 + 1e-12;
  CHECK(lq_reference(p) == doctest::Approx(p.cost.terminal_cost(p.x0)).epsilon(1e-9));
  CHECK(anticipating_lq_value(lq_problem(8, 0.5, 1.0), 4, 2) == doctest::Approx(0.58433).epsilon(1e-4));
}

TEST_CASE("optimizer: deterministic LQ reaches the Riccati value") {
  ControlProblem p = lq_problem(4, 0.0, 0.0);
  p.x0 = MatrixTuple::identities(1, 4);
  PolicyShape s;
  s.K = 4;
  s.N = 1;
  s.kind = NodeKind::kConstant;
  OptimizerConfig cfg;
  cfg.train_samples = 2;
  cfg.validation_samples = 2;
  const OptimizationResult r = optimize_discrete_value(p, s, cfg, RngStream(71));
  CHECK(std::abs(r.value - 1.0 / 3.0) <= 0.02);
  CHECK(r.value <= r.zero_policy.mean);
}

TEST_CASE("optimizer: zero horizon gives the terminal cost") {
  ControlProblem p = lq_problem(3, 0.0, 0.0);
  p.x0 = ramp_tuple(1, 3, 0.0, 1.0);
  p.T = 1e-3;
  PolicyShape s;
  s.K = 1;
  s.N = 1;
  s.kind = NodeKind::kConstant;
  OptimizerConfig cfg;
  cfg.train_samples = 2;
  cfg.validation_samples = 2;
  const OptimizationResult r = optimize_discrete_value(p, s, cfg, RngStream(72));
  CHECK(r.value == doctest::Approx(p.cost.terminal_cost(p.x0)).epsilon(3e-3));
}

TEST_CASE("optimizer: stochastic LQ reaches the exact discrete optimum") {
  const ControlProblem p = lq_problem(4, 0.5, 1.0);
  OptimizerConfig cfg;
  cfg.train_samples = 64;
  cfg.validation_samples = 256;
  cfg.max_iterations = 60;
  const OptimizationResult r = optimize_discrete_value(p, poly_shape(4, 2), cfg, RngStream(73));
  const double exact = anticipating_lq_value(p, 4, 2);
  CHECK(std::abs(r.value - exact) <= 0.02 * exact + 3 * r.std_error);
  const double horizon = p.T - p.t0;
  const double bound = (p.cost.c1 + l2_norm(p.x0) + (p.beta_c + p.beta_f) * std::sqrt(horizon)) * (horizon + 1.0);
  CHECK(r.value <= bound);
  CHECK(r.policy.shape().K == 4);
  CHECK(!r.log.empty());
}

TEST_CASE("optimizer: value does not increase with the clip radius") {
  ControlProblem p = lq_problem(4, 0.0, 1.0);
  p.x0 = ramp_tuple(1, 4, 0.0, 2.0);
  OptimizerConfig cfg;
  cfg.train_samples = 32;
  cfg.validation_samples = 256;
  cfg.max_iterations = 40;
  const OptimizationResult tight = optimize_discrete_value(p, poly_shape(4, 1, 0.2), cfg, RngStream(74));
  const OptimizationResult loose = optimize_discrete_value(p, poly_shape(4, 1, 8.0), cfg, RngStream(74));
  CHECK(loose.value <= tight.value + 3 * std::hypot(loose.std_error, tight.std_error));
}

TEST_CASE("optimizer writes its iteration log") {
  const ControlProblem p = lq_problem(3, 0.5, 1.0);
  OptimizerConfig cfg;
  cfg.train_samples = 8;
  cfg.validation_samples = 16;
  cfg.max_iterations = 5;
  const std::string path = (std::filesystem::temp_directory_path() / "freelab_iter_log.csv").string();
  cfg.log_path = path;
  optimize_discrete_value(p, poly_shape(2, 1), cfg, RngStream(75));
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "iter,batch_cost,step_size,max_grad_norm");
  std::filesystem::remove(path);
}

TEST_CASE("guards") {
  const ControlProblem p = lq_problem(2, 0.5, 1.0);
  OptimizerConfig cfg;
  CHECK_THROWS_AS(optimize_discrete_value(p, poly_shape(8, 4), cfg, RngStream(76)), InvalidArgument);
  ControlProblem nonconvex = p;
  nonconvex.cost.convexity_declared = false;
  CHECK_THROWS_AS(optimize_discrete_value(nonconvex, poly_shape(1, 1), cfg, RngStream(77)), InvalidArgument);
}

TEST_CASE("sample sources share paths across grids") {
  const std::vector<double> fine = TimeGrid(0.0, 1.0, 4).points();
  const SampleSource f = SampleSource::generated(3, 1, fine, RngStream(78), 5);
  const SampleSource c = SampleSource::generated(3, 1, fine, RngStream(78), 5, 2);
  for (std::size_t s = 0; s < 5; ++s) {
    const GuePath a = f.at(s), b = c.at(s);
    CHECK(b.increments.size() == 2);
    const CMatrix sum = a.increments[0][0].matrix() + a.increments[1][0].matrix();
    CHECK((b.increments[0][0].matrix() - sum).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((coarsen_path(a, 2).increments[1][0].matrix() - b.increments[1][0].matrix()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("coarsening a fine control") {
  const TimeGrid grid(0.0, 1.0, 2);
  const std::vector<double> fine = TimeGrid(0.0, 1.0, 4).points();
  const HermitianMatrix A = HermitianMatrix::diagonal({0.4, -0.1});
  RngStream rng(79);
  std::vector<FineControlSample> samples;
  for (int s = 0; s < 200; ++s) {
    FineControlSample f;
    f.common_increments = brownian_increments(fine, rng);
    f.controls.assign(4, MatrixTuple({A}));
    samples.push_back(f);
  }
  const CoarseningResult r = coarsen_control(samples, fine, grid, 1);
  for (int i = 1; i <= 2; ++i)
    for (std::uint64_t id = 0; id < r.policy.node_count(i); ++id)
      CHECK((r.policy.constant_node(i, id)[0].matrix() - A.matrix()).cwiseAbs().maxCoeff() < 1e-14);

  // Control equal to the sign of the first coarse increment: each first-step
  // node recovers the sign of its bin.
  std::vector<FineControlSample> signs;
  for (int s = 0; s < 2000; ++s) {
    FineControlSample f;
    f.common_increments = brownian_increments(fine, rng);
    const double sign = f.common_increments[0] + f.common_increments[1] > 0 ? 1.0 : -1.0;
    f.controls.assign(4, MatrixTuple({HermitianMatrix::identity(2) * sign}));
    signs.push_back(f);
  }
  const CoarseningResult sr = coarsen_control(signs, fine, grid, 1);
  for (int b = 0; b < 4; ++b) {
    const double v = sr.policy.constant_node(1, b)[0](0, 0).real();
    CHECK(v == doctest::Approx(b < 2 ? -1.0 : 1.0));
  }
}

TEST_CASE("coarsening does not raise a convex cost") {
  ControlProblem p = lq_problem(3, 1.0, 0.0);
  p.x0 = ramp_tuple(1, 3, -1.0, 1.0);
  const TimeGrid grid(0.0, 1.0, 2);
  const std::vector<double> fine = grid.points();
  RngStream rng(80);
  std::vector<FineControlSample> samples;
  double fine_cost = 0.0;
  constexpr int count = 4000;
  for (int s = 0; s < count; ++s) {
    FineControlSample f;
    f.common_increments = brownian_increments(fine, rng);
    MatrixTuple x = p.x0;
    double cost = 0.0;
    for (int k = 0; k < 2; ++k) {
      const MatrixTuple a = (x + MatrixTuple::identities(1, 3) * f.common_increments[k]) * -0.6;
      f.controls.push_back(a);
      cost += p.cost.running_cost(x, a) * 0.5;
      x = x + a * 0.5 + MatrixTuple::identities(1, 3) * f.common_increments[k];
    }
    fine_cost += (cost + p.cost.terminal_cost(x)) / count;
    samples.push_back(f);
  }
  const CoarseningResult r = coarsen_control(samples, fine, grid, 4);
  const CostEstimate coarse = discrete_cost(p, r.policy, 1, RngStream(81));
  CHECK(coarse.mean <= fine_cost + 0.05);
}

TEST_CASE("truncation inequality") {
  ControlProblem p;
  p.n = 1;
  p.d = 1;
  p.x0 = MatrixTuple::zeros(1, 1);
  p.cost = smooth_abs_cost(1, 0.05, 0.5);
  const double R = 0.75;
  ControlPath path;
  path.grid = TimeGrid(0.0, 1.0, 4).points();
  for (int k = 0; k < 4; ++k) {
    path.base.push_back(MatrixTuple({HermitianMatrix::diagonal({0.1 * k})}));
    path.controls.push_back(MatrixTuple({HermitianMatrix::diagonal({2 * R})}));
  }
  const TruncationReport r = truncation_inequality_check(p, path, R);
  CHECK(r.passed);
  CHECK(r.penalty == doctest::Approx(2.0 * 1.0 / R * 4 * R * R));

  ControlPath small = path;
  for (auto& a : small.controls) a = a * 0.1;
  const TruncationReport t = truncation_inequality_check(p, small, R);
  CHECK(t.clipped == doctest::Approx(t.original));
  CHECK(t.passed);
}

TEST_CASE("Euler-Maruyama") {
  ControlProblem p = lq_problem(3, 1.0, 0.0);
  p.x0 = ramp_tuple(1, 3, 0.0, 1.0);
  const FeedbackPolicy zero = [](double, const MatrixTuple& x, double) { return x * 0.0; };
  const EulerTrajectory t = euler_maruyama(p, zero, 8, RngStream(82));
  const CMatrix expect = p.x0[0].matrix() + CMatrix::Identity(3, 3) * t.common_noise.back();
  CHECK((t.states.back()[0].matrix() - expect).cwiseAbs().maxCoeff() < 1e-13);

  ControlProblem q = lq_problem(3, 0.0, 0.0);
  q.x0 = ramp_tuple(1, 3, 0.0, 1.0);
  q.T = 2.0;
  const MatrixTuple A({HermitianMatrix::diagonal({0.5, 0.0, -1.0})});
  const FeedbackPolicy drift = [&](double, const MatrixTuple&, double) { return A; };
  const EulerTrajectory u = euler_maruyama(q, drift, 5, RngStream(83));
  CHECK(l2_norm(u.states.back() - (q.x0 + A * 2.0)) < 1e-13);
  CHECK(u.cost == doctest::Approx(0.5 * std::pow(l2_norm(A), 2) * 2.0 + q.cost.terminal_cost(q.x0 + A * 2.0)));
}
