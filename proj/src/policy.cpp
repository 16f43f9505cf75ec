#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>

#include <json.hpp>

#include "freelab/control.hpp"
#include "freelab/parallel.hpp"

namespace freelab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// DiscretePolicy

namespace {

std::vector<Feature> make_features(int letters, int degree) {
  std::vector<Feature> out;
  for (const Word& w : enumerate_words(letters, degree)) {
    const Word r = reversed(w);
    if (w == r) {
      out.push_back({w, false});
    } else if (w < r) {
      out.push_back({w, false});
      out.push_back({w, true});
    }
  }
  return out;
}

double ipow(double b, int e) {
  double r = 1.0;
  for (int k = 0; k < e; ++k) r *= b;
  return r;
}

}  // namespace

DiscretePolicy::DiscretePolicy(PolicyShape shape, int n, int d) : shape_(shape), n_(n), d_(d) {
  require(n >= 1 && d >= 1, "policy dimensions must be positive");
  require(shape.K >= 1 && shape.N >= 1, "policy needs K >= 1 and N >= 1");
  require(shape.R > 0.0 && shape.gate > 0.0, "clip radius and gate level must be positive");
  require(shape.info_lag == 0 || shape.info_lag == 1, "information lag must be 0 or 1");
  require(shape.degree >= 0 && shape.degree <= 3, "polynomial node degree must be in 0..3");
  double nodes = 0.0;
  for (int i = 1; i <= shape.K; ++i) nodes += ipow(bins_per_step(), i);
  require(nodes <= kBinPathGuard * 1.2, "policy node count exceeds the bin-path guard");
  std::size_t offset = 0;
  for (int i = 1; i <= shape.K; ++i) {
    features_.push_back(shape.kind == NodeKind::kPolynomial ? make_features(letter_count(i), shape.degree)
                                                            : std::vector<Feature>{});
    step_offset_.push_back(offset);
    offset += static_cast<std::size_t>(node_count(i)) * block_size(i);
  }
  step_offset_.push_back(offset);
  theta_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(offset));
}

std::uint64_t DiscretePolicy::node_count(int step) const {
  require(step >= 1 && step <= shape_.K, "step out of range");
  return static_cast<std::uint64_t>(ipow(bins_per_step(), step));
}

int DiscretePolicy::letter_count(int step) const { return d_ * (1 + std::max(0, step - shape_.info_lag)); }

int DiscretePolicy::block_size(int step) const {
  if (shape_.kind == NodeKind::kConstant) return d_ * n_ * n_;
  return d_ * static_cast<int>(features_.at(step - 1).size());
}

std::size_t DiscretePolicy::block_offset(int step, std::uint64_t prefix_id) const {
  require(prefix_id < node_count(step), "prefix id out of range");
  return step_offset_[step - 1] + static_cast<std::size_t>(prefix_id) * block_size(step);
}

std::uint64_t DiscretePolicy::prefix_id(const std::vector<int>& offsets) const {
  if (shape_.shared_across_bins) return 0;
  const int B = bins_per_step();
  std::uint64_t id = 0;
  for (int b : offsets) {
    require(b >= 0 && b < B, "bin offset out of range");
    id = id * B + static_cast<std::uint64_t>(b);
  }
  return id;
}

MatrixTuple DiscretePolicy::constant_node(int step, std::uint64_t prefix_id) const {
  require(shape_.kind == NodeKind::kConstant, "not a constant-node policy");
  const std::size_t off = block_offset(step, prefix_id);
  std::vector<HermitianMatrix> c;
  for (int l = 0; l < d_; ++l)
    c.push_back(HermitianMatrix::hermitian_part(coords_to_hermitian(theta_.data() + off + l * n_ * n_, n_)));
  return MatrixTuple(std::move(c));
}

void DiscretePolicy::set_constant_node(int step, std::uint64_t prefix_id, const MatrixTuple& value) {
  require(shape_.kind == NodeKind::kConstant, "not a constant-node policy");
  require(value.d() == d_ && value.dim() == n_, "node value shape mismatch");
  const std::size_t off = block_offset(step, prefix_id);
  for (int l = 0; l < d_; ++l) hermitian_to_coords(value[l].matrix(), theta_.data() + off + l * n_ * n_);
}

std::vector<CMatrix> DiscretePolicy::feature_matrices(int step, std::span<const CMatrix> letters) const {
  require(static_cast<int>(letters.size()) >= letter_count(step), "too few letters for the step's features");
  std::vector<CMatrix> out;
  if (shape_.kind != NodeKind::kPolynomial) return out;
  WordEvaluator ev(letters.first(letter_count(step)));
  for (const Feature& f : features(step)) {
    const CMatrix& a = ev.word(f.word);
    if (f.imaginary) out.push_back(Complex(0.0, 0.5) * (a - a.adjoint()));
    else out.push_back(0.5 * (a + a.adjoint()));
  }
  return out;
}

bool DiscretePolicy::gated(int step, std::span<const CMatrix> letters) const {
  if (shape_.kind != NodeKind::kPolynomial || !std::isfinite(shape_.gate)) return false;
  for (int k = 0; k < letter_count(step); ++k)
    if (operator_norm(HermitianMatrix::hermitian_part(letters[k])) > shape_.gate) return true;
  return false;
}

std::vector<CMatrix> DiscretePolicy::combine(int step, std::uint64_t prefix_id, std::span<const CMatrix> features) const {
  const std::size_t off = block_offset(step, prefix_id);
  std::vector<CMatrix> out;
  if (shape_.kind == NodeKind::kConstant) {
    for (int l = 0; l < d_; ++l) out.push_back(coords_to_hermitian(theta_.data() + off + l * n_ * n_, n_));
    return out;
  }
  const int F = static_cast<int>(this->features(step).size());
  require(static_cast<int>(features.size()) == F, "feature count mismatch");
  for (int l = 0; l < d_; ++l) {
    CMatrix a = CMatrix::Zero(n_, n_);
    for (int k = 0; k < F; ++k) {
      const double c = theta_[static_cast<Eigen::Index>(off + l * F + k)];
      if (c != 0.0) a += c * features[k];
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<CMatrix> DiscretePolicy::realize(int step, std::uint64_t prefix_id, std::span<const CMatrix> letters) const {
  if (gated(step, letters)) return std::vector<CMatrix>(d_, CMatrix::Zero(n_, n_));
  std::vector<CMatrix> a = combine(step, prefix_id, feature_matrices(step, letters));
  for (CMatrix& m : a) m = clip_operator_norm(m, shape_.R);
  return a;
}

std::string DiscretePolicy::to_json() const {
  json j;
  j["K"] = shape_.K;
  j["N"] = shape_.N;
  if (std::isfinite(shape_.R)) j["R"] = shape_.R;
  if (std::isfinite(shape_.gate)) j["gate"] = shape_.gate;
  j["kind"] = shape_.kind == NodeKind::kConstant ? "constant" : "polynomial";
  j["degree"] = shape_.degree;
  j["info_lag"] = shape_.info_lag;
  j["shared_across_bins"] = shape_.shared_across_bins;
  j["n"] = n_;
  j["d"] = d_;
  j["parameters"] = std::vector<double>(theta_.data(), theta_.data() + theta_.size());
  return j.dump();
}

DiscretePolicy DiscretePolicy::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    PolicyShape s;
    s.K = j.at("K").get<int>();
    s.N = j.at("N").get<int>();
    s.R = j.value("R", std::numeric_limits<double>::infinity());
    s.gate = j.value("gate", std::numeric_limits<double>::infinity());
    const std::string kind = j.value("kind", std::string("constant"));
    if (kind != "constant" && kind != "polynomial") throw ConfigError("unknown node kind '" + kind + "'");
    s.kind = kind == "constant" ? NodeKind::kConstant : NodeKind::kPolynomial;
    s.degree = j.value("degree", 1);
    s.info_lag = j.value("info_lag", 0);
    s.shared_across_bins = j.value("shared_across_bins", false);
    DiscretePolicy p(s, j.at("n").get<int>(), j.at("d").get<int>());
    if (j.contains("parameters")) {
      const auto v = j["parameters"].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(v.size()) != p.theta_.size()) throw ConfigError("policy parameter count mismatch");
      p.theta_ = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    return p;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("policy JSON: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("policy JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Cost engine: per GUE sample, a depth-first walk over the bin tree with an
// adjoint pass for parameter gradients.

namespace {

struct EngineOutput {
  std::vector<double> per_sample;
  std::vector<double> energy;
  Eigen::VectorXd gradient;  // mean over samples
};

class CostEngine {
 public:
  CostEngine(const ControlProblem& problem, const DiscretePolicy& policy)
      : pb_(problem), pol_(policy), grid_(problem.grid(policy.shape().K)), table_(policy.shape().N, grid_.delta()) {
    problem.validate();
    require(policy.n() == problem.n && policy.d() == problem.d, "policy dimensions differ from the problem");
    collapsed_ = problem.beta_c == 0.0 && policy.shape().shared_across_bins;
    tree_bins_ = collapsed_ ? 1 : bin_count(policy.shape().N);
    if (std::pow(static_cast<double>(tree_bins_), policy.shape().K) > kBinPathGuard)
      throw InvalidArgument("bin-path guard (2N+2)^K <= 1e6 exceeded");
  }

  EngineOutput run(const SampleSource& src, bool with_gradient) const {
    const std::size_t S = src.size();
    require(S >= 1, "at least one Monte Carlo sample is required");
    prepare_constants();
    const std::size_t chunks = std::min<std::size_t>(S, 32);
    const Eigen::Index P = pol_.parameters().size();
    std::vector<Eigen::VectorXd> grads(with_gradient ? chunks : 0);
    EngineOutput out;
    out.per_sample.assign(S, 0.0);
    out.energy.assign(S, 0.0);
    parallel_for(chunks, [&](std::size_t c) {
      const std::size_t lo = c * S / chunks, hi = (c + 1) * S / chunks;
      double* g = nullptr;
      if (with_gradient) {
        grads[c] = Eigen::VectorXd::Zero(P);
        g = grads[c].data();
      }
      for (std::size_t s = lo; s < hi; ++s) {
        const auto [cost, energy] = walk(src.at(s), g);
        out.per_sample[s] = cost;
        out.energy[s] = energy;
      }
    });
    if (with_gradient) {
      out.gradient = Eigen::VectorXd::Zero(P);
      for (const Eigen::VectorXd& g : grads) out.gradient += g;
      out.gradient /= static_cast<double>(S);
    }
    return out;
  }

  /// Diagonal curvature scale per parameter for preconditioning.
  Eigen::VectorXd curvature(const SampleSource& src) const {
    const PolicyShape& sh = pol_.shape();
    const int K = sh.K;
    const double delta = grid_.delta();
    const double c = std::max(2.0 * pb_.cost.quad_coef, 1e-3);
    std::vector<std::vector<double>> feat_scale(K);
    if (sh.kind == NodeKind::kPolynomial) {
      const std::size_t S = std::min<std::size_t>(src.size(), 16);
      for (int i = 1; i <= K; ++i) feat_scale[i - 1].assign(pol_.features(i).size(), 0.0);
      for (std::size_t s = 0; s < S; ++s) {
        const GuePath path = src.at(s);
        std::vector<CMatrix> letters = pb_.x0.raw();
        for (int i = 1; i <= K; ++i) {
          append_letters(letters, path, i);
          const std::vector<CMatrix> f = pol_.feature_matrices(i, letters);
          for (std::size_t k = 0; k < f.size(); ++k) feat_scale[i - 1][k] += tau2(f[k]) / static_cast<double>(S);
        }
      }
    }
    Eigen::VectorXd h(pol_.parameters().size());
    for (int i = 1; i <= K; ++i) {
      const std::vector<double> probs = node_probabilities(i);
      for (std::uint64_t id = 0; id < pol_.node_count(i); ++id) {
        const std::size_t off = pol_.block_offset(i, id);
        const double base = std::max(probs[id], 1e-300) * delta * c;
        const int bs = pol_.block_size(i);
        for (int k = 0; k < bs; ++k) {
          double scale = 1.0;
          if (sh.kind == NodeKind::kPolynomial) {
            const int F = static_cast<int>(pol_.features(i).size());
            scale = std::max(feat_scale[i - 1][k % F], 1e-8);
          }
          h[static_cast<Eigen::Index>(off + k)] = base * scale;
        }
      }
    }
    return h;
  }

 private:
  static double tau2(const CMatrix& a) { return a.squaredNorm() / static_cast<double>(a.rows()); }

  void append_letters(std::vector<CMatrix>& letters, const GuePath& path, int step) const {
    const int k = step - pol_.shape().info_lag;
    if (k >= 1) {
      const std::vector<CMatrix> inc = path.increments[k - 1].raw();
      letters.insert(letters.end(), inc.begin(), inc.end());
    }
  }

  // Total probability mass behind each node key of a step.
  std::vector<double> node_probabilities(int step) const {
    std::vector<double> out(pol_.node_count(step), 0.0);
    if (pol_.shape().shared_across_bins) {
      out[0] = 1.0;
      return out;
    }
    const int B = tree_bins_;
    std::vector<double> level{1.0};
    for (int i = 1; i <= step; ++i) {
      std::vector<double> next(level.size() * B);
      for (std::size_t p = 0; p < level.size(); ++p)
        for (int b = 0; b < B; ++b) next[p * B + b] = level[p] * table_.probability(b);
      level = std::move(next);
    }
    return level;
  }

  void prepare_constants() const {
    const_nodes_.clear();
    if (pol_.shape().kind != NodeKind::kConstant) return;
    for (int i = 1; i <= pol_.shape().K; ++i)
      for (std::uint64_t id = 0; id < pol_.node_count(i); ++id) {
        std::vector<CMatrix> a = pol_.combine(i, id, {});
        for (CMatrix& m : a) m = clip_operator_norm(m, pol_.shape().R);
        const_nodes_.push_back(std::move(a));
      }
  }

  std::size_t const_index(int step, std::uint64_t id) const {
    std::size_t idx = 0;
    for (int i = 1; i < step; ++i) idx += pol_.node_count(i);
    return idx + id;
  }

  struct SampleWalk {
    const CostEngine* eng;
    const GuePath* path;
    std::vector<std::vector<CMatrix>> features;  // per step
    std::vector<char> gated;
    std::vector<std::vector<CMatrix>> noise;  // beta_F * dW per step
    double* grad;
    double cost = 0.0;
    double energy = 0.0;

    // Visits the children of a node at depth i-1 with state xp. Adds the
    // children's state adjoints into gp when gradients are requested.
    void children(int i, std::uint64_t parent_key, double P, const std::vector<CMatrix>& xp,
                  std::vector<CMatrix>* gp) {
      const ControlProblem& pb = eng->pb_;
      const DiscretePolicy& pol = eng->pol_;
      const PolicyShape& sh = pol.shape();
      const int d = pol.d();
      const int n = pol.n();
      const double delta = eng->grid_.delta();
      const int B = eng->tree_bins_;
      for (int b = 0; b < B; ++b) {
        const double pbin = eng->collapsed_ ? 1.0 : eng->table_.probability(b);
        const double pc = P * pbin;
        if (pc == 0.0) continue;
        const double omega = eng->collapsed_ ? 0.0 : eng->table_.mean(b);
        const std::uint64_t key = sh.shared_across_bins ? 0 : parent_key * B + b;
        std::vector<CMatrix> alpha;
        if (sh.kind == NodeKind::kConstant) {
          alpha = eng->const_nodes_[eng->const_index(i, key)];
        } else if (gated[i - 1]) {
          alpha.assign(d, CMatrix::Zero(n, n));
        } else {
          alpha = pol.combine(i, key, features[i - 1]);
          for (CMatrix& m : alpha) m = clip_operator_norm(m, sh.R);
        }
        std::vector<CMatrix> x(d);
        for (int l = 0; l < d; ++l) {
          x[l] = xp[l] + delta * alpha[l] + noise[i - 1][l];
          if (omega != 0.0) x[l].diagonal().array() += pb.beta_c * omega;
        }
        const bool want = grad != nullptr;
        CostSpec::RunningJet jet = pb.cost.running_jet(x, alpha, want);
        cost += pc * delta * jet.value;
        for (int l = 0; l < d; ++l) energy += pc * delta * tau2(alpha[l]);
        std::vector<CMatrix> g;
        if (want) {
          g.resize(d);
          for (int l = 0; l < d; ++l) g[l] = (pc * delta) * jet.grad_x[l];
        }
        if (i == sh.K) {
          CylindricalJet tj = pb.cost.terminal_jet(x, want);
          cost += pc * tj.value;
          if (want)
            for (int l = 0; l < d; ++l) g[l] += pc * tj.gradient[l];
        } else {
          children(i + 1, key, pc, x, want ? &g : nullptr);
        }
        if (!want) continue;
        const std::size_t off = pol.block_offset(i, key);
        for (int l = 0; l < d; ++l) {
          const CMatrix da = (pc * delta) * jet.grad_a[l] + delta * g[l];
          if (sh.kind == NodeKind::kConstant) {
            std::vector<double> coords(static_cast<std::size_t>(n) * n);
            hermitian_to_coords(0.5 * (da + da.adjoint()), coords.data());
            double* dst = grad + off + static_cast<std::size_t>(l) * n * n;
            for (std::size_t k = 0; k < coords.size(); ++k) dst[k] += coords[k];
          } else if (!gated[i - 1]) {
            const std::vector<CMatrix>& f = features[i - 1];
            const std::size_t F = f.size();
            for (std::size_t k = 0; k < F; ++k) grad[off + l * F + k] += trace_n_product_real(da, f[k]);
          }
          if (gp) (*gp)[l] += g[l];
        }
      }
    }
  };

  std::pair<double, double> walk(const GuePath& path, double* grad) const {
    const PolicyShape& sh = pol_.shape();
    require(static_cast<int>(path.increments.size()) == sh.K, "GUE path step count differs from the policy");
    require(path.n == pb_.n && path.d == pb_.d, "GUE path dimensions differ from the problem");
    SampleWalk w{this, &path, {}, {}, {}, grad};
    std::vector<CMatrix> letters = pb_.x0.raw();
    for (int i = 1; i <= sh.K; ++i) {
      append_letters(letters, path, i);
      w.features.push_back(pol_.feature_matrices(i, letters));
      w.gated.push_back(pol_.gated(i, letters) ? 1 : 0);
      std::vector<CMatrix> nz = path.increments[i - 1].raw();
      for (CMatrix& m : nz) m *= pb_.beta_f;
      w.noise.push_back(std::move(nz));
    }
    w.children(1, 0, 1.0, pb_.x0.raw(), nullptr);
    return {w.cost, w.energy};
  }

  const ControlProblem& pb_;
  const DiscretePolicy& pol_;
  TimeGrid grid_;
  NoiseTable table_;
  bool collapsed_ = false;
  int tree_bins_ = 1;
  mutable std::vector<std::vector<CMatrix>> const_nodes_;
};

CostEstimate summarize(const EngineOutput& out) {
  CostEstimate e;
  e.samples = out.per_sample.size();
  double sum = 0.0, energy = 0.0;
  for (std::size_t s = 0; s < e.samples; ++s) {
    sum += out.per_sample[s];
    energy += out.energy[s];
  }
  e.mean = sum / e.samples;
  e.control_energy = energy / e.samples;
  if (e.samples > 1) {
    double ss = 0.0;
    for (double v : out.per_sample) ss += (v - e.mean) * (v - e.mean);
    e.std_error = std::sqrt(ss / (e.samples - 1) / e.samples);
  }
  return e;
}

void check_sources(const ControlProblem& problem, const PolicyShape& shape, const SampleSource& src) {
  require(src.size() >= 1, "at least one Monte Carlo sample is required");
  const GuePath p = src.at(0);
  const TimeGrid grid = problem.grid(shape.K);
  require(static_cast<int>(p.increments.size()) == shape.K, "sample grid step count differs from K");
  for (int i = 0; i <= shape.K; ++i)
    require(std::abs(p.time_grid[i] - (i == shape.K ? grid.T : grid.time(i))) <= 1e-9,
            "samples are drawn on a different time grid");
}

}  // namespace

CostEstimate discrete_cost(const ControlProblem& problem, const DiscretePolicy& policy, const SampleSource& samples) {
  check_sources(problem, policy.shape(), samples);
  CostEngine engine(problem, policy);
  return summarize(engine.run(samples, false));
}

CostEstimate discrete_cost(const ControlProblem& problem, const DiscretePolicy& policy, std::size_t mc_samples,
                           RngStream rng) {
  require(mc_samples >= 1, "mc_samples must be >= 1");
  const SampleSource src =
      SampleSource::generated(problem.n, problem.d, problem.grid(policy.shape().K).points(), std::move(rng), mc_samples);
  return discrete_cost(problem, policy, src);
}

// ---------------------------------------------------------------------------
// Optimizer: L-BFGS in diagonally preconditioned coordinates with
// backtracking by step halving; constant nodes are projected onto
// ||.|| <= R after every step.

namespace {

void project(DiscretePolicy& policy) {
  const PolicyShape& sh = policy.shape();
  if (sh.kind != NodeKind::kConstant || !std::isfinite(sh.R)) return;
  const int n = policy.n();
  for (int i = 1; i <= sh.K; ++i)
    for (std::uint64_t id = 0; id < policy.node_count(i); ++id) {
      const std::size_t off = policy.block_offset(i, id);
      for (int l = 0; l < policy.d(); ++l) {
        double* c = policy.parameters().data() + off + static_cast<std::size_t>(l) * n * n;
        const CMatrix m = coords_to_hermitian(c, n);
        if (std::min(m.norm(), m.cwiseAbs().rowwise().sum().maxCoeff()) > sh.R)
          hermitian_to_coords(clip_operator_norm(m, sh.R), c);
      }
    }
}

}  // namespace

OptimizationResult optimize_discrete_value(const ControlProblem& problem, const PolicyShape& shape,
                                           const OptimizerConfig& config, RngStream rng) {
  const std::vector<double> grid = problem.grid(shape.K).points();
  const SampleSource train = SampleSource::generated(problem.n, problem.d, grid, rng.split(0), config.train_samples);
  const SampleSource validation =
      SampleSource::generated(problem.n, problem.d, grid, rng.split(1), config.validation_samples);
  return optimize_discrete_value(problem, shape, config, train, validation);
}

OptimizationResult optimize_discrete_value(const ControlProblem& problem, const PolicyShape& shape_in,
                                           const OptimizerConfig& config, const SampleSource& train,
                                           const SampleSource& validation) {
  problem.validate();
  require(problem.cost.convexity_declared, "optimize_discrete_value requires a cost declared convex");
  require(config.max_iterations >= 0 && config.history >= 1 && config.patience >= 1, "invalid optimizer config");
  PolicyShape shape = shape_in;
  // Without common noise every bin subtree is the same problem.
  if (problem.beta_c == 0.0) shape.shared_across_bins = true;
  check_sources(problem, shape, train);
  check_sources(problem, shape, validation);

  DiscretePolicy policy(shape, problem.n, problem.d);
  CostEngine engine(problem, policy);
  const Eigen::VectorXd h = engine.curvature(train);
  const Eigen::VectorXd root = h.cwiseSqrt();

  OptimizationResult res{0.0, 0.0, 0.0, {}, policy, 0, false, false, {}};
  auto evaluate = [&](Eigen::VectorXd& grad_z) {
    EngineOutput o = engine.run(train, true);
    grad_z = o.gradient.cwiseQuotient(root);
    double sum = 0.0;
    for (double v : o.per_sample) sum += v;
    return sum / static_cast<double>(o.per_sample.size());
  };

  Eigen::VectorXd g;
  double f = evaluate(g);
  Eigen::VectorXd z = policy.parameters().cwiseProduct(root);
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> hist;
  int stall = 0;
  int failures = 0;
  res.log.push_back({0, f, 0.0, (g.cwiseProduct(root)).lpNorm<Eigen::Infinity>()});
  for (int it = 1; it <= config.max_iterations; ++it) {
    // Two-loop recursion.
    Eigen::VectorXd q = g;
    std::vector<double> a(hist.size());
    for (int k = static_cast<int>(hist.size()) - 1; k >= 0; --k) {
      a[k] = hist[k].first.dot(q) / hist[k].second.dot(hist[k].first);
      q -= a[k] * hist[k].second;
    }
    if (!hist.empty()) q *= hist.back().first.dot(hist.back().second) / hist.back().second.squaredNorm();
    for (std::size_t k = 0; k < hist.size(); ++k) {
      const double b = hist[k].second.dot(q) / hist[k].second.dot(hist[k].first);
      q += (a[k] - b) * hist[k].first;
    }
    Eigen::VectorXd dir = -q;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      hist.clear();
      dir = -g;
      slope = -g.squaredNorm();
    }
    const double gnorm = g.lpNorm<Eigen::Infinity>();
    if (gnorm == 0.0) {
      res.converged = true;
      break;
    }
    double t = 1.0;
    bool accepted = false;
    Eigen::VectorXd gz_new;
    double f_new = f;
    Eigen::VectorXd z_new;
    for (int tries = 0; tries < 40; ++tries) {
      z_new = z + t * dir;
      policy.parameters() = z_new.cwiseQuotient(root);
      project(policy);
      z_new = policy.parameters().cwiseProduct(root);
      f_new = evaluate(gz_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      policy.parameters() = z.cwiseQuotient(root);
      if (!hist.empty()) {
        hist.clear();
        continue;
      }
      // Steepest descent failed: either converged to rounding level or the
      // objective is inconsistent with its gradient.
      if (g.squaredNorm() <= 1e-10 * (1.0 + std::abs(f))) {
        res.converged = true;
        break;
      }
      if (++failures >= config.patience)
        throw NumericalError("optimizer: objective did not decrease over the patience window");
      continue;
    }
    failures = 0;
    const Eigen::VectorXd s = z_new - z;
    const Eigen::VectorXd y = gz_new - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      hist.emplace_back(s, y);
      if (static_cast<int>(hist.size()) > config.history) hist.pop_front();
    }
    const double rel = (f - f_new) / (1.0 + std::abs(f_new));
    z = z_new;
    g = gz_new;
    f = f_new;
    res.iterations = it;
    res.log.push_back({it, f, t, (g.cwiseProduct(root)).lpNorm<Eigen::Infinity>()});
    stall = rel < config.rel_tol ? stall + 1 : 0;
    if (stall >= 3) {
      res.converged = true;
      break;
    }
  }
  policy.parameters() = z.cwiseQuotient(root);
  res.train_cost = f;

  const DiscretePolicy zero(shape, problem.n, problem.d);
  res.zero_policy = discrete_cost(problem, zero, validation);
  const CostEstimate val = discrete_cost(problem, policy, validation);
  if (val.mean > res.zero_policy.mean) {
    res.fell_back_to_zero = true;
    res.policy = zero;
    res.value = res.zero_policy.mean;
    res.std_error = res.zero_policy.std_error;
  } else {
    res.policy = policy;
    res.value = val.mean;
    res.std_error = val.std_error;
  }
  if (!config.log_path.empty()) write_iteration_log(res.log, config.log_path);
  return res;
}

void write_iteration_log(const std::vector<IterationRecord>& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write iteration log " + path);
  os.precision(12);
  os << "iter,batch_cost,step_size,max_grad_norm\n";
  for (const IterationRecord& r : log) os << r.iter << ',' << r.batch_cost << ',' << r.step_size << ',' << r.max_grad_norm << '\n';
  if (!os) throw IoError("failed writing iteration log " + path);
}

}  // namespace freelab
