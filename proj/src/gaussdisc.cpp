#include "freelab/gaussdisc.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "freelab/quadrature.hpp"

namespace freelab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMinBinProbability = 1e-300;

void check_bin(int N, int j) {
  require(N >= 1, "bin count parameter N must be >= 1");
  require(j >= -N - 1 && j <= N, "bin index out of range");
}

// Standardized bin boundaries for increment ~ N(0, delta).
std::pair<double, double> standardized(int j, double delta, int N) {
  require(delta > 0.0, "delta must be positive");
  const Interval iv = bin_boundaries(N, j);
  const double s = std::sqrt(delta);
  return {iv.lower / s, iv.upper / s};
}

double mass(double lo, double hi) {
  if (lo + hi > 0.0 || (std::isinf(hi) && hi > 0)) {
    if (std::isinf(lo) && lo < 0) return 1.0 - normal_sf(hi);
    return normal_sf(lo) - normal_sf(hi);
  }
  return normal_cdf(hi) - normal_cdf(lo);
}

// Integration window for the (possibly infinite) standardized bin, and the
// point of the bin closest to zero, used to rescale the density.
struct Window {
  double lo, hi, ref;
};

Window window(double lo, double hi) {
  constexpr double kTail = 40.0;
  Window w{lo, hi, 0.0};
  if (std::isinf(lo)) w.lo = hi - kTail;
  if (std::isinf(hi)) w.hi = lo + kTail;
  if (w.lo > 0.0) w.ref = w.lo;
  else if (w.hi < 0.0) w.ref = w.hi;
  return w;
}

}  // namespace

TimeGrid::TimeGrid(double t0_, double T_, int K_) : t0(t0_), T(T_), K(K_) {
  require(T_ > t0_, "TimeGrid: T must exceed t0");
  require(K_ >= 1, "TimeGrid: K must be >= 1");
}

std::vector<double> TimeGrid::points() const {
  std::vector<double> out;
  for (int i = 0; i <= K; ++i) out.push_back(i == K ? T : time(i));
  return out;
}

Interval bin_boundaries(int N, int j) {
  check_bin(N, j);
  if (j == -N - 1) return {-kInf, -1.0};
  if (j == N) return {1.0, kInf};
  return {static_cast<double>(j) / N, static_cast<double>(j + 1) / N};
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double mills_ratio(double z) {
  if (z < 5.0) return normal_sf(z) / normal_pdf(z);
  // R(z) = 1/(z + 1/(z + 2/(z + 3/(z + ...)))), evaluated backwards.
  double t = z;
  for (int k = 200; k >= 1; --k) t = z + k / t;
  return 1.0 / t;
}

double bin_probability(int j, double delta, int N) {
  check_bin(N, j);
  const auto [lo, hi] = standardized(j, delta, N);
  return mass(lo, hi);
}

double bin_conditional_mean(int j, double delta, int N) {
  check_bin(N, j);
  const auto [lo, hi] = standardized(j, delta, N);
  const double s = std::sqrt(delta);
  if (mass(lo, hi) < kMinBinProbability)
    throw NumericalError("bin_conditional_mean: vanishing bin probability (delta too small for this bin)");
  if (std::isinf(hi)) return s * truncated_gaussian_mean(lo);
  if (std::isinf(lo)) return -s * truncated_gaussian_mean(-hi);
  return s * (normal_pdf(lo) - normal_pdf(hi)) / mass(lo, hi);
}

double bin_conditional_mean_quadrature(int j, double delta, int N) {
  check_bin(N, j);
  const auto [lo, hi] = standardized(j, delta, N);
  const Window w = window(lo, hi);
  auto dens = [&](double x) { return std::exp(-0.5 * (x * x - w.ref * w.ref)); };
  const double z = adaptive_simpson(dens, w.lo, w.hi, 1e-14);
  const double m = adaptive_simpson([&](double x) { return x * dens(x); }, w.lo, w.hi, 1e-14);
  return std::sqrt(delta) * m / z;
}

double bin_conditional_absdev(int j, double delta, int N) {
  check_bin(N, j);
  const auto [lo, hi] = standardized(j, delta, N);
  const double s = std::sqrt(delta);
  const double omega = bin_conditional_mean(j, delta, N) / s;
  const Window w = window(lo, hi);
  auto dens = [&](double x) { return std::exp(-0.5 * (x * x - w.ref * w.ref)); };
  auto dev = [&](double x) { return std::abs(x - omega) * dens(x); };
  const double z = adaptive_simpson(dens, w.lo, w.hi, 1e-14);
  const double split = std::clamp(omega, w.lo, w.hi);
  const double num = adaptive_simpson(dev, w.lo, split, 1e-14) + adaptive_simpson(dev, split, w.hi, 1e-14);
  const double value = s * num / z;
  const bool tail = j == -N - 1 || j == N;
  const double bound = tail ? s : 1.0 / N;
  if (value > bound * (1.0 + 1e-12))
    throw NumericalError("bin_conditional_absdev: oscillation bound violated");
  return value;
}

NoiseTable::NoiseTable(int N, double delta) : N_(N), delta_(delta) {
  require(N >= 1, "NoiseTable: N must be >= 1");
  require(delta > 0.0, "NoiseTable: delta must be positive");
  for (int j = -N - 1; j <= N; ++j) {
    const double p = bin_probability(j, delta, N);
    p_.push_back(p);
    omega_.push_back(p < kMinBinProbability ? std::numeric_limits<double>::quiet_NaN()
                                            : bin_conditional_mean(j, delta, N));
  }
}

double path_probability(const BinPath& path, int prefix_length, double delta) {
  require(prefix_length >= 0 && prefix_length <= static_cast<int>(path.indices.size()), "prefix length out of range");
  double p = 1.0;
  for (int k = 0; k < prefix_length; ++k) p *= bin_probability(path.indices[k], delta, path.N);
  return p;
}

double discrete_noise_value(const BinPath& path, int prefix_length, double delta) {
  require(prefix_length >= 0 && prefix_length <= static_cast<int>(path.indices.size()), "prefix length out of range");
  double w = 0.0;
  for (int k = 0; k < prefix_length; ++k) w += bin_conditional_mean(path.indices[k], delta, path.N);
  return w;
}

PathClass classify_bulk_edge(const BinPath& path) {
  for (int j : path.indices) {
    check_bin(path.N, j);
    if (j == -path.N - 1 || j == path.N) return PathClass::kEdge;
  }
  return PathClass::kBulk;
}

double edge_mass(int K, int N, double delta) {
  require(K >= 1, "edge_mass: K must be >= 1");
  const double tail = bin_probability(N, delta, N);
  const double m = -std::expm1(K * std::log1p(-2.0 * tail));
  if (m > 2.0 * K * tail * (1.0 + 1e-12)) throw NumericalError("edge_mass: union bound violated");
  return m;
}

double truncated_gaussian_mean(double z) {
  require(std::isfinite(z), "truncated_gaussian_mean: z must be finite");
  if (z > 37.0) {
    const double u = 1.0 / (z * z);
    return z + (1.0 / z) * (1.0 - u * (2.0 - u * (10.0 - 74.0 * u)));
  }
  const double r = mills_ratio(z);
  return std::isinf(r) ? 0.0 : 1.0 / r;
}

double truncated_gaussian_variance(double z) {
  require(std::isfinite(z), "truncated_gaussian_variance: z must be finite");
  if (z > 37.0) {
    const double u = 1.0 / (z * z);
    return u * (1.0 - u * (6.0 - 50.0 * u));
  }
  const double m = truncated_gaussian_mean(z);
  return 1.0 + z * m - m * m;
}

BridgeCheckReport bridge_bound_check(double a, double b, double c, int samples, RngStream rng, int cells) {
  require(0.0 <= a && a <= b && b <= c && a < c, "bridge_bound_check: need 0 <= a <= b <= c, a < c");
  require(samples >= cells && cells >= 1, "bridge_bound_check: too few samples");
  const double r = (b - a) / (c - a);
  const double s = std::sqrt((c - b) * (b - a) / (c - a));
  struct Draw {
    double x, lhs;
  };
  std::vector<Draw> draws;
  draws.reserve(samples);
  for (int k = 0; k < samples; ++k) {
    const double u = std::sqrt(b - a) * rng.normal();
    const double v = std::sqrt(c - b) * rng.normal();
    draws.push_back({u + v, std::abs(u)});
  }
  std::sort(draws.begin(), draws.end(), [](const Draw& p, const Draw& q) { return p.x < q.x; });
  BridgeCheckReport rep;
  rep.cells = cells;
  rep.worst_margin = std::numeric_limits<double>::infinity();
  for (int cell = 0; cell < cells; ++cell) {
    const std::size_t lo = static_cast<std::size_t>(cell) * samples / cells;
    const std::size_t hi = static_cast<std::size_t>(cell + 1) * samples / cells;
    double lhs = 0.0;
    double bound = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      lhs += draws[k].lhs;
      bound += r * std::abs(draws[k].x) + s;
    }
    const double margin = (bound - lhs) / static_cast<double>(hi - lo);
    rep.worst_margin = std::min(rep.worst_margin, margin);
    if (margin >= -1e-12 * (1.0 + bound / static_cast<double>(hi - lo))) ++rep.cells_ok;
  }
  rep.passed = rep.cells_ok >= static_cast<int>(std::ceil(0.99 * cells));
  return rep;
}

bool bridge_bound_holds(double a, double b, double c, int samples, RngStream rng) {
  return bridge_bound_check(a, b, c, samples, std::move(rng)).passed;
}

BridgeCheckReport matrix_bridge_bound_check(double a, double b, double c, int n, int outer, int inner, RngStream rng) {
  require(0.0 <= a && a <= b && b <= c && a < c, "matrix_bridge_bound_check: need 0 <= a <= b <= c, a < c");
  require(outer >= 1 && inner >= 1, "matrix_bridge_bound_check: sample counts must be positive");
  const double r = (b - a) / (c - a);
  const double s = std::sqrt((c - b) * (b - a) / (c - a));
  BridgeCheckReport rep;
  rep.cells = outer;
  rep.worst_margin = std::numeric_limits<double>::infinity();
  for (int o = 0; o < outer; ++o) {
    RngStream outer_rng = rng.split({0, static_cast<std::uint64_t>(o)});
    const HermitianMatrix delta = sample_gue(n, outer_rng) * std::sqrt(c - a);
    double est = 0.0;
    for (int k = 0; k < inner; ++k) {
      RngStream inner_rng = rng.split({1, static_cast<std::uint64_t>(o), static_cast<std::uint64_t>(k)});
      const HermitianMatrix xi = sample_gue(n, inner_rng) * s;
      est += operator_norm(delta * r + xi);
    }
    est /= inner;
    const double bound = r * operator_norm(delta) + 3.0 * std::sqrt(b - a);
    rep.worst_margin = std::min(rep.worst_margin, bound - est);
    if (est <= bound) ++rep.cells_ok;
  }
  rep.passed = rep.cells_ok >= static_cast<int>(std::ceil(0.99 * outer));
  return rep;
}

}  // namespace freelab
