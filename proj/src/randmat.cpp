#include "freelab/randmat.hpp"

#include <cmath>
#include <numbers>

namespace freelab {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void check_grid(const std::vector<double>& grid) {
  for (std::size_t k = 1; k < grid.size(); ++k)
    require(grid[k] > grid[k - 1], "time grid must be strictly increasing");
}

}  // namespace

RngStream::RngStream(std::uint64_t master_seed)
    : seed_(master_seed), key_(mix64(master_seed ^ 0x6A09E667F3BCC909ULL)) {}

RngStream RngStream::split(std::uint64_t index) const {
  RngStream child(*this);
  child.path_.push_back(index);
  child.key_ = mix64(key_ ^ mix64(index + kGolden));
  child.counter_ = 0;
  child.gauss_.reset();
  return child;
}

RngStream RngStream::split(std::initializer_list<std::uint64_t> indices) const {
  RngStream s(*this);
  for (auto i : indices) s = s.split(i);
  return s;
}

RngStream::result_type RngStream::operator()() {
  return mix64(key_ + (++counter_) * kGolden);
}

double RngStream::uniform() {
  // 53 random bits, shifted off zero
  return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() { return gauss_(*this); }

HermitianMatrix sample_gue(int n, RngStream& rng) {
  require(n >= 1, "GUE dimension must be positive");
  // Entrywise expansion of (1/n) sum E_ij g_ij with the basis normalization:
  // diagonal sqrt(n)/n, off-diagonal sqrt(n)/(sqrt(2) n) real/imaginary parts.
  CMatrix m = CMatrix::Zero(n, n);
  const double diag_scale = 1.0 / std::sqrt(static_cast<double>(n));
  const double off_scale = diag_scale / std::numbers::sqrt2;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double g = rng.normal();
      if (i == j) {
        m(i, i) += diag_scale * g;
      } else if (i < j) {
        m(i, j) += off_scale * g;
        m(j, i) += off_scale * g;
      } else {
        m(i, j) += Complex(0.0, off_scale * g);
        m(j, i) -= Complex(0.0, off_scale * g);
      }
    }
  }
  return HermitianMatrix(std::move(m));
}

GuePath gue_increments(int n, int d, const std::vector<double>& time_grid, const RngStream& rng) {
  require(d >= 1, "d must be positive");
  check_grid(time_grid);
  GuePath path;
  path.n = n;
  path.d = d;
  path.time_grid = time_grid;
  for (std::size_t k = 0; k + 1 < time_grid.size(); ++k) {
    const double scale = std::sqrt(time_grid[k + 1] - time_grid[k]);
    std::vector<HermitianMatrix> comps;
    for (int l = 0; l < d; ++l) {
      RngStream s = rng.split({k, static_cast<std::uint64_t>(l)});
      comps.push_back(sample_gue(n, s) * scale);
    }
    path.increments.emplace_back(std::move(comps));
  }
  return path;
}

CMatrix sample_haar_unitary(int n, RngStream& rng) {
  require(n >= 1, "unitary dimension must be positive");
  CMatrix g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = Complex(rng.normal(), rng.normal()) / std::numbers::sqrt2;
  Eigen::HouseholderQR<CMatrix> qr(g);
  CMatrix q = qr.householderQ();
  const CMatrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int k = 0; k < n; ++k) {
    const double mag = std::abs(r(k, k));
    const Complex phase = mag > 0.0 ? r(k, k) / mag : Complex(1.0, 0.0);
    q.col(k) *= phase;
  }
  return q;
}

std::vector<double> brownian_increments(const std::vector<double>& time_grid, RngStream& rng) {
  check_grid(time_grid);
  std::vector<double> out;
  for (std::size_t k = 0; k + 1 < time_grid.size(); ++k)
    out.push_back(std::sqrt(time_grid[k + 1] - time_grid[k]) * rng.normal());
  return out;
}

}  // namespace freelab
