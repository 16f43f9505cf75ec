#pragma once

// Seeded, splittable sampling of GUE matrices, GUE Brownian increments,
// Haar unitaries and scalar Brownian increments.

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "freelab/matrixcore.hpp"

namespace freelab {

/// Counter-based generator: output k is a SplitMix64 finalizer applied to
/// key + k * golden, where key is derived from (master_seed, stream_path).
/// Identical (seed, path) gives identical sequences; split(i) derives an
/// independent child key.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t master_seed);

  RngStream split(std::uint64_t index) const;
  RngStream split(std::initializer_list<std::uint64_t> indices) const;

  std::uint64_t master_seed() const { return seed_; }
  const std::vector<std::uint64_t>& stream_path() const { return path_; }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  double uniform();  // in (0, 1)
  double normal();   // standard Gaussian

 private:
  std::uint64_t seed_;
  std::vector<std::uint64_t> path_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> gauss_{0.0, 1.0};
};

/// Unit-time GUE(n): S = (1/n) sum_{ij} E_{ij} g_{ij}, so E tr_n S^2 = 1.
HermitianMatrix sample_gue(int n, RngStream& rng);

struct GuePath {
  int n = 0;
  int d = 0;
  std::vector<double> time_grid;        // K+1 times
  std::vector<MatrixTuple> increments;  // K tuples
};

/// Increment k, component l is sqrt(t_{k+1} - t_k) * GUE drawn from
/// rng.split({k, l}).
GuePath gue_increments(int n, int d, const std::vector<double>& time_grid, const RngStream& rng);

/// Haar unitary via QR of a complex Ginibre matrix, rephased so diag(R) > 0.
CMatrix sample_haar_unitary(int n, RngStream& rng);

/// Independent N(0, dt_k) increments on the grid.
std::vector<double> brownian_increments(const std::vector<double>& time_grid, RngStream& rng);

}  // namespace freelab
