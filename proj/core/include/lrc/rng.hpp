// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "lrc/numeric.hpp"

namespace lrc {

struct Seed {
  std::uint64_t value = 0;
};

/// Derives an independent stream seed from a parent seed and a stream tag
/// (splitmix64 finalizer); used so weights, inputs, heads etc. never share
/// a generator.
Seed derive_seed(Seed parent, std::uint64_t stream);

/// Seeded generator. Identical seed and call sequence give bit-identical
/// draws on a given standard library.
class Rng {
 public:
  explicit Rng(Seed seed) : engine_(seed.value) {}

  double normal();
  double uniform();  // [0, 1)
  std::uint64_t next() { return engine_(); }

  Matrix gaussian(Index rows, Index cols);

  /// m x k matrix with orthonormal columns (k <= m), Householder QR of a
  /// Gaussian draw with the R diagonal made positive.
  Matrix orthonormal(Index m, Index k);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace lrc
