// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "lrc/numeric.hpp"
#include "lrc/svd_compress.hpp"

namespace lrc {

/// Gauge-fixed low-rank layer W = C [I_r | D] P^T.
///
/// `perm` holds gather indices: the forward pass reads x[perm[k]] into slot k,
/// the first `rank` slots hit the implicit identity block and the remaining
/// n - r slots are mixed by D. The identity block and the inverse permutation
/// are never stored.
struct PivGaFactors {
  Matrix C;                 // m x r skeleton factor
  Matrix D;                 // r x (n - r); zero columns when r == n
  std::vector<Index> perm;  // length n
  double cond_b0 = 1.0;     // 2-norm condition number of the gauge block

  Index rank() const noexcept { return C.cols(); }
  Index rows() const noexcept { return C.rows(); }
  Index cols() const noexcept { return static_cast<Index>(perm.size()); }

  /// Dense m x n matrix C [I | D] P^T.
  Matrix reconstruct() const;
};

enum class CountMode { Linear, Parabolic };

struct ParamCount {
  std::int64_t decomposed = 0;
  std::int64_t permutation_indices = 0;
  std::int64_t incompressible = 0;

  std::int64_t total() const noexcept { return decomposed + incompressible; }
};

/// Column order placing r independent columns of B (r x n) first: the LU
/// row pivots of B^T, then the remaining columns ascending.
std::vector<Index> select_skeleton_columns(const Matrix& b);

/// Pivoted gauge fixing. Throws IllConditioned when the pivoted r x r block
/// of B has condition number above kMaxConditionNumber.
PivGaFactors pivga_factorize(const LowRankFactors& f);

/// Gauge fixing against the leading r x r block of B, without pivoting.
PivGaFactors gauge_fix_unpivoted(const LowRankFactors& f);

/// y = C (x1 + D x2) for the permuted split of x. `x` holds one input per
/// column (n x batch); returns m x batch.
Matrix pivga_forward(const Matrix& x, const PivGaFactors& f);

/// Linear: r (n + m). Parabolic: r (n + m) - r^2 with n permutation indices
/// reported separately.
ParamCount param_count(Index m, Index n, Index r, CountMode mode);

/// m n / (m + n): above this rank plain factors outgrow the dense matrix.
double breakeven_rank(Index m, Index n);

}  // namespace lrc
