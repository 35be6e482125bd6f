// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "lrc/error.hpp"

namespace lrc {

/// Dense row-major 64-bit matrix; the numeric carrier for weights,
/// calibration batches and every derived factor.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Throws InvalidArgument if any entry is NaN or Inf.
void require_finite(const Matrix& m, const char* what);

/// Throws DimensionMismatch with a readable message.
[[noreturn]] void throw_dimension_mismatch(const char* what, Index expected, Index got);

/// Thin SVD with k = min(m, n). sigma is descending and non-negative; each
/// column of U has its largest-magnitude entry non-negative (lowest row index
/// wins ties), with the matching row of Vt flipped alongside.
struct SvdResult {
  Matrix U;      // m x k
  Vector sigma;  // k
  Matrix Vt;     // k x n
};

SvdResult svd_descending(const Matrix& w);

/// Relative jitter multipliers tried in order; the absolute jitter is
/// multiplier * mean(diag(C)).
struct JitterPolicy {
  std::vector<double> ladder{0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6};
};

struct CholeskyResult {
  Matrix factor;        // lower-triangular S with S * S^T = C + jitter * I
  double jitter = 0.0;  // absolute diagonal shift that was applied
};

CholeskyResult cholesky_whiten(const Matrix& c, const JitterPolicy& policy = {});

/// First r pivot rows of LU with partial (row) pivoting, in pivot order.
/// Ties between equal-magnitude candidates go to the lowest original row.
std::vector<Index> lu_row_pivots(const Matrix& m, Index r);

/// Solves M X = RHS for square M. Throws SingularMatrix if the estimated
/// condition number exceeds kMaxConditionNumber.
Matrix solve_general(const Matrix& m, const Matrix& rhs);

/// 2-norm condition number from singular values; +inf when singular.
double condition_number(const Matrix& m);

inline constexpr double kMaxConditionNumber = 1e12;

double frobenius(const Matrix& m);

}  // namespace lrc
