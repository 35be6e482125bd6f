// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "lrc/numeric.hpp"

namespace lrc {

/// W ~= A * B with A: m x r and B: r x n.
struct LowRankFactors {
  Matrix A;
  Matrix B;

  Index rank() const noexcept { return A.cols(); }
  Index rows() const noexcept { return A.rows(); }
  Index cols() const noexcept { return B.cols(); }
  Matrix product() const { return A * B; }

  /// Leading r columns of A and r rows of B.
  LowRankFactors truncated(Index r) const;
};

/// Running calibration statistics C = sum_b X_b X_b^T over input columns.
struct CalibState {
  Matrix C;
  std::uint64_t sample_count = 0;

  static CalibState empty(Index n);
};

/// Returns a new state with X (n x batch) folded in.
CalibState accumulate_calibration(const CalibState& state, const Matrix& x);

/// Eckart-Young truncation: A = U_r diag(sigma_r), B = V_r^T.
LowRankFactors plain_svd_compress(const Matrix& w, Index r);

/// Minimizer of ||(W - AB) S||_F over rank-r products, with S the whitening
/// factor of the calibration matrix. A = U_r of svd(W S), B = U_r^T W, so S is
/// never inverted.
LowRankFactors data_aware_svd(const Matrix& w, const Matrix& s, Index r);

/// sqrt(sum_{j >= r} sigma_j^2); r may be 0.
double truncation_error(const Matrix& w, Index r);

}  // namespace lrc
