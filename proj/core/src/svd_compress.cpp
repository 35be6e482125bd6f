// SPDX-License-Identifier: Apache-2.0
#include "lrc/svd_compress.hpp"

#include <algorithm>
#include <cmath>

namespace lrc {
namespace {

void check_rank(const char* what, Index r, Index m, Index n) {
  if (r < 1 || r > std::min(m, n)) {
    throw Error(ErrorCode::InvalidArgument,
                std::string(what) + ": rank must lie in [1, min(rows, cols)]");
  }
}

}  // namespace

LowRankFactors LowRankFactors::truncated(Index r) const {
  if (r < 0 || r > rank()) throw Error(ErrorCode::InvalidArgument, "truncated: rank out of range");
  return {A.leftCols(r), B.topRows(r)};
}

CalibState CalibState::empty(Index n) { return {Matrix::Zero(n, n), 0}; }

CalibState accumulate_calibration(const CalibState& state, const Matrix& x) {
  require_finite(x, "accumulate_calibration");
  if (x.rows() != state.C.rows()) {
    throw_dimension_mismatch("accumulate_calibration: batch rows", state.C.rows(), x.rows());
  }
  CalibState out = state;
  out.C.noalias() += x * x.transpose();
  out.sample_count += static_cast<std::uint64_t>(x.cols());
  return out;
}

LowRankFactors plain_svd_compress(const Matrix& w, Index r) {
  check_rank("plain_svd_compress", r, w.rows(), w.cols());
  const SvdResult svd = svd_descending(w);
  LowRankFactors f;
  f.A = svd.U.leftCols(r) * svd.sigma.head(r).asDiagonal();
  f.B = svd.Vt.topRows(r);
  return f;
}

LowRankFactors data_aware_svd(const Matrix& w, const Matrix& s, Index r) {
  if (s.rows() != w.cols()) throw_dimension_mismatch("data_aware_svd: whitening rows", w.cols(), s.rows());
  if (s.cols() != w.cols()) throw_dimension_mismatch("data_aware_svd: whitening cols", w.cols(), s.cols());
  check_rank("data_aware_svd", r, w.rows(), w.cols());
  require_finite(s, "data_aware_svd");

  const SvdResult svd = svd_descending(w * s);
  LowRankFactors f;
  f.A = svd.U.leftCols(r);
  f.B = f.A.transpose() * w;
  return f;
}

double truncation_error(const Matrix& w, Index r) {
  const Index k = std::min(w.rows(), w.cols());
  if (r < 0 || r > k) throw Error(ErrorCode::InvalidArgument, "truncation_error: rank out of range");
  if (r == k) return 0.0;
  const SvdResult svd = svd_descending(w);
  return std::sqrt(svd.sigma.tail(k - r).squaredNorm());
}

}  // namespace lrc
