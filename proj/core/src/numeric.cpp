// SPDX-License-Identifier: Apache-2.0
#include "lrc/numeric.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SVD>

namespace lrc {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::NotSymmetric: return "NotSymmetric";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::IllConditioned: return "IllConditioned";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::InfeasibleBudget: return "InfeasibleBudget";
    case ErrorCode::SearchSpaceTooLarge: return "SearchSpaceTooLarge";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Parse: return "Parse";
  }
  return "Unknown";
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, std::string(what) + ": matrix contains NaN or Inf");
  }
}

void throw_dimension_mismatch(const char* what, Index expected, Index got) {
  std::ostringstream os;
  os << what << ": expected " << expected << ", got " << got;
  throw Error(ErrorCode::DimensionMismatch, os.str());
}

double frobenius(const Matrix& m) { return m.norm(); }

SvdResult svd_descending(const Matrix& w) {
  require_finite(w, "svd_descending");
  const Index k = std::min(w.rows(), w.cols());
  if (k == 0) {
    return {Matrix(w.rows(), 0), Vector(0), Matrix(0, w.cols())};
  }

  // Column-major working copy; BDCSVD falls back to one-sided Jacobi for
  // small blocks and is deterministic for a fixed input.
  const Eigen::MatrixXd work = w;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(work, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) {
    throw Error(ErrorCode::ConvergenceFailure, "svd_descending: SVD did not converge");
  }

  SvdResult out;
  out.U = svd.matrixU();
  out.sigma = svd.singularValues();
  out.Vt = svd.matrixV().transpose();

  for (Index j = 1; j < k; ++j) {
    if (out.sigma(j) > out.sigma(j - 1)) {
      throw Error(ErrorCode::ConvergenceFailure, "svd_descending: singular values not sorted");
    }
  }

  for (Index j = 0; j < k; ++j) {
    Index arg = 0;
    double best = -1.0;
    for (Index i = 0; i < out.U.rows(); ++i) {
      const double a = std::abs(out.U(i, j));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (out.U(arg, j) < 0.0) {
      out.U.col(j) *= -1.0;
      out.Vt.row(j) *= -1.0;
    }
  }
  return out;
}

CholeskyResult cholesky_whiten(const Matrix& c, const JitterPolicy& policy) {
  require_finite(c, "cholesky_whiten");
  if (c.rows() != c.cols()) throw_dimension_mismatch("cholesky_whiten: columns", c.rows(), c.cols());
  const Index n = c.rows();

  const double scale = c.norm();
  if ((c - c.transpose()).norm() > 1e-8 * scale) {
    throw Error(ErrorCode::NotSymmetric, "cholesky_whiten: calibration matrix is not symmetric");
  }

  const double mean_diag = n > 0 ? c.diagonal().mean() : 0.0;
  const Eigen::MatrixXd sym = 0.5 * (c + c.transpose());
  for (double mult : policy.ladder) {
    const double eps = mult * mean_diag;
    if (mult > 0.0 && !(eps > 0.0)) continue;
    Eigen::MatrixXd shifted = sym;
    shifted.diagonal().array() += eps;
    Eigen::LLT<Eigen::MatrixXd> llt(shifted);
    if (llt.info() != Eigen::Success) continue;
    Matrix lower = llt.matrixL();
    if (!lower.allFinite() || (lower.diagonal().array() <= 0.0).any()) continue;
    return {std::move(lower), eps};
  }
  throw Error(ErrorCode::NotPositiveDefinite,
              "cholesky_whiten: matrix is not positive definite within the jitter ladder");
}

std::vector<Index> lu_row_pivots(const Matrix& m, Index r) {
  require_finite(m, "lu_row_pivots");
  if (r < 1 || r > std::min(m.rows(), m.cols())) {
    throw Error(ErrorCode::InvalidArgument, "lu_row_pivots: r must lie in [1, min(rows, cols)]");
  }
  Matrix work = m;
  std::vector<Index> rows(static_cast<std::size_t>(m.rows()));
  std::iota(rows.begin(), rows.end(), Index{0});

  const double threshold = 1e-12 * work.cwiseAbs().maxCoeff();
  std::vector<Index> pivots;
  pivots.reserve(static_cast<std::size_t>(r));

  for (Index k = 0; k < r; ++k) {
    Index best = k;
    double best_mag = -1.0;
    for (Index i = k; i < work.rows(); ++i) {
      const double mag = std::abs(work(i, k));
      const auto orig = rows[static_cast<std::size_t>(i)];
      if (mag > best_mag ||
          (mag == best_mag && orig < rows[static_cast<std::size_t>(best)])) {
        best = i;
        best_mag = mag;
      }
    }
    if (!(best_mag > threshold)) {
      std::ostringstream os;
      os << "lu_row_pivots: pivot " << k << " below tolerance (" << best_mag << ")";
      throw Error(ErrorCode::RankDeficient, os.str());
    }
    if (best != k) {
      work.row(k).swap(work.row(best));
      std::swap(rows[static_cast<std::size_t>(k)], rows[static_cast<std::size_t>(best)]);
    }
    pivots.push_back(rows[static_cast<std::size_t>(k)]);

    const Index below = work.rows() - k - 1;
    const Index right = work.cols() - k - 1;
    if (below > 0 && right > 0) {
      const double inv = 1.0 / work(k, k);
      work.col(k).tail(below) *= inv;
      work.bottomRightCorner(below, right).noalias() -=
          work.col(k).tail(below) * work.row(k).tail(right);
    }
  }
  return pivots;
}

Matrix solve_general(const Matrix& m, const Matrix& rhs) {
  require_finite(m, "solve_general");
  require_finite(rhs, "solve_general");
  if (m.rows() != m.cols()) throw_dimension_mismatch("solve_general: square system", m.rows(), m.cols());
  if (rhs.rows() != m.rows()) throw_dimension_mismatch("solve_general: rhs rows", m.rows(), rhs.rows());
  if (m.rows() == 0) return Matrix(0, rhs.cols());

  const Eigen::MatrixXd lhs = m;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(lhs);
  const double rcond = lu.rcond();
  if (!(rcond > 0.0) || 1.0 / rcond > kMaxConditionNumber) {
    std::ostringstream os;
    os << "solve_general: estimated condition number " << (rcond > 0.0 ? 1.0 / rcond : INFINITY)
       << " exceeds " << kMaxConditionNumber;
    throw Error(ErrorCode::SingularMatrix, os.str());
  }
  Matrix x = lu.solve(Eigen::MatrixXd(rhs));
  if (!x.allFinite()) throw Error(ErrorCode::SingularMatrix, "solve_general: non-finite solution");
  return x;
}

double condition_number(const Matrix& m) {
  if (m.size() == 0) return 1.0;
  const Eigen::MatrixXd work = m;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(work);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

}  // namespace lrc
