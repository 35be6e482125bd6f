// SPDX-License-Identifier: Apache-2.0
#include "lrc/pivga.hpp"

#include <numeric>
#include <sstream>

namespace lrc {
namespace {

PivGaFactors gauge_fix(const LowRankFactors& f, std::vector<Index> perm) {
  const Index r = f.rank();
  const Index n = f.cols();

  Matrix b0(r, r);
  Matrix b1(r, n - r);
  for (Index k = 0; k < n; ++k) {
    const Index src = perm[static_cast<std::size_t>(k)];
    if (k < r) {
      b0.col(k) = f.B.col(src);
    } else {
      b1.col(k - r) = f.B.col(src);
    }
  }

  const double cond = condition_number(b0);
  if (!(cond <= kMaxConditionNumber)) {
    std::ostringstream os;
    os << "gauge block condition number " << cond << " exceeds " << kMaxConditionNumber;
    throw Error(ErrorCode::IllConditioned, os.str());
  }

  PivGaFactors out;
  out.C = f.A * b0;
  out.D = solve_general(b0, b1);
  out.perm = std::move(perm);
  out.cond_b0 = cond;
  return out;
}

void check_factors(const LowRankFactors& f) {
  if (f.A.cols() != f.B.rows()) throw_dimension_mismatch("pivga: inner dimension", f.A.cols(), f.B.rows());
  if (f.rank() < 1 || f.rank() > f.cols()) {
    throw Error(ErrorCode::InvalidArgument, "pivga: rank must lie in [1, cols]");
  }
  require_finite(f.A, "pivga");
  require_finite(f.B, "pivga");
}

}  // namespace

Matrix PivGaFactors::reconstruct() const {
  const Index r = rank();
  Matrix w(rows(), cols());
  for (Index k = 0; k < cols(); ++k) {
    const Index dst = perm[static_cast<std::size_t>(k)];
    if (k < r) {
      w.col(dst) = C.col(k);
    } else {
      w.col(dst) = C * D.col(k - r);
    }
  }
  return w;
}

std::vector<Index> select_skeleton_columns(const Matrix& b) {
  const Index r = b.rows();
  const Index n = b.cols();
  std::vector<Index> perm = lu_row_pivots(b.transpose(), r);
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  for (Index p : perm) taken[static_cast<std::size_t>(p)] = true;
  for (Index j = 0; j < n; ++j) {
    if (!taken[static_cast<std::size_t>(j)]) perm.push_back(j);
  }
  return perm;
}

PivGaFactors pivga_factorize(const LowRankFactors& f) {
  check_factors(f);
  return gauge_fix(f, select_skeleton_columns(f.B));
}

PivGaFactors gauge_fix_unpivoted(const LowRankFactors& f) {
  check_factors(f);
  std::vector<Index> perm(static_cast<std::size_t>(f.cols()));
  std::iota(perm.begin(), perm.end(), Index{0});
  return gauge_fix(f, std::move(perm));
}

Matrix pivga_forward(const Matrix& x, const PivGaFactors& f) {
  const Index n = f.cols();
  const Index r = f.rank();
  if (x.rows() != n) throw_dimension_mismatch("pivga_forward: input width", n, x.rows());

  // One matrix-vector kernel per input, so a batch gives bit-identical
  // results to applying the columns one at a time.
  Matrix y(f.rows(), x.cols());
  Vector gathered(n), mixed(r), out(f.rows());
  for (Index b = 0; b < x.cols(); ++b) {
    for (Index k = 0; k < n; ++k) gathered(k) = x(f.perm[static_cast<std::size_t>(k)], b);
    mixed = gathered.head(r);
    if (n > r) mixed.noalias() += f.D * gathered.tail(n - r);
    out.noalias() = f.C * mixed;
    y.col(b) = out;
  }
  return y;
}

ParamCount param_count(Index m, Index n, Index r, CountMode mode) {
  if (r < 1 || r > std::min(m, n)) {
    throw Error(ErrorCode::InvalidArgument, "param_count: rank must lie in [1, min(m, n)]");
  }
  ParamCount pc;
  pc.decomposed = static_cast<std::int64_t>(r) * static_cast<std::int64_t>(m + n);
  if (mode == CountMode::Parabolic) {
    pc.decomposed -= static_cast<std::int64_t>(r) * static_cast<std::int64_t>(r);
    pc.permutation_indices = static_cast<std::int64_t>(n);
  }
  return pc;
}

double breakeven_rank(Index m, Index n) {
  return static_cast<double>(m) * static_cast<double>(n) / static_cast<double>(m + n);
}

}  // namespace lrc
