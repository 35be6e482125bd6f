// SPDX-License-Identifier: Apache-2.0
#include "lrc/rng.hpp"

#include <Eigen/QR>

namespace lrc {

Seed derive_seed(Seed parent, std::uint64_t stream) {
  std::uint64_t z = parent.value + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return Seed{z ^ (z >> 31)};
}

double Rng::normal() { return normal_(engine_); }

double Rng::uniform() { return uniform_(engine_); }

Matrix Rng::gaussian(Index rows, Index cols) {
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) out(i, j) = normal();
  }
  return out;
}

Matrix Rng::orthonormal(Index m, Index k) {
  if (k > m) throw Error(ErrorCode::InvalidArgument, "orthonormal: k must not exceed m");
  const Eigen::MatrixXd g = gaussian(m, k);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m, k);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  for (Index j = 0; j < k; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return q;
}

}  // namespace lrc
