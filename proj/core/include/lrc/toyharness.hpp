// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "lrc/fermigrad.hpp"
#include "lrc/model.hpp"
#include "lrc/numeric.hpp"
#include "lrc/rng.hpp"
#include "lrc/svd_compress.hpp"

namespace lrc {

/// Readout weights are drawn N(0, (kHeadGain / sqrt(m))^2).
inline constexpr double kHeadGain = 4.0;
/// Condition number of the calibration input covariance.
inline constexpr double kInputConditionNumber = 100.0;

/// Each layer is U diag(s) V^T with seeded orthonormal U, V and
/// s_j = s_0 exp(-decay j / planted) for j < planted, noise_floor * s_0
/// otherwise. The gain s_0 makes the layer norm-preserving on average.
ToyModel build_teacher(const ToyModelSpec& spec);

/// n_0 x n_samples draws from the model's anisotropic input Gaussian. The
/// covariance orientation is fixed by the spec seed, the samples by `seed`.
Matrix gen_calibration(const ToyModelSpec& spec, Index n_samples, Seed seed);

/// Per-layer calibration matrices from the teacher's activations on x.
std::vector<CalibState> collect_calibration(const ToyModel& model, const Matrix& x);

/// Stores full-rank data-aware factors on every layer. `calib[l]` must be
/// n_l x n_l.
void attach_factors(ToyModel& model, const std::vector<CalibState>& calib,
                    const JitterPolicy& jitter = {});

/// build_teacher + gen_calibration + attach_factors.
ToyModel calibrated_teacher(const ToyModelSpec& spec, Index calib_samples, Seed calib_seed);

struct DenseMode {};
struct SoftMode {
  std::vector<double> mu;
  double temperature = 0.01;
};
struct HardMode {
  std::vector<Index> ranks;
};
struct PivGaMode {
  std::vector<Index> ranks;
};
using ForwardMode = std::variant<DenseMode, SoftMode, HardMode, PivGaMode>;

/// Network in the requested representation. Soft mode folds F into A.
Network build_network(const ToyModel& model, const ForwardMode& mode);

/// x: n_0 x samples; returns samples x output_dim logits.
Matrix forward(const ToyModel& model, const Matrix& x, const ForwardMode& mode);

struct AllocationReport {
  std::vector<Index> ranks;
  double kl = 0.0;
  std::int64_t achieved_params = 0;
  std::vector<double> residuals;  // ||W_l - A_r B_r||_F per layer
};

AllocationReport evaluate_allocation(const ToyModel& model, const Matrix& data,
                                     const std::vector<Index>& ranks,
                                     CountMode mode = CountMode::Linear);

struct BruteForceResult {
  RankAllocation allocation;
  double kl = 0.0;
  /// Every feasible grid tuple in lexicographic order with its KL.
  std::vector<std::pair<std::vector<Index>, double>> evaluated;
};

inline constexpr std::uint64_t kMaxSearchPoints = 1'000'000;

/// Exhaustive search over {r_min, r_min + step, ..., N_l} per layer (N_l is
/// always included). Returns the KL-minimal feasible tuple; ties go to the
/// lexicographically smallest.
BruteForceResult brute_force_rank_search(const ToyModel& model, const Matrix& data,
                                         const BudgetConstraint& budget, Index grid_step,
                                         Index r_min);

}  // namespace lrc
