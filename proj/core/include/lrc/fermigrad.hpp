// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lrc/model.hpp"
#include "lrc/numeric.hpp"
#include "lrc/pivga.hpp"

namespace lrc {

struct FermiConfig {
  double temperature = 0.01;
  Index r_min = 8;

  void validate() const;
};

/// Per-layer chemical potentials with their box caps N_l = min(m_l, n_l).
struct MuVector {
  std::vector<double> mu;
  std::vector<Index> caps;

  static MuVector at_caps(const std::vector<Index>& caps);
  /// Projects every component onto [min(r_min, cap), cap].
  void clamp(Index r_min);
};

/// Parameter budget over the compressible layers. The count is
/// sum_l mu_l a_l (+ N_inc) in linear mode and sum_l (mu_l a_l - mu_l^2)
/// (+ N_inc) in parabolic mode, with a_l = m_l + n_l.
struct BudgetConstraint {
  std::vector<std::pair<Index, Index>> shapes;
  std::int64_t n_target = 0;
  std::int64_t n_inc = 0;
  CountMode mode = CountMode::Linear;
  double n_scale = 1e9;

  std::vector<double> a() const;
  std::vector<Index> caps() const;
  void validate() const;

  /// Integer count at the given ranks, N_inc included.
  std::int64_t count(const std::vector<Index>& ranks) const;
  /// Cost of moving layer l from rank r to r + 1.
  std::int64_t increment_cost(std::size_t l, Index r) const;
};

/// Penalty scale that puts eta * rho_max * lambda_max of the penalty Hessian
/// at one, i.e. the stiffest direction is solved in a single step once rho
/// has reached its cap.
double suggest_penalty_scale(const BudgetConstraint& budget, double step_size, double rho_max);

struct RhoSchedule {
  double rho0 = 1.0;
  double alpha = 1.02;
  double rho_max = 2000.0;

  void validate() const;
};

struct OptimizerConfig {
  double step_size = 0.5;
  int max_iters = 500;
  double mu_tol = 1e-3;
  double constraint_tol = 5e-3;
  Index batch_size = 64;

  void validate() const;
};

struct RankAllocation {
  std::vector<Index> ranks;
  std::int64_t achieved_params = 0;
  std::int64_t target_params = 0;
};

/// F_j = 1 / (1 + exp((j - mu) / (N T))) for j = 0 .. len - 1.
Vector fermi_factors(double mu, Index cap, double temperature, Index len);

/// Fermi weights applied to the singular modes of a layer: mode j is
/// evaluated at the centre of its slot, F(j + 1/2), so mu = r cuts exactly
/// between mode r - 1 and mode r and sum_j F_j ~= mu.
Vector mode_factors(double mu, Index cap, double temperature);

/// A diag(F) B for full-rank factors, F from mode_factors.
Matrix soft_truncate_effective(const LowRankFactors& f, double mu, const FermiConfig& cfg);

double param_count_soft(const std::vector<double>& mu, const BudgetConstraint& budget);

/// rho (N_param - N_target)^2 / (2 N_scale).
double penalty_loss(double n_param, const BudgetConstraint& budget, double rho);

/// min(rho0 alpha^t, rho_max).
double rho_schedule(int t, const RhoSchedule& s);

/// Mean over rows of KL(softmax(teacher) || softmax(student)).
double kl_divergence(const Matrix& teacher_logits, const Matrix& student_logits);

struct LossGradient {
  Vector grad;  // dL/dmu, one entry per layer
  double kl = 0.0;
  double penalty = 0.0;
  double n_param = 0.0;

  double loss() const { return kl + penalty; }
};

/// Exact gradient of KL + penalty with respect to mu by reverse accumulation
/// through the factored student A (F * (B x)). `batch` holds one input per
/// column; `teacher_logits` is samples x output_dim.
LossGradient grad_mu(const ToyModel& student, const Matrix& teacher_logits, const Matrix& batch,
                     const MuVector& mu, const BudgetConstraint& budget, double rho,
                     const FermiConfig& cfg);

struct TrajectoryPoint {
  int iter = 0;
  std::vector<double> mu;
  double rho = 0.0;
  double kl = 0.0;
  double n_param = 0.0;
};

struct OptimizationResult {
  std::vector<TrajectoryPoint> trajectory;
  MuVector final_mu;
  RankAllocation allocation;
  int iterations = 0;
  bool converged = false;
};

/// Projected gradient descent on mu from the full-rank start. `data` is the
/// training set (one input per column), consumed in fixed consecutive
/// batches. Trajectory entry t records mu before step t; the last entry is
/// the final mu.
OptimizationResult optimize_ranks(const ToyModel& model, const Matrix& data,
                                  const BudgetConstraint& budget, const FermiConfig& fermi,
                                  const RhoSchedule& sched, const OptimizerConfig& opt);

/// Integer ranks from mu: round to nearest, clamp to the box, drop ranks from
/// the layer with the largest marginal cost while over budget (ties to the
/// lowest index), then add ranks back by largest rounding remainder while
/// they still fit.
RankAllocation round_and_repair(const MuVector& mu, const BudgetConstraint& budget, Index r_min);

/// Shared-ratio baseline: floor(kappa N_l) with the largest feasible kappa,
/// then filled greedily by smallest marginal cost.
RankAllocation uniform_ranks(const BudgetConstraint& budget, Index r_min);

}  // namespace lrc
