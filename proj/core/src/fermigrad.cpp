// SPDX-License-Identifier: Apache-2.0
#include "lrc/fermigrad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace lrc {
namespace {

constexpr double kLogProbFloor = -69.07755278982137;  // ln(1e-30)

void fail_arg(const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); }

/// Row-wise log-softmax.
Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index s = 0; s < logits.rows(); ++s) {
    const double mx = logits.row(s).maxCoeff();
    const double lse = mx + std::log((logits.row(s).array() - mx).exp().sum());
    out.row(s) = logits.row(s).array() - lse;
  }
  return out;
}

/// F and 1 - F, each evaluated in the form that does not cancel.
void fermi_pair(double x, double& f, double& g) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    f = e / (1.0 + e);
    g = 1.0 / (1.0 + e);
  } else {
    const double e = std::exp(x);
    f = 1.0 / (1.0 + e);
    g = e / (1.0 + e);
  }
}

double count_at(const BudgetConstraint& b, std::size_t l, double r) {
  const auto [m, n] = b.shapes[l];
  const double a = static_cast<double>(m + n);
  return b.mode == CountMode::Linear ? r * a : r * a - r * r;
}

Index box_lower(Index r_min, Index cap) { return std::min(r_min, cap); }

void check_feasible(const BudgetConstraint& budget, Index r_min) {
  const auto caps = budget.caps();
  std::vector<Index> lo(caps.size());
  for (std::size_t l = 0; l < caps.size(); ++l) lo[l] = box_lower(r_min, caps[l]);
  const std::int64_t min_count = budget.count(lo);
  const std::int64_t max_count = budget.count(caps);
  if (budget.n_target < min_count || budget.n_target > max_count) {
    std::ostringstream os;
    os << "target " << budget.n_target << " outside the feasible range [" << min_count << ", "
       << max_count << "]";
    throw Error(ErrorCode::InfeasibleBudget, os.str());
  }
}

}  // namespace

void FermiConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) fail_arg("temperature must be positive");
  if (r_min < 1) fail_arg("r_min must be at least 1");
}

MuVector MuVector::at_caps(const std::vector<Index>& caps) {
  MuVector v;
  v.caps = caps;
  v.mu.assign(caps.begin(), caps.end());
  return v;
}

void MuVector::clamp(Index r_min) {
  for (std::size_t l = 0; l < mu.size(); ++l) {
    const double lo = static_cast<double>(box_lower(r_min, caps[l]));
    mu[l] = std::clamp(mu[l], lo, static_cast<double>(caps[l]));
  }
}

std::vector<double> BudgetConstraint::a() const {
  std::vector<double> out;
  for (const auto& [m, n] : shapes) out.push_back(static_cast<double>(m + n));
  return out;
}

std::vector<Index> BudgetConstraint::caps() const {
  std::vector<Index> out;
  for (const auto& [m, n] : shapes) out.push_back(std::min(m, n));
  return out;
}

void BudgetConstraint::validate() const {
  if (shapes.empty()) fail_arg("budget: no layers");
  for (const auto& [m, n] : shapes) {
    if (m < 1 || n < 1) fail_arg("budget: layer shapes must be positive");
  }
  if (n_inc < 0) fail_arg("budget: N_inc must be non-negative");
  if (n_target <= n_inc) fail_arg("budget: N_target must exceed N_inc");
  if (!(n_scale > 0.0) || !std::isfinite(n_scale)) fail_arg("budget: N_scale must be positive");
}

std::int64_t BudgetConstraint::count(const std::vector<Index>& ranks) const {
  if (ranks.size() != shapes.size()) throw_dimension_mismatch("budget count: layers", static_cast<Index>(shapes.size()), static_cast<Index>(ranks.size()));
  std::int64_t total = n_inc;
  for (std::size_t l = 0; l < ranks.size(); ++l) {
    total += param_count(shapes[l].first, shapes[l].second, ranks[l], mode).decomposed;
  }
  return total;
}

std::int64_t BudgetConstraint::increment_cost(std::size_t l, Index r) const {
  const auto [m, n] = shapes[l];
  const std::int64_t a = m + n;
  return mode == CountMode::Linear ? a : a - 2 * static_cast<std::int64_t>(r) - 1;
}

double suggest_penalty_scale(const BudgetConstraint& budget, double step_size, double rho_max) {
  double a2 = 0.0;
  for (double a : budget.a()) a2 += a * a;
  return step_size * rho_max * a2;
}

void RhoSchedule::validate() const {
  if (!(rho0 > 0.0)) fail_arg("rho0 must be positive");
  if (!(alpha > 1.0) || !std::isfinite(alpha)) fail_arg("alpha must exceed 1");
  if (!(rho_max >= rho0) || !std::isfinite(rho_max)) fail_arg("rho_max must be at least rho0");
}

void OptimizerConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) fail_arg("step_size must be positive");
  if (max_iters < 1) fail_arg("max_iters must be positive");
  if (!(mu_tol > 0.0)) fail_arg("mu_tol must be positive");
  if (!(constraint_tol > 0.0)) fail_arg("constraint_tol must be positive");
  if (batch_size < 1) fail_arg("batch_size must be positive");
}

Vector fermi_factors(double mu, Index cap, double temperature, Index len) {
  if (!(temperature > 0.0)) fail_arg("fermi_factors: temperature must be positive");
  if (cap < 1) fail_arg("fermi_factors: cap must be positive");
  const double width = static_cast<double>(cap) * temperature;
  Vector f(len);
  for (Index j = 0; j < len; ++j) {
    double g = 0.0;
    fermi_pair((static_cast<double>(j) - mu) / width, f(j), g);
  }
  return f;
}

Vector mode_factors(double mu, Index cap, double temperature) {
  return fermi_factors(mu - 0.5, cap, temperature, cap);
}

Matrix soft_truncate_effective(const LowRankFactors& f, double mu, const FermiConfig& cfg) {
  if (f.A.cols() != f.B.rows()) throw_dimension_mismatch("soft_truncate_effective: inner dimension", f.A.cols(), f.B.rows());
  const Index cap = std::min(f.rows(), f.cols());
  if (f.rank() != cap) throw_dimension_mismatch("soft_truncate_effective: full-rank factors", cap, f.rank());
  const Vector F = mode_factors(mu, cap, cfg.temperature);
  return f.A * F.asDiagonal() * f.B;
}

double param_count_soft(const std::vector<double>& mu, const BudgetConstraint& budget) {
  if (mu.size() != budget.shapes.size()) throw_dimension_mismatch("param_count_soft: layers", static_cast<Index>(budget.shapes.size()), static_cast<Index>(mu.size()));
  double total = static_cast<double>(budget.n_inc);
  for (std::size_t l = 0; l < mu.size(); ++l) total += count_at(budget, l, mu[l]);
  return total;
}

double penalty_loss(double n_param, const BudgetConstraint& budget, double rho) {
  const double dev = n_param - static_cast<double>(budget.n_target);
  return rho * dev * dev / (2.0 * budget.n_scale);
}

double rho_schedule(int t, const RhoSchedule& s) {
  if (t < 0) fail_arg("rho_schedule: t must be non-negative");
  const double ramp = s.rho0 * std::pow(s.alpha, static_cast<double>(t));
  return std::min(ramp, s.rho_max);
}

double kl_divergence(const Matrix& teacher_logits, const Matrix& student_logits) {
  if (teacher_logits.rows() != student_logits.rows()) throw_dimension_mismatch("kl_divergence: samples", teacher_logits.rows(), student_logits.rows());
  if (teacher_logits.cols() != student_logits.cols()) throw_dimension_mismatch("kl_divergence: classes", teacher_logits.cols(), student_logits.cols());
  if (teacher_logits.rows() == 0) return 0.0;
  const Matrix logp = log_softmax_rows(teacher_logits);
  const Matrix logq = log_softmax_rows(student_logits).cwiseMax(kLogProbFloor);
  double total = 0.0;
  for (Index s = 0; s < logp.rows(); ++s) {
    double row = 0.0;
    for (Index i = 0; i < logp.cols(); ++i) {
      const double p = std::exp(logp(s, i));
      if (p > 0.0) row += p * (logp(s, i) - logq(s, i));
    }
    total += row;
  }
  return std::max(0.0, total / static_cast<double>(logp.rows()));
}

LossGradient grad_mu(const ToyModel& student, const Matrix& teacher_logits, const Matrix& batch,
                     const MuVector& mu, const BudgetConstraint& budget, double rho,
                     const FermiConfig& cfg) {
  const std::size_t L = student.layers.size();
  if (!student.calibrated()) fail_arg("grad_mu: student has no full-rank factors");
  if (mu.mu.size() != L) throw_dimension_mismatch("grad_mu: mu entries", static_cast<Index>(L), static_cast<Index>(mu.mu.size()));
  if (batch.rows() != student.spec.input_dim()) throw_dimension_mismatch("grad_mu: batch rows", student.spec.input_dim(), batch.rows());
  if (teacher_logits.rows() != batch.cols()) throw_dimension_mismatch("grad_mu: teacher samples", batch.cols(), teacher_logits.rows());

  const Nonlinearity act = student.spec.nonlinearity;
  const auto samples = static_cast<double>(batch.cols());

  std::vector<Vector> F(L), dF(L);
  std::vector<Matrix> h(L + 1), u(L), act_out(L);
  std::vector<bool> skip(L);
  h[0] = batch;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& layer = student.layers[l];
    const auto& f = *layer.factors;
    const Index cap = layer.cap();
    if (f.rank() != cap) throw_dimension_mismatch("grad_mu: factor rank", cap, f.rank());
    const double width = static_cast<double>(cap) * cfg.temperature;
    F[l].resize(cap);
    dF[l].resize(cap);
    for (Index j = 0; j < cap; ++j) {
      double g = 0.0;
      fermi_pair((static_cast<double>(j) + 0.5 - mu.mu[l]) / width, F[l](j), g);
      dF[l](j) = F[l](j) * g / width;
    }
    skip[l] = uses_skip(student.spec.residual, layer.rows(), layer.cols());
    u[l] = f.B * h[l];
    Matrix z = f.A * (F[l].asDiagonal() * u[l]);
    apply_nonlinearity(act, z);
    act_out[l] = std::move(z);
    h[l + 1] = skip[l] ? Matrix(h[l] + act_out[l]) : act_out[l];
  }
  const Matrix logits = (student.head * h[L]).transpose();
  if (logits.cols() != teacher_logits.cols()) throw_dimension_mismatch("grad_mu: teacher classes", logits.cols(), teacher_logits.cols());

  LossGradient out;
  out.kl = kl_divergence(teacher_logits, logits);
  out.n_param = param_count_soft(mu.mu, budget);
  out.penalty = penalty_loss(out.n_param, budget, rho);
  out.grad = Vector::Zero(static_cast<Index>(L));

  const Matrix logp = log_softmax_rows(teacher_logits);
  const Matrix logq = log_softmax_rows(logits);
  // dKL/dlogits = (q - p) / samples, laid out output_dim x samples.
  const Matrix g_logits = ((logq.array().exp() - logp.array().exp()) / samples).matrix().transpose();
  Matrix g_h = student.head.transpose() * g_logits;

  for (std::size_t k = L; k-- > 0;) {
    const auto& f = *student.layers[k].factors;
    const Matrix g_z = g_h.cwiseProduct(nonlinearity_slope(act, act_out[k]));
    const Matrix g_v = f.A.transpose() * g_z;
    const Vector g_F = g_v.cwiseProduct(u[k]).rowwise().sum();
    out.grad(static_cast<Index>(k)) = g_F.dot(dF[k]);
    if (k > 0) {
      Matrix g_in = f.B.transpose() * (F[k].asDiagonal() * g_v);
      if (skip[k]) g_in += g_h;
      g_h = std::move(g_in);
    }
  }

  const auto a = budget.a();
  const double dev = out.n_param - static_cast<double>(budget.n_target);
  for (std::size_t l = 0; l < L; ++l) {
    const double dn = budget.mode == CountMode::Linear ? a[l] : a[l] - 2.0 * mu.mu[l];
    out.grad(static_cast<Index>(l)) += rho * dev * dn / budget.n_scale;
  }
  if (!out.grad.allFinite()) throw Error(ErrorCode::NonFiniteGradient, "grad_mu: gradient is not finite");
  return out;
}

OptimizationResult optimize_ranks(const ToyModel& model, const Matrix& data,
                                  const BudgetConstraint& budget, const FermiConfig& fermi,
                                  const RhoSchedule& sched, const OptimizerConfig& opt) {
  fermi.validate();
  sched.validate();
  opt.validate();
  budget.validate();
  if (!model.calibrated()) fail_arg("optimize_ranks: model has no full-rank factors");
  if (budget.shapes != model.shapes()) fail_arg("optimize_ranks: budget shapes do not match the model");
  if (data.rows() != model.spec.input_dim()) throw_dimension_mismatch("optimize_ranks: data rows", model.spec.input_dim(), data.rows());
  if (data.cols() < 1) fail_arg("optimize_ranks: empty training data");
  check_feasible(budget, fermi.r_min);

  const Network teacher = model.dense_network();
  std::vector<Matrix> batches;
  std::vector<Matrix> teacher_logits;
  const Index bs = std::min(opt.batch_size, data.cols());
  for (Index start = 0; start + bs <= data.cols(); start += bs) {
    batches.push_back(data.middleCols(start, bs));
    teacher_logits.push_back(network_logits(teacher, batches.back()));
  }

  OptimizationResult result;
  MuVector mu = MuVector::at_caps(model.caps());
  const double target = static_cast<double>(budget.n_target);

  int t = 0;
  for (; t < opt.max_iters; ++t) {
    const std::size_t b = static_cast<std::size_t>(t) % batches.size();
    const double rho = rho_schedule(t, sched);
    const LossGradient lg = grad_mu(model, teacher_logits[b], batches[b], mu, budget, rho, fermi);
    result.trajectory.push_back({t, mu.mu, rho, lg.kl, lg.n_param});

    MuVector next = mu;
    for (std::size_t l = 0; l < next.mu.size(); ++l) {
      next.mu[l] -= opt.step_size * lg.grad(static_cast<Index>(l));
    }
    next.clamp(fermi.r_min);

    double max_step = 0.0;
    for (std::size_t l = 0; l < next.mu.size(); ++l) {
      max_step = std::max(max_step, std::abs(next.mu[l] - mu.mu[l]));
    }
    mu = std::move(next);
    const double violation = std::abs(param_count_soft(mu.mu, budget) - target) / target;
    if (max_step < opt.mu_tol && violation < opt.constraint_tol) {
      result.converged = true;
      ++t;
      break;
    }
  }

  {
    const std::size_t b = static_cast<std::size_t>(t) % batches.size();
    const double rho = rho_schedule(t, sched);
    const LossGradient lg = grad_mu(model, teacher_logits[b], batches[b], mu, budget, rho, fermi);
    result.trajectory.push_back({t, mu.mu, rho, lg.kl, lg.n_param});
  }

  result.iterations = t;
  result.final_mu = mu;
  result.allocation = round_and_repair(mu, budget, fermi.r_min);
  return result;
}

RankAllocation round_and_repair(const MuVector& mu, const BudgetConstraint& budget, Index r_min) {
  budget.validate();
  const auto caps = budget.caps();
  if (mu.mu.size() != caps.size()) throw_dimension_mismatch("round_and_repair: layers", static_cast<Index>(caps.size()), static_cast<Index>(mu.mu.size()));

  const std::size_t L = caps.size();
  std::vector<Index> ranks(L);
  for (std::size_t l = 0; l < L; ++l) {
    const auto r = static_cast<Index>(std::llround(mu.mu[l]));
    ranks[l] = std::clamp(r, box_lower(r_min, caps[l]), caps[l]);
  }

  std::int64_t achieved = budget.count(ranks);
  while (achieved > budget.n_target) {
    std::size_t pick = L;
    std::int64_t best = std::numeric_limits<std::int64_t>::min();
    for (std::size_t l = 0; l < L; ++l) {
      if (ranks[l] <= box_lower(r_min, caps[l])) continue;
      const std::int64_t cost = budget.increment_cost(l, ranks[l] - 1);
      if (cost > best) {
        best = cost;
        pick = l;
      }
    }
    if (pick == L) throw Error(ErrorCode::InfeasibleBudget, "round_and_repair: over budget with every layer at r_min");
    --ranks[pick];
    achieved -= best;
  }

  // Fill back what rounding left on the table, never past ceil(mu), preferring
  // the layers whose mu was closest to the next integer.
  for (;;) {
    std::size_t pick = L;
    double best = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      if (ranks[l] >= caps[l]) continue;
      if (achieved + budget.increment_cost(l, ranks[l]) > budget.n_target) continue;
      const double remainder = mu.mu[l] - static_cast<double>(ranks[l]);
      if (remainder > best) {
        best = remainder;
        pick = l;
      }
    }
    if (pick == L) break;
    achieved += budget.increment_cost(pick, ranks[pick]);
    ++ranks[pick];
  }

  return {std::move(ranks), achieved, budget.n_target};
}

RankAllocation uniform_ranks(const BudgetConstraint& budget, Index r_min) {
  budget.validate();
  const auto caps = budget.caps();
  const std::size_t L = caps.size();

  // Candidate ratios are the breakpoints k / N_l; floor(kappa N_l) is
  // evaluated in exact integer arithmetic for kappa = p / q.
  struct Ratio {
    std::int64_t p;
    std::int64_t q;
  };
  std::vector<Ratio> candidates;
  for (Index cap : caps) {
    for (Index k = 1; k <= cap; ++k) candidates.push_back({k, cap});
  }
  std::sort(candidates.begin(), candidates.end(), [](const Ratio& x, const Ratio& y) {
    return x.p * y.q > y.p * x.q;
  });

  const auto ranks_at = [&](const Ratio& kappa) {
    std::vector<Index> ranks(L);
    for (std::size_t l = 0; l < L; ++l) {
      const auto r = static_cast<Index>(kappa.p * caps[l] / kappa.q);
      ranks[l] = std::clamp(r, box_lower(r_min, caps[l]), caps[l]);
    }
    return ranks;
  };

  std::vector<Index> ranks;
  for (const Ratio& kappa : candidates) {
    auto trial = ranks_at(kappa);
    if (budget.count(trial) <= budget.n_target) {
      ranks = std::move(trial);
      break;
    }
  }
  if (ranks.empty()) throw Error(ErrorCode::InfeasibleBudget, "uniform_ranks: no shared ratio fits the budget");

  std::int64_t achieved = budget.count(ranks);
  for (;;) {
    std::size_t pick = L;
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for (std::size_t l = 0; l < L; ++l) {
      if (ranks[l] >= caps[l]) continue;
      const std::int64_t cost = budget.increment_cost(l, ranks[l]);
      if (achieved + cost > budget.n_target) continue;
      if (cost < best) {
        best = cost;
        pick = l;
      }
    }
    if (pick == L) break;
    achieved += best;
    ++ranks[pick];
  }
  return {std::move(ranks), achieved, budget.n_target};
}

}  // namespace lrc
