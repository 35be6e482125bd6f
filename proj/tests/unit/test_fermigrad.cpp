// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "lrc/fermigrad.hpp"
#include "lrc/toyharness.hpp"
#include "oracles.hpp"

using namespace lrc;
using lrc::testing::fermi_ref;
using lrc::testing::naive_kl;
using lrc::testing::random_matrix;

namespace {

BudgetConstraint two_big_layers(std::int64_t target, CountMode mode) {
  BudgetConstraint b;
  b.shapes = {{1024, 1024}, {1024, 1024}};
  b.n_target = target;
  b.mode = mode;
  return b;
}

ToyModelSpec three_layer_spec() {
  ToyModelSpec s;
  s.layer_shapes = {{12, 10}, {12, 12}, {8, 12}};
  s.planted_ranks = {4, 6, 5};
  s.spectrum_decay = {2.0, 3.0, 2.5};
  s.output_dim = 6;
  s.seed = Seed{77};
  return s;
}

BudgetConstraint budget_for(const ToyModel& m, double ratio) {
  BudgetConstraint b;
  b.shapes = m.shapes();
  b.n_inc = m.n_inc;
  b.n_target = static_cast<std::int64_t>(ratio * static_cast<double>(m.dense_params())) + m.n_inc;
  return b;
}

double soft_loss(const ToyModel& m, const Matrix& x, const Matrix& teacher, const std::vector<double>& mu,
                 const BudgetConstraint& b, double rho, double T) {
  const double kl = naive_kl(teacher, forward(m, x, SoftMode{mu, T}));
  return kl + penalty_loss(param_count_soft(mu, b), b, rho);
}

}  // namespace

TEST(Fermi, MidpointIsHalf) {
  for (double mu : {0.0, 3.0, 17.0}) {
    const Vector f = fermi_factors(mu, 64, 0.01, 64);
    EXPECT_EQ(f(static_cast<Index>(mu)), 0.5);
  }
}

TEST(Fermi, ScalarValue) {
  const Vector f = fermi_factors(10.0, 100, 0.01, 100);
  EXPECT_NEAR(f(12), static_cast<double>(fermi_ref(12, 10, 1)), 1e-15);
  EXPECT_NEAR(f(12), 0.11920292202211755, 1e-12);
}

TEST(Fermi, SaturatedLimits) {
  for (Index n : {30, 64, 256}) {
    const double T = 1.0 / static_cast<double>(n);
    const Vector f = fermi_factors(static_cast<double>(n), n, T, n);
    EXPECT_NEAR(f(0), 1.0, 1e-10);
    const Vector g = fermi_factors(-static_cast<double>(n), n, T, n);
    EXPECT_NEAR(g(n - 1), 0.0, 1e-10);
  }
  const Vector extreme = fermi_factors(1e6, 16, 1e-6, 16);
  EXPECT_TRUE(extreme.allFinite());
  EXPECT_EQ(extreme(0), 1.0);
  const Vector low = fermi_factors(-1e6, 16, 1e-6, 16);
  EXPECT_TRUE(low.allFinite());
  EXPECT_EQ(low(15), 0.0);
}

TEST(Fermi, MonotoneInJAndMu) {
  const Index n = 48;
  for (double mu = 0.25; mu < 48; mu += 1.5) {
    const Vector f = fermi_factors(mu, n, 0.01, n);
    const Vector g = fermi_factors(mu + 0.1, n, 0.01, n);
    for (Index j = 0; j < n; ++j) {
      if (j + 1 < n) EXPECT_GE(f(j), f(j + 1));
      EXPECT_GE(g(j), f(j));
      EXPECT_GE(f(j), 0.0);
      EXPECT_LE(f(j), 1.0);
    }
  }
}

TEST(Fermi, MatchesHighPrecisionReference) {
  const Index n = 40;
  for (double T : {0.01, 0.05}) {
    for (double mu : {1.3, 20.0, 39.9}) {
      const Vector f = fermi_factors(mu, n, T, n);
      for (Index j = 0; j < n; ++j) {
        EXPECT_NEAR(f(j), static_cast<double>(fermi_ref(j, mu, n * T)), 1e-15);
      }
    }
  }
}

TEST(ModeFactors, CentredSlots) {
  const Index n = 64;
  const Vector f = mode_factors(10.0, n, 1e-4);
  for (Index j = 0; j < 10; ++j) EXPECT_NEAR(f(j), 1.0, 1e-12);
  for (Index j = 10; j < n; ++j) EXPECT_NEAR(f(j), 0.0, 1e-12);
  for (double mu : {12.3, 30.0, 41.7}) {
    EXPECT_NEAR(mode_factors(mu, n, 0.01).sum(), mu, 1e-3);
  }
}

TEST(SoftTruncate, SaturatedAboveIsFullProduct) {
  std::mt19937_64 gen(1);
  const LowRankFactors f{random_matrix(gen, 10, 8), random_matrix(gen, 8, 8)};
  const Matrix ab = f.product();
  EXPECT_LE((soft_truncate_effective(f, 1e4, {0.01, 1}) - ab).norm(), 1e-10 * ab.norm());
}

TEST(SoftTruncate, IntegerMuMatchesHardTruncation) {
  std::mt19937_64 gen(2);
  const LowRankFactors f{random_matrix(gen, 12, 10), random_matrix(gen, 10, 10)};
  const Matrix ab = f.product();
  for (Index r = 1; r < 10; ++r) {
    const Matrix soft = soft_truncate_effective(f, static_cast<double>(r), {1e-5, 1});
    EXPECT_LE((soft - f.truncated(r).product()).norm(), 1e-6 * ab.norm());
  }
}

TEST(SoftTruncate, NegativeMuVanishes) {
  std::mt19937_64 gen(3);
  const LowRankFactors f{random_matrix(gen, 6, 6), random_matrix(gen, 6, 6)};
  EXPECT_LE(soft_truncate_effective(f, -5.0, {0.01, 1}).norm(), 1e-6 * f.product().norm());
}

TEST(SoftTruncate, RequiresFullRank) {
  std::mt19937_64 gen(4);
  const LowRankFactors f{random_matrix(gen, 6, 3), random_matrix(gen, 3, 6)};
  try {
    soft_truncate_effective(f, 2.0, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(ParamCountSoft, Examples) {
  BudgetConstraint lin = two_big_layers(1, CountMode::Linear);
  EXPECT_DOUBLE_EQ(param_count_soft({1024, 1024}, lin), 4194304.0);
  BudgetConstraint par = two_big_layers(1, CountMode::Parabolic);
  EXPECT_DOUBLE_EQ(param_count_soft({1024, 1024}, par), 2097152.0);
}

TEST(ParamCountSoft, IntegerMuMatchesDiscreteCount) {
  BudgetConstraint b;
  b.shapes = {{64, 48}, {32, 64}, {16, 32}};
  b.n_inc = 1234;
  b.n_target = 100000;
  for (CountMode mode : {CountMode::Linear, CountMode::Parabolic}) {
    b.mode = mode;
    for (Index r : {1, 8, 16}) {
      std::int64_t discrete = b.n_inc;
      for (const auto& [m, n] : b.shapes) discrete += param_count(m, n, r, mode).decomposed;
      const double rr = static_cast<double>(r);
      EXPECT_EQ(param_count_soft({rr, rr, rr}, b), static_cast<double>(discrete));
      EXPECT_EQ(b.count({r, r, r}), discrete);
    }
  }
}

TEST(Penalty, Examples) {
  BudgetConstraint b = two_big_layers(2'000'000, CountMode::Linear);
  EXPECT_EQ(penalty_loss(2'000'000, b, 5.0), 0.0);
  // rho (dN)^2 / (2 N_scale) with dN = 1e6, N_scale = 1e9.
  EXPECT_DOUBLE_EQ(penalty_loss(3'000'000, b, 1.0), 500.0);
  EXPECT_DOUBLE_EQ(penalty_loss(1'000'000, b, 1.0), 500.0);
  b.n_scale = 1e12;
  EXPECT_DOUBLE_EQ(penalty_loss(3'000'000, b, 1.0), 0.5);
}

TEST(Penalty, NonDecreasingInRho) {
  BudgetConstraint b = two_big_layers(1'000'000, CountMode::Linear);
  double prev = 0.0;
  for (double rho = 0.0; rho < 100.0; rho += 3.7) {
    const double v = penalty_loss(1'234'567, b, rho);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(Rho, ScheduleValues) {
  RhoSchedule s;
  EXPECT_EQ(rho_schedule(0, s), 1.0);
  EXPECT_EQ(rho_schedule(100000, s), 2000.0);
  s.alpha = 1.05;
  EXPECT_NEAR(rho_schedule(10, s), 1.62889462677744, 1e-12);
}

TEST(Rho, MonotoneAndCapped) {
  for (double alpha : {1.01, 1.02, 1.05}) {
    RhoSchedule s;
    s.alpha = alpha;
    double prev = 0.0;
    for (int t = 0; t < 2000; ++t) {
      const double r = rho_schedule(t, s);
      EXPECT_GE(r, prev);
      EXPECT_LE(r, s.rho_max);
      prev = r;
    }
  }
}

TEST(Kl, Identical) {
  std::mt19937_64 gen(5);
  const Matrix l = random_matrix(gen, 4, 7);
  EXPECT_EQ(kl_divergence(l, l), 0.0);
}

TEST(Kl, DeltaAgainstUniform) {
  Matrix p(1, 2), q = Matrix::Zero(1, 2);
  p << 40, -40;
  EXPECT_NEAR(kl_divergence(p, q), std::log(2.0), 1e-9);
}

TEST(Kl, MeanOverSamplesAndOracle) {
  std::mt19937_64 gen(6);
  const Matrix p = random_matrix(gen, 2, 5), q = random_matrix(gen, 2, 5);
  const double both = kl_divergence(p, q);
  const double a = kl_divergence(p.topRows(1), q.topRows(1)), b = kl_divergence(p.bottomRows(1), q.bottomRows(1));
  EXPECT_NEAR(both, 0.5 * (a + b), 1e-15);
  EXPECT_NEAR(both, naive_kl(p, q), 1e-13);
  for (int t = 0; t < 20; ++t) {
    const Matrix x = 3.0 * random_matrix(gen, 8, 6), y = 3.0 * random_matrix(gen, 8, 6);
    const double v = kl_divergence(x, y);
    EXPECT_GE(v, 0.0);
    EXPECT_NEAR(v, naive_kl(x, y), 1e-12 * std::max(1.0, v));
  }
}

TEST(Kl, ShapeMismatch) {
  EXPECT_THROW(kl_divergence(Matrix::Zero(2, 3), Matrix::Zero(3, 3)), Error);
}

class GradMu : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    model_ = new ToyModel(calibrated_teacher(three_layer_spec(), 512, Seed{5}));
    x_ = new Matrix(gen_calibration(model_->spec, 48, Seed{6}));
  }
  static void TearDownTestSuite() {
    delete model_;
    delete x_;
  }
  static ToyModel* model_;
  static Matrix* x_;
};
ToyModel* GradMu::model_ = nullptr;
Matrix* GradMu::x_ = nullptr;

TEST_F(GradMu, ZeroAtTeacher) {
  const Matrix teacher = forward(*model_, *x_, DenseMode{});
  const MuVector mu = MuVector::at_caps(model_->caps());
  BudgetConstraint b = budget_for(*model_, 0.6);
  const LossGradient g = grad_mu(*model_, teacher, *x_, mu, b, 0.0, {1e-4, 1});
  EXPECT_LE(g.grad.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(g.kl, 1e-12);
}

TEST_F(GradMu, PenaltyTermClosedForm) {
  const Matrix teacher = forward(*model_, *x_, DenseMode{});
  MuVector mu = MuVector::at_caps(model_->caps());
  mu.mu = {7.3, 9.1, 5.6};
  for (CountMode mode : {CountMode::Linear, CountMode::Parabolic}) {
    BudgetConstraint b = budget_for(*model_, 0.5);
    b.mode = mode;
    b.n_scale = 1e3;
    const double rho = 3.0;
    const LossGradient g0 = grad_mu(*model_, teacher, *x_, mu, b, 0.0, {});
    const LossGradient g1 = grad_mu(*model_, teacher, *x_, mu, b, rho, {});
    const double dn = param_count_soft(mu.mu, b) - static_cast<double>(b.n_target);
    const auto a = b.a();
    for (std::size_t l = 0; l < 3; ++l) {
      const double expect = rho * dn * (a[l] - (mode == CountMode::Parabolic ? 2.0 * mu.mu[l] : 0.0)) / b.n_scale;
      EXPECT_NEAR(g1.grad(l) - g0.grad(l), expect, 1e-12 * std::abs(expect));
    }
    EXPECT_NEAR(g1.penalty, penalty_loss(param_count_soft(mu.mu, b), b, rho), 1e-12 * g1.penalty);
  }
}

TEST_F(GradMu, MatchesCentralDifferences) {
  const Matrix teacher = forward(*model_, *x_, DenseMode{});
  const double h = 1e-3;
  const std::vector<std::vector<double>> points = {{5.3, 7.7, 4.4}, {9.8, 3.2, 6.5}, {2.6, 11.4, 7.9}};
  for (CountMode mode : {CountMode::Linear, CountMode::Parabolic}) {
    for (double T : {0.01, 0.05}) {
      for (const auto& p : points) {
        MuVector mu = MuVector::at_caps(model_->caps());
        mu.mu = p;
        BudgetConstraint b = budget_for(*model_, 0.5);
        b.mode = mode;
        b.n_scale = 1e5;
        const double rho = 0.5;
        const LossGradient g = grad_mu(*model_, teacher, *x_, mu, b, rho, {T, 1});
        for (std::size_t l = 0; l < 3; ++l) {
          auto up = p, dn = p;
          up[l] += h;
          dn[l] -= h;
          const double fd = (soft_loss(*model_, *x_, teacher, up, b, rho, T) -
                             soft_loss(*model_, *x_, teacher, dn, b, rho, T)) / (2 * h);
          if (std::abs(fd) < 1e-12) {
            EXPECT_NEAR(g.grad(l), fd, 1e-8);
          } else {
            EXPECT_LE(std::abs(g.grad(l) - fd), 1e-4 * std::abs(fd)) << "layer " << l << " T " << T;
          }
        }
      }
    }
  }
}

TEST(Budget, Validation) {
  BudgetConstraint b = two_big_layers(100, CountMode::Linear);
  b.n_inc = 100;
  EXPECT_THROW(b.validate(), Error);
  b.n_inc = 0;
  b.n_scale = 0.0;
  EXPECT_THROW(b.validate(), Error);
}

TEST(Budget, IncrementCost) {
  BudgetConstraint b = two_big_layers(1, CountMode::Parabolic);
  EXPECT_EQ(b.increment_cost(0, 10), b.count({11, 1}) - b.count({10, 1}));
  b.mode = CountMode::Linear;
  EXPECT_EQ(b.increment_cost(1, 10), 2048);
}

TEST(RoundRepair, IntegerUnderBudgetUnchanged) {
  BudgetConstraint b = two_big_layers(2'000'000, CountMode::Linear);
  MuVector mu = MuVector::at_caps(b.caps());
  mu.mu = {300, 400};
  const RankAllocation a = round_and_repair(mu, b, 8);
  EXPECT_EQ(a.ranks, (std::vector<Index>{300, 400}));
  EXPECT_EQ(a.achieved_params, 700 * 2048);
}

TEST(RoundRepair, FillStopsAtCeiling) {
  BudgetConstraint b = two_big_layers(2'000'000, CountMode::Linear);
  MuVector mu = MuVector::at_caps(b.caps());
  mu.mu = {300.4, 400.2};
  const RankAllocation a = round_and_repair(mu, b, 8);
  EXPECT_EQ(a.ranks, (std::vector<Index>{301, 401}));
  EXPECT_EQ(a.achieved_params, 702 * 2048);
}

TEST(RoundRepair, FixtureRounding) {
  BudgetConstraint b = two_big_layers(1'572'864, CountMode::Linear);
  MuVector mu = MuVector::at_caps(b.caps());
  mu.mu = {384.6, 383.4};
  const RankAllocation a = round_and_repair(mu, b, 8);
  EXPECT_EQ(a.ranks, (std::vector<Index>{385, 383}));
  EXPECT_EQ(a.achieved_params, 1'572'864);
}

TEST(RoundRepair, SingleDecrementWhenOverByOneLayer) {
  BudgetConstraint b;
  b.shapes = {{64, 64}, {64, 64}};
  b.n_target = 30 * 128 - 1;
  MuVector mu = MuVector::at_caps({64, 64});
  mu.mu = {20.0, 10.0};
  const RankAllocation a = round_and_repair(mu, b, 1);
  EXPECT_EQ(a.ranks, (std::vector<Index>{19, 10}));
  EXPECT_LE(a.achieved_params, b.n_target);
}

TEST(RoundRepair, ShortfallBelowLargestMarginalCost) {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(8.0, 64.0);
  BudgetConstraint b;
  b.shapes = {{64, 64}, {64, 48}, {48, 32}};
  b.n_target = 9000;
  int at_or_over = 0;
  for (int t = 0; t < 100; ++t) {
    MuVector mu = MuVector::at_caps(b.caps());
    for (std::size_t l = 0; l < 3; ++l) mu.mu[l] = std::min(u(gen), static_cast<double>(mu.caps[l]));
    const RankAllocation a = round_and_repair(mu, b, 8);
    EXPECT_LE(a.achieved_params, b.n_target);
    if (param_count_soft(mu.mu, b) >= static_cast<double>(b.n_target)) {
      ++at_or_over;
      EXPECT_LT(b.n_target - a.achieved_params, 128);
    }
    for (std::size_t l = 0; l < 3; ++l) {
      EXPECT_GE(a.ranks[l], 8);
      EXPECT_LE(a.ranks[l], mu.caps[l]);
      EXPECT_LE(static_cast<double>(a.ranks[l]), std::ceil(mu.mu[l]));
    }
  }
  EXPECT_GT(at_or_over, 50);
}

TEST(RoundRepair, Infeasible) {
  BudgetConstraint b;
  b.shapes = {{16, 16}};
  b.n_target = 100;
  MuVector mu = MuVector::at_caps({16});
  try {
    round_and_repair(mu, b, 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InfeasibleBudget);
  }
}

TEST(Uniform, TwoEqualLayers) {
  const RankAllocation a = uniform_ranks(two_big_layers(1'572'864, CountMode::Linear), 8);
  EXPECT_EQ(a.ranks, (std::vector<Index>{384, 384}));
  EXPECT_EQ(a.achieved_params, 1'572'864);
}

TEST(Uniform, SingleLayerTakesMaxFittingRank) {
  BudgetConstraint b;
  b.shapes = {{100, 60}};
  b.n_target = 5000;
  const RankAllocation a = uniform_ranks(b, 1);
  EXPECT_EQ(a.ranks, (std::vector<Index>{31}));  // 31 * 160 = 4960
}

TEST(Uniform, HeterogeneousSharesRatioThenFills) {
  BudgetConstraint b;
  b.shapes = {{64, 64}, {96, 64}, {32, 96}};
  b.n_target = 12000;
  const RankAllocation a = uniform_ranks(b, 1);
  // Brute-force the largest shared ratio over a fine grid as the oracle.
  double best_kappa = 0.0;
  for (int k = 1; k <= 100000; ++k) {
    const double kappa = k / 100000.0;
    std::vector<Index> r;
    for (auto c : b.caps()) r.push_back(std::max<Index>(1, static_cast<Index>(std::floor(kappa * c))));
    if (b.count(r) <= b.n_target) best_kappa = kappa;
  }
  const auto caps = b.caps();
  for (std::size_t l = 0; l < caps.size(); ++l) {
    EXPECT_GE(a.ranks[l], static_cast<Index>(std::floor(best_kappa * caps[l])));
  }
  EXPECT_LE(a.achieved_params, b.n_target);
  for (std::size_t l = 0; l < caps.size(); ++l) {
    if (a.ranks[l] < caps[l]) EXPECT_GT(a.achieved_params + b.increment_cost(l, a.ranks[l]), b.n_target);
  }
}

TEST(Optimize, FullSizeParabolicBudgetStaysAtCaps) {
  const ToyModel m = calibrated_teacher(three_layer_spec(), 256, Seed{3});
  BudgetConstraint b;
  b.shapes = m.shapes();
  b.n_inc = m.n_inc;
  b.mode = CountMode::Parabolic;
  b.n_target = m.dense_params() + m.n_inc;
  const Matrix x = gen_calibration(m.spec, 128, Seed{4});
  OptimizerConfig opt;
  opt.max_iters = 50;
  const OptimizationResult r = optimize_ranks(m, x, b, {0.01, 1}, {}, opt);
  EXPECT_EQ(r.allocation.ranks, m.caps());
  for (std::size_t l = 0; l < 3; ++l) EXPECT_NEAR(r.final_mu.mu[l], m.caps()[l], 1e-12);
}

TEST(Optimize, InfeasibleBudget) {
  const ToyModel m = calibrated_teacher(three_layer_spec(), 256, Seed{3});
  BudgetConstraint b = budget_for(m, 0.01);
  const Matrix x = gen_calibration(m.spec, 64, Seed{4});
  try {
    optimize_ranks(m, x, b, {0.01, 8}, {}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InfeasibleBudget);
  }
}

TEST(Optimize, BoxInvariantAndDeterminism) {
  const ToyModel m = calibrated_teacher(three_layer_spec(), 256, Seed{3});
  BudgetConstraint b = budget_for(m, 0.5);
  const Matrix x = gen_calibration(m.spec, 256, Seed{4});
  OptimizerConfig opt;
  opt.max_iters = 120;
  opt.step_size = 2.0;
  b.n_scale = suggest_penalty_scale(b, opt.step_size, 2000.0);
  const FermiConfig fc{0.01, 2};
  const OptimizationResult r1 = optimize_ranks(m, x, b, fc, {}, opt);
  const OptimizationResult r2 = optimize_ranks(m, x, b, fc, {}, opt);
  ASSERT_EQ(r1.trajectory.size(), r2.trajectory.size());
  const auto caps = m.caps();
  for (std::size_t t = 0; t < r1.trajectory.size(); ++t) {
    EXPECT_TRUE(r1.trajectory[t].mu == r2.trajectory[t].mu);
    EXPECT_EQ(r1.trajectory[t].kl, r2.trajectory[t].kl);
    for (std::size_t l = 0; l < caps.size(); ++l) {
      EXPECT_GE(r1.trajectory[t].mu[l], 2.0);
      EXPECT_LE(r1.trajectory[t].mu[l], static_cast<double>(caps[l]));
    }
  }
  EXPECT_EQ(r1.trajectory.front().rho, 1.0);
  EXPECT_LE(r1.allocation.achieved_params, b.n_target);
}

TEST(Optimize, NoWorseThanUniformOnPlantedTeacher) {
  const ToyModel m = calibrated_teacher(ToyModelSpec::desk_default(Seed{1}), 4096, Seed{11});
  BudgetConstraint b = budget_for(m, 0.6);
  OptimizerConfig opt;
  opt.step_size = 20.0;
  opt.max_iters = 1000;
  b.n_scale = suggest_penalty_scale(b, opt.step_size, 2000.0);
  const Matrix train = gen_calibration(m.spec, 1024, Seed{12});
  const Matrix eval = gen_calibration(m.spec, 2048, Seed{13});
  const OptimizationResult r = optimize_ranks(m, train, b, {}, {}, opt);
  const double kl_f = evaluate_allocation(m, eval, r.allocation.ranks).kl;
  const double kl_u = evaluate_allocation(m, eval, uniform_ranks(b, 8).ranks).kl;
  EXPECT_LE(kl_f, kl_u);
}
