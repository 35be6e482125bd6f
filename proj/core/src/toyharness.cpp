// SPDX-License-Identifier: Apache-2.0
#include "lrc/toyharness.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <type_traits>

namespace lrc {
namespace {

constexpr std::uint64_t kInputStream = 0x494e50;  // "INP"
constexpr std::uint64_t kHeadStream = 0x484541;   // "HEA"
constexpr std::uint64_t kLayerStream = 0x4c4159;  // "LAY"

const LowRankFactors& factors_of(const ToyModel& model, std::size_t l) {
  const auto& f = model.layers[l].factors;
  if (!f) throw Error(ErrorCode::InvalidArgument, "model layer has no data-aware factors; calibrate first");
  return *f;
}

void check_ranks(const ToyModel& model, const std::vector<Index>& ranks) {
  if (ranks.size() != model.layers.size()) throw_dimension_mismatch("ranks", static_cast<Index>(model.layers.size()), static_cast<Index>(ranks.size()));
  for (std::size_t l = 0; l < ranks.size(); ++l) {
    if (ranks[l] < 1 || ranks[l] > model.layers[l].cap()) {
      throw Error(ErrorCode::InvalidArgument, "rank for layer " + std::to_string(l) + " out of range");
    }
  }
}

}  // namespace

ToyModel build_teacher(const ToyModelSpec& spec) {
  spec.validate();
  ToyModel model;
  model.spec = spec;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto [m, n] = spec.layer_shapes[l];
    const Index cap = std::min(m, n);
    Rng rng(derive_seed(spec.seed, kLayerStream + l));
    const Matrix U = rng.orthonormal(m, cap);
    const Matrix V = rng.orthonormal(n, cap);
    const auto planted = static_cast<double>(spec.planted_ranks[l]);
    Vector s(cap);
    for (Index j = 0; j < spec.planted_ranks[l]; ++j) {
      s(j) = std::exp(-spec.spectrum_decay[l] * static_cast<double>(j) / planted);
    }
    // Gain s_0 keeps E||W h||^2 = ||h||^2 for isotropic h so activations
    // neither vanish nor blow up through the stack.
    const double gain = std::sqrt(static_cast<double>(n) / s.head(spec.planted_ranks[l]).squaredNorm());
    s.head(spec.planted_ranks[l]) *= gain;
    s.tail(cap - spec.planted_ranks[l]).setConstant(spec.noise_floor * gain);
    model.layers.push_back({U * s.asDiagonal() * V.transpose(), std::nullopt});
  }
  const Index last = spec.layer_shapes.back().first;
  Rng head_rng(derive_seed(spec.seed, kHeadStream));
  model.head = head_rng.gaussian(spec.output_dim, last) * (kHeadGain / std::sqrt(static_cast<double>(last)));
  model.n_inc = static_cast<std::int64_t>(spec.output_dim) * last;
  return model;
}

Matrix gen_calibration(const ToyModelSpec& spec, Index n_samples, Seed seed) {
  spec.validate();
  if (n_samples < 1) throw Error(ErrorCode::InvalidArgument, "gen_calibration: n_samples must be positive");
  const Index n0 = spec.input_dim();
  Rng orient(derive_seed(spec.seed, kInputStream));
  const Matrix Q = orient.orthonormal(n0, n0);
  Vector scale(n0);
  for (Index i = 0; i < n0; ++i) {
    const double frac = n0 > 1 ? static_cast<double>(i) / static_cast<double>(n0 - 1) : 0.0;
    scale(i) = std::sqrt(std::pow(kInputConditionNumber, -frac));
  }
  Rng rng(seed);
  const Matrix g = rng.gaussian(n0, n_samples);
  return Q * (scale.asDiagonal() * g);
}

std::vector<CalibState> collect_calibration(const ToyModel& model, const Matrix& x) {
  if (x.rows() != model.spec.input_dim()) throw_dimension_mismatch("collect_calibration: input rows", model.spec.input_dim(), x.rows());
  const auto inputs = layer_inputs(model.weights(), model.spec.nonlinearity, model.spec.residual, x);
  std::vector<CalibState> out;
  out.reserve(inputs.size());
  for (const auto& h : inputs) out.push_back(accumulate_calibration(CalibState::empty(h.rows()), h));
  return out;
}

void attach_factors(ToyModel& model, const std::vector<CalibState>& calib, const JitterPolicy& jitter) {
  if (calib.size() != model.layers.size()) throw_dimension_mismatch("attach_factors: layers", static_cast<Index>(model.layers.size()), static_cast<Index>(calib.size()));
  for (std::size_t l = 0; l < calib.size(); ++l) {
    auto& layer = model.layers[l];
    const CholeskyResult whitening = cholesky_whiten(calib[l].C, jitter);
    layer.factors = data_aware_svd(layer.weight, whitening.factor, layer.cap());
  }
}

ToyModel calibrated_teacher(const ToyModelSpec& spec, Index calib_samples, Seed calib_seed) {
  ToyModel model = build_teacher(spec);
  const Matrix x = gen_calibration(spec, calib_samples, calib_seed);
  attach_factors(model, collect_calibration(model, x));
  return model;
}

Network build_network(const ToyModel& model, const ForwardMode& mode) {
  Network net;
  net.head = model.head;
  net.act = model.spec.nonlinearity;
  net.residual = model.spec.residual;
  const std::size_t L = model.layers.size();

  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, DenseMode>) {
          for (const auto& layer : model.layers) net.layers.emplace_back(layer.weight);
        } else if constexpr (std::is_same_v<T, SoftMode>) {
          if (m.mu.size() != L) throw_dimension_mismatch("soft mode: mu entries", static_cast<Index>(L), static_cast<Index>(m.mu.size()));
          for (std::size_t l = 0; l < L; ++l) {
            const auto& f = factors_of(model, l);
            const Index cap = model.layers[l].cap();
            const Vector F = mode_factors(m.mu[l], cap, m.temperature);
            net.layers.emplace_back(LowRankFactors{f.A * F.asDiagonal(), f.B});
          }
        } else if constexpr (std::is_same_v<T, HardMode>) {
          check_ranks(model, m.ranks);
          for (std::size_t l = 0; l < L; ++l) net.layers.emplace_back(factors_of(model, l).truncated(m.ranks[l]));
        } else {
          check_ranks(model, m.ranks);
          for (std::size_t l = 0; l < L; ++l) {
            net.layers.emplace_back(pivga_factorize(factors_of(model, l).truncated(m.ranks[l])));
          }
        }
      },
      mode);
  return net;
}

Matrix forward(const ToyModel& model, const Matrix& x, const ForwardMode& mode) {
  if (x.rows() != model.spec.input_dim()) throw_dimension_mismatch("forward: input width", model.spec.input_dim(), x.rows());
  return network_logits(build_network(model, mode), x);
}

AllocationReport evaluate_allocation(const ToyModel& model, const Matrix& data,
                                     const std::vector<Index>& ranks, CountMode mode) {
  check_ranks(model, ranks);
  AllocationReport report;
  report.ranks = ranks;
  report.kl = kl_divergence(forward(model, data, DenseMode{}), forward(model, data, HardMode{ranks}));
  report.achieved_params = model.n_inc;
  for (std::size_t l = 0; l < ranks.size(); ++l) {
    const auto& layer = model.layers[l];
    report.achieved_params += param_count(layer.rows(), layer.cols(), ranks[l], mode).decomposed;
    report.residuals.push_back((layer.weight - factors_of(model, l).truncated(ranks[l]).product()).norm());
  }
  return report;
}

BruteForceResult brute_force_rank_search(const ToyModel& model, const Matrix& data,
                                         const BudgetConstraint& budget, Index grid_step,
                                         Index r_min) {
  budget.validate();
  if (grid_step < 1) throw Error(ErrorCode::InvalidArgument, "brute_force_rank_search: grid_step must be positive");
  if (r_min < 1) throw Error(ErrorCode::InvalidArgument, "brute_force_rank_search: r_min must be positive");
  if (budget.shapes != model.shapes()) throw Error(ErrorCode::InvalidArgument, "brute_force_rank_search: budget shapes do not match the model");

  const std::size_t L = model.layers.size();
  std::vector<std::vector<Index>> grids(L);
  std::uint64_t points = 1;
  for (std::size_t l = 0; l < L; ++l) {
    const Index cap = model.layers[l].cap();
    for (Index r = std::min(r_min, cap); r < cap; r += grid_step) grids[l].push_back(r);
    grids[l].push_back(cap);
    points *= grids[l].size();
    if (points > kMaxSearchPoints) {
      throw Error(ErrorCode::SearchSpaceTooLarge, "brute_force_rank_search: grid exceeds " + std::to_string(kMaxSearchPoints) + " points");
    }
  }

  const Matrix teacher = forward(model, data, DenseMode{});
  BruteForceResult out;
  double best_kl = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> idx(L, 0);
  std::vector<Index> ranks(L);
  for (;;) {
    for (std::size_t l = 0; l < L; ++l) ranks[l] = grids[l][idx[l]];
    const std::int64_t count = budget.count(ranks);
    if (count <= budget.n_target) {
      const double kl = kl_divergence(teacher, forward(model, data, HardMode{ranks}));
      out.evaluated.emplace_back(ranks, kl);
      if (kl < best_kl) {
        best_kl = kl;
        out.allocation = {ranks, count, budget.n_target};
      }
    }
    bool done = true;
    for (std::size_t d = L; d-- > 0;) {
      if (++idx[d] < grids[d].size()) {
        done = false;
        break;
      }
      idx[d] = 0;
    }
    if (done) break;
  }
  if (out.evaluated.empty()) throw Error(ErrorCode::InfeasibleBudget, "brute_force_rank_search: no grid point fits the budget");
  out.kl = best_kl;
  return out;
}

}  // namespace lrc
