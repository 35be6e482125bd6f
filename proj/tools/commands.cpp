// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "lrc/io.hpp"
#include "lrc/pivga.hpp"
#include "lrc/toyharness.hpp"

namespace lrc::cli {

using nlohmann::json;

namespace {

constexpr ErrorCode kAllCodes[] = {
    ErrorCode::InvalidArgument, ErrorCode::DimensionMismatch, ErrorCode::ConvergenceFailure,
    ErrorCode::NotSymmetric,    ErrorCode::NotPositiveDefinite, ErrorCode::RankDeficient,
    ErrorCode::SingularMatrix,  ErrorCode::IllConditioned,    ErrorCode::NonFiniteGradient,
    ErrorCode::InfeasibleBudget, ErrorCode::SearchSpaceTooLarge, ErrorCode::Io,
    ErrorCode::Parse,
};

// Train and eval inputs never share a stream with calibration draws.
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kEvalStream = 2;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string mode_name(CountMode mode) { return mode == CountMode::Linear ? "linear" : "parabolic"; }

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create '" + p.parent_path().string() + "': " + ec.message());
  }
}

void write_json(const fs::path& path, const json& j) {
  ensure_parent(path);
  io::write_text(path, j.dump(2) + "\n");
}

Matrix eval_inputs(const ToyModel& model, Index samples, std::uint64_t seed) {
  return gen_calibration(model.spec, samples, derive_seed(Seed{seed}, kEvalStream));
}

std::int64_t resolve_target(const ToyModel& model, std::optional<std::int64_t> params,
                            std::optional<double> ratio) {
  if (params && ratio) throw Error(ErrorCode::InvalidArgument, "give either a target parameter count or a target ratio, not both");
  if (params) return *params;
  if (ratio) {
    if (!(*ratio > 0.0 && *ratio <= 1.0)) throw Error(ErrorCode::InvalidArgument, "target ratio must lie in (0, 1]");
    return static_cast<std::int64_t>(std::floor(*ratio * static_cast<double>(model.dense_params()))) + model.n_inc;
  }
  throw Error(ErrorCode::InvalidArgument, "a target parameter count or ratio is required");
}

BudgetConstraint make_budget(const ToyModel& model, std::int64_t target, CountMode mode) {
  BudgetConstraint b;
  b.shapes = model.shapes();
  b.n_target = target;
  b.n_inc = model.n_inc;
  b.mode = mode;
  return b;
}

json allocation_json(const std::string& name, const AllocationReport& r, std::int64_t target) {
  return {{"name", name},
          {"ranks", r.ranks},
          {"achieved_params", r.achieved_params},
          {"target_params", target},
          {"within_budget", r.achieved_params <= target},
          {"kl", r.kl},
          {"residuals", r.residuals}};
}

}  // namespace

int exit_code_for(ErrorCode code) { return 10 + static_cast<int>(code); }

std::string exit_code_table() {
  std::ostringstream os;
  os << "Exit codes:\n"
     << "  " << kExitOk << "  success\n"
     << "  " << kExitInternal << "  unexpected internal error\n"
     << "  " << kExitUsage << "  invalid command line\n";
  for (ErrorCode c : kAllCodes) os << "  " << exit_code_for(c) << " " << to_string(c) << "\n";
  return os.str();
}

std::string error_json(ErrorCode code, const std::string& message) {
  const json j = {{"error",
                   {{"code", std::string(to_string(code))},
                    {"message", message},
                    {"exit_code", exit_code_for(code)}}}};
  return j.dump();
}

CountMode parse_count_mode(const std::string& name) {
  if (name == "linear") return CountMode::Linear;
  if (name == "parabolic") return CountMode::Parabolic;
  throw Error(ErrorCode::InvalidArgument, "unknown count mode '" + name + "' (linear|parabolic)");
}

ToyModel load_calibrated(const fs::path& model_dir, const fs::path& calib_file) {
  ToyModel model = io::model_from_package(io::read_package(model_dir));
  const Matrix stacked = io::read_matrix(calib_file);
  attach_factors(model, io::unstack_calibration(stacked, model.shapes()));
  return model;
}

std::string trajectory_csv(const std::vector<TrajectoryPoint>& trajectory) {
  std::string out = "iter";
  const std::size_t L = trajectory.empty() ? 0 : trajectory.front().mu.size();
  for (std::size_t l = 0; l < L; ++l) out += ",mu_" + std::to_string(l);
  out += ",rho,kl,n_param\n";
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += ',';
    out += buf;
  };
  for (const auto& p : trajectory) {
    out += std::to_string(p.iter);
    for (double m : p.mu) num(m);
    num(p.rho);
    num(p.kl);
    num(p.n_param);
    out += '\n';
  }
  return out;
}

void cmd_gen_teacher(const GenTeacherOptions& o) {
  const ToyModelSpec spec = io::parse_model_spec(io::read_text(o.spec_file));
  io::write_package(o.out_dir, io::package_from_model(build_teacher(spec)));
}

void cmd_calibrate(const CalibrateOptions& o) {
  if (o.samples < 1) throw Error(ErrorCode::InvalidArgument, "calibrate: samples must be positive");
  const ToyModel model = io::model_from_package(io::read_package(o.model_dir));
  const Matrix x = gen_calibration(model.spec, o.samples, Seed{o.seed});
  ensure_parent(o.out_file);
  io::write_matrix(o.out_file, io::stack_calibration(collect_calibration(model, x)));
}

void cmd_compress(const CompressOptions& o) {
  const Stopwatch clock;
  if (o.ranks_file.has_value() == o.uniform_ratio.has_value()) {
    throw Error(ErrorCode::InvalidArgument, "compress: give exactly one of a ranks file or a uniform ratio");
  }
  const ToyModel model = load_calibrated(o.model_dir, o.calib_file);
  const std::size_t L = model.layers.size();

  std::vector<Index> ranks;
  std::int64_t target = 0;
  if (o.ranks_file) {
    const io::RanksFile rf = io::read_ranks(*o.ranks_file);
    ranks = rf.ranks;
    target = rf.target_params;
  } else {
    const double kappa = *o.uniform_ratio;
    if (!(kappa > 0.0 && kappa <= 1.0)) throw Error(ErrorCode::InvalidArgument, "compress: uniform ratio must lie in (0, 1]");
    for (const auto& layer : model.layers) {
      ranks.push_back(std::max<Index>(1, static_cast<Index>(std::floor(kappa * static_cast<double>(layer.cap())))));
    }
  }
  if (ranks.size() != L) throw_dimension_mismatch("compress: rank count", static_cast<Index>(L), static_cast<Index>(ranks.size()));

  Network net = build_network(model, HardMode{ranks});
  std::vector<std::string> reps;
  std::int64_t achieved = model.n_inc;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& lr = std::get<LowRankFactors>(net.layers[l]);
    CountMode counted = CountMode::Linear;
    if (o.pivga) {
      try {
        net.layers[l] = pivga_factorize(lr);
        counted = CountMode::Parabolic;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::IllConditioned) throw;
      }
    }
    reps.push_back(io::representation_name(net.layers[l]));
    achieved += param_count(model.layers[l].rows(), model.layers[l].cols(), ranks[l], counted).decomposed;
  }

  io::ModelPackage pkg{model.spec, model.n_inc, net};
  io::write_package(o.out_dir, pkg);

  const Matrix x = eval_inputs(model, o.eval_samples, o.seed);
  const double kl = kl_divergence(network_logits(model.dense_network(), x), network_logits(net, x));
  std::vector<double> residuals;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& rep = net.layers[l];
    const Matrix w = std::holds_alternative<PivGaFactors>(rep) ? std::get<PivGaFactors>(rep).reconstruct()
                                                               : std::get<LowRankFactors>(rep).product();
    residuals.push_back((model.layers[l].weight - w).norm());
  }

  json config = {{"model_dir", o.model_dir.string()},
                 {"calib_file", o.calib_file.string()},
                 {"pivga", o.pivga},
                 {"eval_samples", o.eval_samples},
                 {"seed", o.seed}};
  if (o.ranks_file) config["ranks_file"] = o.ranks_file->string();
  if (o.uniform_ratio) config["uniform_ratio"] = *o.uniform_ratio;
  const json report = {{"command", "compress"},
                       {"config", config},
                       {"ranks", ranks},
                       {"representations", reps},
                       {"target_params", target},
                       {"achieved_params", achieved},
                       {"kl", kl},
                       {"residuals", residuals},
                       {"wall_time_s", clock.seconds()}};
  write_json(o.out_dir / "report.json", report);
}

void cmd_fermigrad(const FermiGradOptions& o) {
  const Stopwatch clock;
  o.fermi.validate();
  o.rho.validate();
  o.opt.validate();
  if (o.rho.alpha < 1.01 || o.rho.alpha > 1.05) throw Error(ErrorCode::InvalidArgument, "alpha must lie in [1.01, 1.05]");

  const ToyModel model = load_calibrated(o.model_dir, o.calib_file);
  BudgetConstraint budget = make_budget(model, resolve_target(model, o.target_params, o.target_ratio), o.mode);
  budget.n_scale = o.n_scale ? *o.n_scale : suggest_penalty_scale(budget, o.opt.step_size, o.rho.rho_max);
  if (!(budget.n_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "n_scale must be positive");

  const Matrix train = gen_calibration(model.spec, o.train_samples, derive_seed(Seed{o.seed}, kTrainStream));
  const OptimizationResult res = optimize_ranks(model, train, budget, o.fermi, o.rho, o.opt);

  const Matrix x = eval_inputs(model, o.eval_samples, o.seed);
  const AllocationReport eval = evaluate_allocation(model, x, res.allocation.ranks, o.mode);

  ensure_parent(o.out_ranks);
  io::write_ranks(o.out_ranks, {res.allocation.ranks, res.allocation.target_params, res.allocation.achieved_params});
  ensure_parent(o.out_trajectory);
  io::write_text(o.out_trajectory, trajectory_csv(res.trajectory));

  const TrajectoryPoint& last = res.trajectory.back();
  const json config = {{"model_dir", o.model_dir.string()},
                       {"calib_file", o.calib_file.string()},
                       {"mode", mode_name(o.mode)},
                       {"temperature", o.fermi.temperature},
                       {"r_min", o.fermi.r_min},
                       {"rho0", o.rho.rho0},
                       {"alpha", o.rho.alpha},
                       {"rho_max", o.rho.rho_max},
                       {"n_scale", budget.n_scale},
                       {"step", o.opt.step_size},
                       {"iters", o.opt.max_iters},
                       {"mu_tol", o.opt.mu_tol},
                       {"constraint_tol", o.opt.constraint_tol},
                       {"batch_size", o.opt.batch_size},
                       {"train_samples", o.train_samples},
                       {"eval_samples", o.eval_samples},
                       {"seed", o.seed}};
  const json report = {{"command", "fermigrad"},
                       {"config", config},
                       {"trajectory_csv", o.out_trajectory.string()},
                       {"iterations", res.iterations},
                       {"converged", res.converged},
                       {"final_mu", last.mu},
                       {"final_rho", last.rho},
                       {"final_soft_kl", last.kl},
                       {"final_soft_params", last.n_param},
                       {"ranks", res.allocation.ranks},
                       {"target_params", res.allocation.target_params},
                       {"achieved_params", res.allocation.achieved_params},
                       {"kl", eval.kl},
                       {"residuals", eval.residuals},
                       {"wall_time_s", clock.seconds()}};
  write_json(o.out_report, report);
}

void cmd_compare(const CompareOptions& o) {
  const Stopwatch clock;
  const ToyModel model = load_calibrated(o.model_dir, o.calib_file);
  const Matrix x = eval_inputs(model, o.eval_samples, o.seed);

  std::vector<std::pair<std::string, std::vector<Index>>> named;
  std::optional<std::int64_t> target = o.target_params;
  for (const auto& path : o.ranks_files) {
    const io::RanksFile rf = io::read_ranks(path);
    if (!target && rf.target_params > 0) target = rf.target_params;
    named.emplace_back(path.stem().string(), rf.ranks);
  }
  if (!target) throw Error(ErrorCode::InvalidArgument, "compare: no target parameter count given or found in a ranks file");
  const BudgetConstraint budget = make_budget(model, *target, o.mode);

  json rows = json::array();
  for (const auto& [name, ranks] : named) {
    rows.push_back(allocation_json(name, evaluate_allocation(model, x, ranks, o.mode), *target));
  }
  const RankAllocation uni = uniform_ranks(budget, o.r_min);
  rows.push_back(allocation_json("uniform", evaluate_allocation(model, x, uni.ranks, o.mode), *target));

  json brute = {{"grid_step", o.grid_step}};
  try {
    const BruteForceResult bf = brute_force_rank_search(model, x, budget, o.grid_step, o.r_min);
    rows.push_back(allocation_json("brute_force", evaluate_allocation(model, x, bf.allocation.ranks, o.mode), *target));
    brute["evaluated"] = bf.evaluated.size();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SearchSpaceTooLarge) throw;
    brute["skipped"] = e.what();
  }

  std::printf("%-24s %12s %12s %14s  ranks\n", "allocation", "params", "target", "kl");
  for (const auto& r : rows) {
    std::string rs;
    for (const auto& v : r["ranks"]) rs += (rs.empty() ? "" : " ") + std::to_string(v.get<Index>());
    std::printf("%-24s %12lld %12lld %14.6e  %s\n", r["name"].get<std::string>().c_str(),
                static_cast<long long>(r["achieved_params"].get<std::int64_t>()),
                static_cast<long long>(*target), r["kl"].get<double>(), rs.c_str());
  }

  const json report = {{"command", "compare"},
                       {"config",
                        {{"model_dir", o.model_dir.string()},
                         {"calib_file", o.calib_file.string()},
                         {"mode", mode_name(o.mode)},
                         {"r_min", o.r_min},
                         {"eval_samples", o.eval_samples},
                         {"seed", o.seed}}},
                       {"target_params", *target},
                       {"brute_force", brute},
                       {"allocations", rows},
                       {"wall_time_s", clock.seconds()}};
  write_json(o.out_report, report);
}

}  // namespace lrc::cli
