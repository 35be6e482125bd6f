// SPDX-License-Identifier: Apache-2.0
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "commands.hpp"

using namespace lrc;
using namespace lrc::cli;

namespace {

int fail(ErrorCode code, const std::string& message) {
  std::cerr << error_json(code, message) << "\n";
  return exit_code_for(code);
}

int usage_error(const std::string& message) {
  const nlohmann::json j = {{"error", {{"code", "Usage"}, {"message", message}, {"exit_code", kExitUsage}}}};
  std::cerr << j.dump() << "\n";
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rank allocation and low-rank compression for layered toy models"};
  app.footer(exit_code_table());
  app.require_subcommand(1);

  GenTeacherOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-teacher", "Build a seeded teacher model package from a JSON spec");
  gen_cmd->add_option("spec", gen.spec_file, "Model spec JSON")->required();
  gen_cmd->add_option("-o,--out", gen.out_dir, "Output package directory")->required();

  CalibrateOptions cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "Accumulate per-layer calibration matrices");
  cal_cmd->add_option("model", cal.model_dir, "Teacher package directory")->required();
  cal_cmd->add_option("-n,--samples", cal.samples, "Number of calibration inputs")->capture_default_str();
  cal_cmd->add_option("--seed", cal.seed, "Input sampling seed")->capture_default_str();
  cal_cmd->add_option("-o,--out", cal.out_file, "Output LRMX file")->required();

  CompressOptions cmp;
  double uniform = 0.0;
  std::string ranks_path;
  auto* cmp_cmd = app.add_subcommand("compress", "Compress a teacher at given ranks");
  cmp_cmd->add_option("model", cmp.model_dir, "Teacher package directory")->required();
  cmp_cmd->add_option("--calib", cmp.calib_file, "Calibration LRMX file")->required();
  auto* ranks_opt = cmp_cmd->add_option("--ranks", ranks_path, "Ranks JSON file");
  auto* uniform_opt = cmp_cmd->add_option("--uniform", uniform, "Shared rank ratio kappa in (0, 1]");
  ranks_opt->excludes(uniform_opt);
  cmp_cmd->add_flag("--pivga", cmp.pivga, "Store gauge-fixed factors (falls back to plain factors when ill-conditioned)");
  cmp_cmd->add_option("--eval-samples", cmp.eval_samples, "Inputs used for the reported KL")->capture_default_str();
  cmp_cmd->add_option("--seed", cmp.seed, "Evaluation seed")->capture_default_str();
  cmp_cmd->add_option("-o,--out", cmp.out_dir, "Output package directory")->required();

  FermiGradOptions fg;
  std::int64_t target_params = 0;
  double target_ratio = 0.0;
  std::string mode = "linear";
  std::string n_scale = "1e9";
  auto* fg_cmd = app.add_subcommand("fermigrad", "Optimize per-layer ranks under a parameter budget");
  fg_cmd->add_option("model", fg.model_dir, "Teacher package directory")->required();
  fg_cmd->add_option("--calib", fg.calib_file, "Calibration LRMX file")->required();
  auto* tp_opt = fg_cmd->add_option("--target-params", target_params, "Total parameter budget, N_inc included");
  auto* tr_opt = fg_cmd->add_option("--target-ratio", target_ratio, "Budget as a fraction of the dense decomposable count");
  tp_opt->excludes(tr_opt);
  fg_cmd->add_option("--mode", mode, "Parameter counting: linear or parabolic")->capture_default_str();
  fg_cmd->add_option("-T,--temperature", fg.fermi.temperature, "Fermi temperature")->capture_default_str();
  fg_cmd->add_option("--r-min", fg.fermi.r_min, "Lower rank bound")->capture_default_str();
  fg_cmd->add_option("--rho0", fg.rho.rho0, "Initial penalty weight")->capture_default_str();
  fg_cmd->add_option("--alpha", fg.rho.alpha, "Penalty growth factor, 1.01 to 1.05")->capture_default_str();
  fg_cmd->add_option("--rho-max", fg.rho.rho_max, "Penalty weight cap")->capture_default_str();
  fg_cmd->add_option("--n-scale", n_scale, "Penalty normalisation, or 'auto'")->capture_default_str();
  fg_cmd->add_option("--step", fg.opt.step_size, "Gradient step in rank units")->capture_default_str();
  fg_cmd->add_option("--iters", fg.opt.max_iters, "Iteration limit")->capture_default_str();
  fg_cmd->add_option("--batch-size", fg.opt.batch_size, "Inputs per gradient step")->capture_default_str();
  fg_cmd->add_option("--train-samples", fg.train_samples, "Size of the cycled training set")->capture_default_str();
  fg_cmd->add_option("--eval-samples", fg.eval_samples, "Inputs used for the reported KL")->capture_default_str();
  fg_cmd->add_option("--seed", fg.seed, "Data seed")->capture_default_str();
  fg_cmd->add_option("--ranks-out", fg.out_ranks, "Output ranks JSON")->required();
  fg_cmd->add_option("--trajectory-out", fg.out_trajectory, "Output trajectory CSV")->required();
  fg_cmd->add_option("--report-out", fg.out_report, "Output report JSON")->required();

  CompareOptions cmpr;
  std::int64_t compare_target = 0;
  std::string compare_mode = "linear";
  auto* cmpr_cmd = app.add_subcommand("compare", "Compare allocations against uniform and brute force");
  cmpr_cmd->add_option("model", cmpr.model_dir, "Teacher package directory")->required();
  cmpr_cmd->add_option("--calib", cmpr.calib_file, "Calibration LRMX file")->required();
  cmpr_cmd->add_option("--ranks", cmpr.ranks_files, "Ranks JSON files");
  auto* ct_opt = cmpr_cmd->add_option("--target-params", compare_target, "Budget (default: from the first ranks file)");
  cmpr_cmd->add_option("--mode", compare_mode, "Parameter counting: linear or parabolic")->capture_default_str();
  cmpr_cmd->add_option("--r-min", cmpr.r_min, "Lower rank bound")->capture_default_str();
  cmpr_cmd->add_option("--grid-step", cmpr.grid_step, "Brute-force grid step")->capture_default_str();
  cmpr_cmd->add_option("--eval-samples", cmpr.eval_samples, "Inputs used for KL")->capture_default_str();
  cmpr_cmd->add_option("--seed", cmpr.seed, "Evaluation seed")->capture_default_str();
  cmpr_cmd->add_option("-o,--out", cmpr.out_report, "Output report JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return usage_error(e.what());
  }

  try {
    if (*gen_cmd) {
      cmd_gen_teacher(gen);
    } else if (*cal_cmd) {
      cmd_calibrate(cal);
    } else if (*cmp_cmd) {
      if (*ranks_opt) cmp.ranks_file = ranks_path;
      if (*uniform_opt) cmp.uniform_ratio = uniform;
      cmd_compress(cmp);
    } else if (*fg_cmd) {
      if (*tp_opt) fg.target_params = target_params;
      if (*tr_opt) fg.target_ratio = target_ratio;
      fg.mode = parse_count_mode(mode);
      if (n_scale != "auto") {
        try {
          fg.n_scale = std::stod(n_scale);
        } catch (const std::exception&) {
          return fail(ErrorCode::InvalidArgument, "--n-scale expects a number or 'auto'");
        }
      }
      cmd_fermigrad(fg);
    } else if (*cmpr_cmd) {
      if (*ct_opt) cmpr.target_params = compare_target;
      cmpr.mode = parse_count_mode(compare_mode);
      cmd_compare(cmpr);
    }
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  } catch (const std::exception& e) {
    const nlohmann::json j = {{"error", {{"code", "Internal"}, {"message", e.what()}, {"exit_code", kExitInternal}}}};
    std::cerr << j.dump() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}
