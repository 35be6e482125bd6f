// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lrc/error.hpp"
#include "lrc/fermigrad.hpp"
#include "lrc/model.hpp"

namespace lrc::cli {

namespace fs = std::filesystem;

// Process exit codes. Module errors map one-to-one onto 10 + ErrorCode.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
int exit_code_for(ErrorCode code);
/// Human-readable exit-code table for --help.
std::string exit_code_table();
/// {"error":{"code":...,"message":...,"exit_code":...}} on one line.
std::string error_json(ErrorCode code, const std::string& message);

struct GenTeacherOptions {
  fs::path spec_file;
  fs::path out_dir;
};

struct CalibrateOptions {
  fs::path model_dir;
  Index samples = 4096;
  std::uint64_t seed = 0;
  fs::path out_file;
};

struct CompressOptions {
  fs::path model_dir;
  fs::path calib_file;
  std::optional<fs::path> ranks_file;
  std::optional<double> uniform_ratio;  // ranks_l = max(1, floor(kappa N_l))
  bool pivga = false;
  fs::path out_dir;
  Index eval_samples = 2048;
  std::uint64_t seed = 0;
};

struct FermiGradOptions {
  fs::path model_dir;
  fs::path calib_file;
  std::optional<std::int64_t> target_params;
  std::optional<double> target_ratio;  // of the dense decomposable count, N_inc added on top
  CountMode mode = CountMode::Linear;
  FermiConfig fermi;
  RhoSchedule rho;
  OptimizerConfig opt;
  std::optional<double> n_scale;  // unset: suggest_penalty_scale
  std::uint64_t seed = 0;
  Index train_samples = 1024;
  Index eval_samples = 2048;
  fs::path out_ranks;
  fs::path out_trajectory;
  fs::path out_report;
};

struct CompareOptions {
  fs::path model_dir;
  fs::path calib_file;
  std::vector<fs::path> ranks_files;
  std::optional<std::int64_t> target_params;  // default: first ranks file's target
  CountMode mode = CountMode::Linear;
  Index r_min = 8;
  Index grid_step = 1;
  Index eval_samples = 2048;
  std::uint64_t seed = 0;
  fs::path out_report;
};

void cmd_gen_teacher(const GenTeacherOptions& o);
void cmd_calibrate(const CalibrateOptions& o);
void cmd_compress(const CompressOptions& o);
void cmd_fermigrad(const FermiGradOptions& o);
/// Prints the comparison table to stdout as well as writing the report.
void cmd_compare(const CompareOptions& o);

/// Packaged teacher with data-aware factors attached from a calibration file.
ToyModel load_calibrated(const fs::path& model_dir, const fs::path& calib_file);

/// CSV with header iter,mu_0..mu_{L-1},rho,kl,n_param; numbers in %.17g.
std::string trajectory_csv(const std::vector<TrajectoryPoint>& trajectory);

CountMode parse_count_mode(const std::string& name);

}  // namespace lrc::cli
