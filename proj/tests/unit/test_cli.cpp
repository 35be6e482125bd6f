// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "commands.hpp"
#include "lrc/io.hpp"
#include "lrc/toyharness.hpp"
#include "oracles.hpp"

using namespace lrc;
using namespace lrc::cli;
using lrc::testing::scratch_dir;
using nlohmann::json;

namespace {

const char* kSpec = R"({
  "layer_shapes": [[24, 20], [24, 24], [16, 24]],
  "planted_ranks": [3, 12, 6],
  "spectrum_decay": [3.0, 3.0, 3.0],
  "noise_floor": 1e-3,
  "output_dim": 12,
  "nonlinearity": "tanh",
  "seed": 42
})";

int run(const std::string& args, const fs::path& err_file) {
  const std::string cmd = std::string(LRC_CLI_PATH) + " " + args + " >/dev/null 2>" + err_file.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch_dir("cli_pipeline"));
    io::write_text(*dir_ / "spec.json", kSpec);
    cmd_gen_teacher({*dir_ / "spec.json", *dir_ / "teacher"});
    cmd_calibrate({*dir_ / "teacher", 2048, 7, *dir_ / "calib.lrmx"});
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path* dir_;

  FermiGradOptions fermigrad_options(const std::string& tag) const {
    FermiGradOptions o;
    o.model_dir = *dir_ / "teacher";
    o.calib_file = *dir_ / "calib.lrmx";
    o.target_ratio = 0.6;
    o.fermi.r_min = 2;
    o.opt.step_size = 20.0;
    o.opt.max_iters = 150;
    o.train_samples = 256;
    o.eval_samples = 256;
    o.seed = 3;
    o.out_ranks = *dir_ / (tag + "_ranks.json");
    o.out_trajectory = *dir_ / (tag + "_traj.csv");
    o.out_report = *dir_ / (tag + "_report.json");
    return o;
  }
};
fs::path* Pipeline::dir_ = nullptr;

}  // namespace

TEST(ExitCodes, DistinctAndDocumented) {
  std::set<int> codes{kExitOk, kExitInternal, kExitUsage};
  const std::string table = exit_code_table();
  for (ErrorCode c : {ErrorCode::InvalidArgument, ErrorCode::DimensionMismatch, ErrorCode::ConvergenceFailure,
                      ErrorCode::NotSymmetric, ErrorCode::NotPositiveDefinite, ErrorCode::RankDeficient,
                      ErrorCode::SingularMatrix, ErrorCode::IllConditioned, ErrorCode::NonFiniteGradient,
                      ErrorCode::InfeasibleBudget, ErrorCode::SearchSpaceTooLarge, ErrorCode::Io, ErrorCode::Parse}) {
    EXPECT_TRUE(codes.insert(exit_code_for(c)).second);
    EXPECT_NE(table.find(std::string(to_string(c))), std::string::npos);
  }
}

TEST(ExitCodes, ErrorJsonIsOneLine) {
  const std::string s = error_json(ErrorCode::Io, "cannot open \"x\"\nsecond line");
  EXPECT_EQ(s.find('\n'), std::string::npos);
  const json j = json::parse(s);
  EXPECT_EQ(j["error"]["code"], "Io");
  EXPECT_EQ(j["error"]["exit_code"], exit_code_for(ErrorCode::Io));
}

TEST(TrajectoryCsv, HeaderAndPrecision) {
  TrajectoryPoint p;
  p.iter = 3;
  p.mu = {1.0 / 3.0, 2.5};
  p.rho = 1.02;
  p.kl = 1e-7;
  p.n_param = 12345.5;
  const std::string csv = trajectory_csv({p});
  std::istringstream in(csv);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "iter,mu_0,mu_1,rho,kl,n_param");
  EXPECT_EQ(row, "3,0.33333333333333331,2.5,1.02,9.9999999999999995e-08,12345.5");
}

TEST_F(Pipeline, CalibrateIsDeterministic) {
  cmd_calibrate({*dir_ / "teacher", 2048, 7, *dir_ / "calib2.lrmx"});
  EXPECT_EQ(io::read_text(*dir_ / "calib.lrmx"), io::read_text(*dir_ / "calib2.lrmx"));
  const Matrix c = io::read_matrix(*dir_ / "calib.lrmx");
  EXPECT_EQ(c.rows(), 20 + 24 + 24);
  EXPECT_EQ(c.cols(), 24);
}

TEST_F(Pipeline, CompressAtFullRankIsLossless) {
  const ToyModel teacher = io::model_from_package(io::read_package(*dir_ / "teacher"));
  io::write_ranks(*dir_ / "full.json", {teacher.caps(), 0, 0});
  for (bool pivga : {false, true}) {
    CompressOptions o;
    o.model_dir = *dir_ / "teacher";
    o.calib_file = *dir_ / "calib.lrmx";
    o.ranks_file = *dir_ / "full.json";
    o.pivga = pivga;
    o.out_dir = *dir_ / (pivga ? "full_pivga" : "full_lowrank");
    cmd_compress(o);
    const io::ModelPackage pkg = io::read_package(o.out_dir);
    const Matrix x = gen_calibration(teacher.spec, 64, Seed{9});
    const Matrix ref = network_logits(teacher.dense_network(), x);
    EXPECT_LE((network_logits(pkg.network, x) - ref).norm(), 1e-8 * ref.norm());
    const json report = json::parse(io::read_text(o.out_dir / "report.json"));
    EXPECT_LE(report["kl"].get<double>(), 1e-12);
    EXPECT_EQ(report["representations"][0], pivga ? "pivga" : "lowrank");
  }
}

TEST_F(Pipeline, CompressUniformRatio) {
  CompressOptions o;
  o.model_dir = *dir_ / "teacher";
  o.calib_file = *dir_ / "calib.lrmx";
  o.uniform_ratio = 0.5;
  o.out_dir = *dir_ / "uniform_half";
  cmd_compress(o);
  const json report = json::parse(io::read_text(o.out_dir / "report.json"));
  EXPECT_EQ(report["ranks"], json({10, 12, 8}));
  EXPECT_GT(report["kl"].get<double>(), 0.0);
}

TEST_F(Pipeline, FermiGradReportWithinBudget) {
  const FermiGradOptions o = fermigrad_options("a");
  cmd_fermigrad(o);
  const json report = json::parse(io::read_text(o.out_report));
  EXPECT_LE(report["achieved_params"].get<std::int64_t>(), report["target_params"].get<std::int64_t>());
  const io::RanksFile ranks = io::read_ranks(o.out_ranks);
  EXPECT_EQ(json(ranks.ranks), report["ranks"]);
  EXPECT_EQ(report["config"]["alpha"], 1.02);
  EXPECT_EQ(report["config"]["rho0"], 1.0);
  EXPECT_EQ(report["config"]["rho_max"], 2000.0);
  EXPECT_EQ(report["trajectory_csv"], o.out_trajectory.string());

  // Final row of the CSV carries the report's final mu / rho.
  const std::string csv = io::read_text(o.out_trajectory);
  const auto last_start = csv.rfind('\n', csv.size() - 2) + 1;
  std::istringstream row(csv.substr(last_start));
  std::string cell;
  std::vector<double> cells;
  while (std::getline(row, cell, ',')) cells.push_back(std::stod(cell));
  ASSERT_EQ(cells.size(), 1u + 3 + 3);
  for (int l = 0; l < 3; ++l) EXPECT_EQ(cells[1 + l], report["final_mu"][l].get<double>());
  EXPECT_EQ(cells[4], report["final_rho"].get<double>());
}

TEST_F(Pipeline, FermiGradDeterministic) {
  cmd_fermigrad(fermigrad_options("b"));
  cmd_fermigrad(fermigrad_options("c"));
  EXPECT_EQ(io::read_text(*dir_ / "b_traj.csv"), io::read_text(*dir_ / "c_traj.csv"));
  EXPECT_EQ(io::read_text(*dir_ / "b_ranks.json"), io::read_text(*dir_ / "c_ranks.json"));
  json rb = json::parse(io::read_text(*dir_ / "b_report.json"));
  json rc = json::parse(io::read_text(*dir_ / "c_report.json"));
  for (json* r : {&rb, &rc}) {
    r->erase("wall_time_s");
    (*r)["config"].erase("n_scale");
    r->erase("trajectory_csv");
  }
  EXPECT_EQ(rb, rc);
}

TEST_F(Pipeline, FermiGradRejectsAlphaOutsideBand) {
  FermiGradOptions o = fermigrad_options("d");
  o.rho.alpha = 1.2;
  try {
    cmd_fermigrad(o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
  }
}

TEST_F(Pipeline, CompareIncludesBaselines) {
  cmd_fermigrad(fermigrad_options("e"));
  CompareOptions o;
  o.model_dir = *dir_ / "teacher";
  o.calib_file = *dir_ / "calib.lrmx";
  o.ranks_files = {*dir_ / "e_ranks.json"};
  o.r_min = 2;
  o.grid_step = 2;
  o.eval_samples = 128;
  o.out_report = *dir_ / "compare.json";
  cmd_compare(o);
  const json report = json::parse(io::read_text(o.out_report));
  ASSERT_EQ(report["allocations"].size(), 3u);
  EXPECT_EQ(report["allocations"][0]["name"], "e_ranks");
  EXPECT_EQ(report["allocations"][1]["name"], "uniform");
  EXPECT_EQ(report["allocations"][2]["name"], "brute_force");
  for (const auto& a : report["allocations"]) EXPECT_TRUE(a["within_budget"].get<bool>());
}

TEST_F(Pipeline, BinaryReportsErrorsAsJson) {
  const fs::path err = *dir_ / "stderr.txt";
  EXPECT_EQ(run("calibrate /nonexistent/model -o " + (*dir_ / "x.lrmx").string(), err), exit_code_for(ErrorCode::Io));
  const std::string text = io::read_text(err);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  EXPECT_EQ(json::parse(text)["error"]["code"], "Io");

  io::write_text(*dir_ / "bad_spec.json", "{\"layer_shapes\": [[4, 4]]");
  EXPECT_EQ(run("gen-teacher " + (*dir_ / "bad_spec.json").string() + " -o " + (*dir_ / "bad").string(), err),
            exit_code_for(ErrorCode::Parse));

  EXPECT_EQ(run("fermigrad " + (*dir_ / "teacher").string() + " --calib " + (*dir_ / "calib.lrmx").string() +
                    " --target-ratio 0.6 --alpha 1.5 --ranks-out r.json --trajectory-out t.csv --report-out p.json",
                err),
            exit_code_for(ErrorCode::InvalidArgument));
  EXPECT_EQ(run("fermigrad --bogus", err), kExitUsage);
  EXPECT_EQ(json::parse(io::read_text(err))["error"]["code"], "Usage");
}

TEST_F(Pipeline, BinaryEndToEnd) {
  const fs::path err = *dir_ / "stderr_ok.txt";
  const std::string d = dir_->string();
  ASSERT_EQ(run("gen-teacher " + d + "/spec.json -o " + d + "/bin_teacher", err), 0) << io::read_text(err);
  ASSERT_EQ(run("calibrate " + d + "/bin_teacher -n 1024 --seed 7 -o " + d + "/bin_calib.lrmx", err), 0);
  ASSERT_EQ(run("fermigrad " + d + "/bin_teacher --calib " + d + "/bin_calib.lrmx --target-ratio 0.6 --r-min 2 --step 20 "
                "--n-scale auto --iters 60 --train-samples 128 --eval-samples 128 --ranks-out " + d +
                "/bin_ranks.json --trajectory-out " + d + "/bin_traj.csv --report-out " + d + "/bin_report.json",
                err),
            0)
      << io::read_text(err);
  ASSERT_EQ(run("compress " + d + "/bin_teacher --calib " + d + "/bin_calib.lrmx --ranks " + d +
                "/bin_ranks.json --pivga -o " + d + "/bin_student", err),
            0)
      << io::read_text(err);
  const io::ModelPackage pkg = io::read_package(*dir_ / "bin_student");
  EXPECT_EQ(pkg.network.layers.size(), 3u);
  EXPECT_EQ(run("--help", err), 0);
}
