// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lrc/model.hpp"
#include "lrc/numeric.hpp"
#include "lrc/svd_compress.hpp"

namespace lrc::io {

// LRMX layout, all little-endian:
//   0  char[4] "LRMX"
//   4  u16     version = 1
//   6  u8      dtype (0 = f64, 1 = f32)
//   7  u8      reserved = 0
//   8  u64     rows
//  16  u64     cols
//  24  payload rows * cols values, row-major
enum class Dtype : std::uint8_t { Float64 = 0, Float32 = 1 };

inline constexpr std::uint16_t kMatrixVersion = 1;
inline constexpr std::size_t kMatrixHeaderSize = 24;

std::vector<std::uint8_t> encode_matrix(const Matrix& m, Dtype dtype = Dtype::Float64);
Matrix decode_matrix(std::span<const std::uint8_t> bytes);

void write_matrix(const std::filesystem::path& path, const Matrix& m, Dtype dtype = Dtype::Float64);
Matrix read_matrix(const std::filesystem::path& path);

/// Headerless u64 little-endian index list.
void write_indices(const std::filesystem::path& path, const std::vector<Index>& idx);
std::vector<Index> read_indices(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

ToyModelSpec parse_model_spec(const std::string& json_text);
std::string model_spec_to_json(const ToyModelSpec& spec);

/// Per-layer calibration matrices stacked vertically into one matrix with
/// sum_l n_l rows and max_l n_l columns; block l starts at row
/// sum_{k<l} n_k and fills its leading n_l columns, the rest is zero.
Matrix stack_calibration(const std::vector<CalibState>& calib);
std::vector<CalibState> unstack_calibration(const Matrix& stacked,
                                            const std::vector<std::pair<Index, Index>>& shapes);

/// On-disk model: manifest.json plus one LRMX file per stored factor and one
/// index file per PivGa permutation.
struct ModelPackage {
  ToyModelSpec spec;
  std::int64_t n_inc = 0;
  Network network;
};

inline constexpr const char* kManifestName = "manifest.json";

void write_package(const std::filesystem::path& dir, const ModelPackage& pkg);
ModelPackage read_package(const std::filesystem::path& dir);

ModelPackage package_from_model(const ToyModel& model);
/// Requires every layer to be dense.
ToyModel model_from_package(const ModelPackage& pkg);

std::string representation_name(const LayerRep& rep);

struct RanksFile {
  std::vector<Index> ranks;
  std::int64_t target_params = 0;
  std::int64_t achieved_params = 0;
};

void write_ranks(const std::filesystem::path& path, const RanksFile& ranks);
RanksFile read_ranks(const std::filesystem::path& path);

}  // namespace lrc::io
