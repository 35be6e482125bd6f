// SPDX-License-Identifier: Apache-2.0
#include "lrc/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

namespace lrc::io {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void parse_error(const std::string& msg) { throw Error(ErrorCode::Parse, msg); }
[[noreturn]] void io_error(const std::string& msg) { throw Error(ErrorCode::Io, msg); }

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xffu));
  }
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
  return static_cast<T>(v);
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_error("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) io_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) io_error("write to '" + path.string() + "' failed");
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    parse_error(what + ": " + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key, const std::string& what) {
  if (!j.contains(key)) parse_error(what + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    parse_error(what + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

std::vector<std::uint8_t> encode_matrix(const Matrix& m, Dtype dtype) {
  require_finite(m, "encode_matrix");
  std::vector<std::uint8_t> out;
  const std::size_t width = dtype == Dtype::Float64 ? 8 : 4;
  out.reserve(kMatrixHeaderSize + static_cast<std::size_t>(m.size()) * width);
  out.insert(out.end(), {'L', 'R', 'M', 'X'});
  put_le<std::uint16_t>(out, kMatrixVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(0);
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (dtype == Dtype::Float64) {
        std::uint64_t bits = 0;
        const double v = m(i, j);
        std::memcpy(&bits, &v, sizeof(bits));
        put_le<std::uint64_t>(out, bits);
      } else {
        std::uint32_t bits = 0;
        const auto v = static_cast<float>(m(i, j));
        std::memcpy(&bits, &v, sizeof(bits));
        put_le<std::uint32_t>(out, bits);
      }
    }
  }
  return out;
}

Matrix decode_matrix(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMatrixHeaderSize) parse_error("LRMX: truncated header");
  if (std::memcmp(bytes.data(), "LRMX", 4) != 0) parse_error("LRMX: bad magic");
  const auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != kMatrixVersion) parse_error("LRMX: unsupported version " + std::to_string(version));
  const std::uint8_t dtype = bytes[6];
  if (dtype > 1) parse_error("LRMX: unknown dtype " + std::to_string(dtype));
  if (bytes[7] != 0) parse_error("LRMX: reserved byte must be zero");
  const auto rows = get_le<std::uint64_t>(bytes, 8);
  const auto cols = get_le<std::uint64_t>(bytes, 16);
  const std::size_t width = dtype == 0 ? 8 : 4;
  if (cols != 0 && rows > (bytes.size() / width) / cols) parse_error("LRMX: payload length does not match shape");
  if (bytes.size() - kMatrixHeaderSize != rows * cols * width) parse_error("LRMX: payload length does not match shape");

  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  std::size_t off = kMatrixHeaderSize;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j, off += width) {
      if (dtype == 0) {
        const auto bits = get_le<std::uint64_t>(bytes, off);
        double v = 0.0;
        std::memcpy(&v, &bits, sizeof(v));
        m(i, j) = v;
      } else {
        const auto bits = get_le<std::uint32_t>(bytes, off);
        float v = 0.0f;
        std::memcpy(&v, &bits, sizeof(v));
        m(i, j) = static_cast<double>(v);
      }
    }
  }
  if (!m.allFinite()) parse_error("LRMX: payload contains NaN or Inf");
  return m;
}

void write_matrix(const fs::path& path, const Matrix& m, Dtype dtype) {
  const auto bytes = encode_matrix(m, dtype);
  write_bytes(path, bytes);
}

Matrix read_matrix(const fs::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return decode_matrix(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void write_indices(const fs::path& path, const std::vector<Index>& idx) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(idx.size() * 8);
  for (Index i : idx) {
    if (i < 0) throw Error(ErrorCode::InvalidArgument, "write_indices: negative index");
    put_le<std::uint64_t>(bytes, static_cast<std::uint64_t>(i));
  }
  write_bytes(path, bytes);
}

std::vector<Index> read_indices(const fs::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() % 8 != 0) parse_error(path.string() + ": index file length is not a multiple of 8");
  std::vector<Index> out(bytes.size() / 8);
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = static_cast<Index>(get_le<std::uint64_t>(bytes, 8 * k));
  }
  return out;
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return {bytes.begin(), bytes.end()};
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {

json spec_to_json(const ToyModelSpec& spec) {
  json shapes = json::array();
  for (const auto& [m, n] : spec.layer_shapes) shapes.push_back({m, n});
  return {
      {"layer_shapes", shapes},
      {"planted_ranks", spec.planted_ranks},
      {"spectrum_decay", spec.spectrum_decay},
      {"noise_floor", spec.noise_floor},
      {"output_dim", spec.output_dim},
      {"nonlinearity", to_string(spec.nonlinearity)},
      {"residual", spec.residual},
      {"seed", spec.seed.value},
  };
}

ToyModelSpec spec_from_json(const json& j) {
  const std::string what = "model spec";
  if (!j.is_object()) parse_error(what + ": expected an object");
  ToyModelSpec spec;
  for (const auto& shape : field<std::vector<std::vector<Index>>>(j, "layer_shapes", what)) {
    if (shape.size() != 2) parse_error(what + ": each layer shape must be [rows, cols]");
    spec.layer_shapes.emplace_back(shape[0], shape[1]);
  }
  spec.planted_ranks = field<std::vector<Index>>(j, "planted_ranks", what);
  spec.spectrum_decay = field<std::vector<double>>(j, "spectrum_decay", what);
  if (j.contains("noise_floor")) spec.noise_floor = field<double>(j, "noise_floor", what);
  if (j.contains("output_dim")) spec.output_dim = field<Index>(j, "output_dim", what);
  if (j.contains("nonlinearity")) spec.nonlinearity = parse_nonlinearity(field<std::string>(j, "nonlinearity", what));
  if (j.contains("residual")) spec.residual = field<bool>(j, "residual", what);
  if (j.contains("seed")) spec.seed = Seed{field<std::uint64_t>(j, "seed", what)};
  spec.validate();
  return spec;
}

}  // namespace

ToyModelSpec parse_model_spec(const std::string& json_text) {
  return spec_from_json(parse_json(json_text, "model spec"));
}

std::string model_spec_to_json(const ToyModelSpec& spec) { return spec_to_json(spec).dump(2) + "\n"; }

Matrix stack_calibration(const std::vector<CalibState>& calib) {
  Index rows = 0;
  Index cols = 0;
  for (const auto& c : calib) {
    rows += c.C.rows();
    cols = std::max(cols, c.C.cols());
  }
  Matrix out = Matrix::Zero(rows, cols);
  Index off = 0;
  for (const auto& c : calib) {
    out.block(off, 0, c.C.rows(), c.C.cols()) = c.C;
    off += c.C.rows();
  }
  return out;
}

std::vector<CalibState> unstack_calibration(const Matrix& stacked,
                                            const std::vector<std::pair<Index, Index>>& shapes) {
  Index rows = 0;
  Index cols = 0;
  for (const auto& [m, n] : shapes) {
    rows += n;
    cols = std::max(cols, n);
  }
  if (stacked.rows() != rows) throw_dimension_mismatch("calibration file rows", rows, stacked.rows());
  if (stacked.cols() != cols) throw_dimension_mismatch("calibration file cols", cols, stacked.cols());
  std::vector<CalibState> out;
  Index off = 0;
  for (const auto& [m, n] : shapes) {
    out.push_back({stacked.block(off, 0, n, n), 0});
    off += n;
  }
  return out;
}

std::string representation_name(const LayerRep& rep) {
  switch (rep.index()) {
    case 0: return "dense";
    case 1: return "lowrank";
    default: return "pivga";
  }
}

void write_package(const fs::path& dir, const ModelPackage& pkg) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) io_error("cannot create '" + dir.string() + "': " + ec.message());

  json layers = json::array();
  for (std::size_t l = 0; l < pkg.network.layers.size(); ++l) {
    const auto& rep = pkg.network.layers[l];
    const std::string name = "layer" + std::to_string(l);
    json entry = {{"name", name},
                  {"rows", rep_rows(rep)},
                  {"cols", rep_cols(rep)},
                  {"representation", representation_name(rep)}};
    json files = json::object();
    std::visit(
        [&](const auto& r) {
          using T = std::decay_t<decltype(r)>;
          if constexpr (std::is_same_v<T, Matrix>) {
            files["weight"] = name + ".weight.lrmx";
            write_matrix(dir / files["weight"].get<std::string>(), r);
          } else if constexpr (std::is_same_v<T, LowRankFactors>) {
            entry["rank"] = r.rank();
            files["A"] = name + ".A.lrmx";
            files["B"] = name + ".B.lrmx";
            write_matrix(dir / files["A"].get<std::string>(), r.A);
            write_matrix(dir / files["B"].get<std::string>(), r.B);
          } else {
            entry["rank"] = r.rank();
            files["C"] = name + ".C.lrmx";
            files["D"] = name + ".D.lrmx";
            files["perm"] = name + ".perm.idx";
            write_matrix(dir / files["C"].get<std::string>(), r.C);
            write_matrix(dir / files["D"].get<std::string>(), r.D);
            write_indices(dir / files["perm"].get<std::string>(), r.perm);
          }
        },
        rep);
    entry["files"] = files;
    layers.push_back(entry);
  }
  write_matrix(dir / "head.lrmx", pkg.network.head);

  const json manifest = {
      {"format", "lrc-model-package"},
      {"version", 1},
      {"spec", spec_to_json(pkg.spec)},
      {"seed", pkg.spec.seed.value},
      {"n_inc", pkg.n_inc},
      {"nonlinearity", to_string(pkg.network.act)},
      {"head", {{"rows", pkg.network.head.rows()}, {"cols", pkg.network.head.cols()}, {"file", "head.lrmx"}}},
      {"layers", layers},
  };
  write_text(dir / kManifestName, manifest.dump(2) + "\n");
}

ModelPackage read_package(const fs::path& dir) {
  const std::string what = (dir / kManifestName).string();
  const json manifest = parse_json(read_text(dir / kManifestName), what);
  if (field<std::string>(manifest, "format", what) != "lrc-model-package") parse_error(what + ": not a model package");
  if (field<int>(manifest, "version", what) != 1) parse_error(what + ": unsupported version");

  ModelPackage pkg;
  pkg.spec = spec_from_json(field<json>(manifest, "spec", what));
  pkg.n_inc = field<std::int64_t>(manifest, "n_inc", what);
  pkg.network.act = parse_nonlinearity(field<std::string>(manifest, "nonlinearity", what));
  pkg.network.residual = pkg.spec.residual;

  const auto expect_shape = [&](const Matrix& m, Index rows, Index cols, const std::string& name) {
    if (m.rows() != rows || m.cols() != cols) parse_error(what + ": " + name + " shape does not match the manifest");
  };

  const json layers = field<json>(manifest, "layers", what);
  if (!layers.is_array() || layers.size() != pkg.spec.num_layers()) parse_error(what + ": layer list does not match the spec");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const json& e = layers[l];
    const auto rows = field<Index>(e, "rows", what);
    const auto cols = field<Index>(e, "cols", what);
    if (rows != pkg.spec.layer_shapes[l].first || cols != pkg.spec.layer_shapes[l].second) {
      parse_error(what + ": layer " + std::to_string(l) + " shape does not match the spec");
    }
    const auto rep = field<std::string>(e, "representation", what);
    const json files = field<json>(e, "files", what);
    const auto file = [&](const char* key) { return dir / field<std::string>(files, key, what); };
    if (rep == "dense") {
      Matrix w = read_matrix(file("weight"));
      expect_shape(w, rows, cols, "weight");
      pkg.network.layers.emplace_back(std::move(w));
    } else if (rep == "lowrank") {
      const auto r = field<Index>(e, "rank", what);
      LowRankFactors f{read_matrix(file("A")), read_matrix(file("B"))};
      expect_shape(f.A, rows, r, "A");
      expect_shape(f.B, r, cols, "B");
      pkg.network.layers.emplace_back(std::move(f));
    } else if (rep == "pivga") {
      const auto r = field<Index>(e, "rank", what);
      PivGaFactors f;
      f.C = read_matrix(file("C"));
      f.D = read_matrix(file("D"));
      f.perm = read_indices(file("perm"));
      expect_shape(f.C, rows, r, "C");
      expect_shape(f.D, r, cols - r, "D");
      std::vector<bool> seen(static_cast<std::size_t>(cols), false);
      if (static_cast<Index>(f.perm.size()) != cols) parse_error(what + ": permutation length does not match cols");
      for (Index p : f.perm) {
        if (p < 0 || p >= cols || seen[static_cast<std::size_t>(p)]) parse_error(what + ": permutation is not a permutation");
        seen[static_cast<std::size_t>(p)] = true;
      }
      pkg.network.layers.emplace_back(std::move(f));
    } else {
      parse_error(what + ": unknown representation '" + rep + "'");
    }
  }

  const json head = field<json>(manifest, "head", what);
  pkg.network.head = read_matrix(dir / field<std::string>(head, "file", what));
  expect_shape(pkg.network.head, field<Index>(head, "rows", what), field<Index>(head, "cols", what), "head");
  if (pkg.network.head.cols() != pkg.spec.layer_shapes.back().first) parse_error(what + ": head width does not match the last layer");
  return pkg;
}

ModelPackage package_from_model(const ToyModel& model) {
  return {model.spec, model.n_inc, model.dense_network()};
}

ToyModel model_from_package(const ModelPackage& pkg) {
  ToyModel model;
  model.spec = pkg.spec;
  model.n_inc = pkg.n_inc;
  model.head = pkg.network.head;
  for (const auto& rep : pkg.network.layers) {
    const auto* w = std::get_if<Matrix>(&rep);
    if (w == nullptr) throw Error(ErrorCode::InvalidArgument, "model package is already compressed; a dense teacher is required");
    model.layers.push_back({*w, std::nullopt});
  }
  return model;
}

void write_ranks(const fs::path& path, const RanksFile& ranks) {
  const json j = {{"ranks", ranks.ranks},
                  {"target_params", ranks.target_params},
                  {"achieved_params", ranks.achieved_params}};
  write_text(path, j.dump(2) + "\n");
}

RanksFile read_ranks(const fs::path& path) {
  const std::string what = path.string();
  const json j = parse_json(read_text(path), what);
  RanksFile out;
  out.ranks = field<std::vector<Index>>(j, "ranks", what);
  if (j.contains("target_params")) out.target_params = field<std::int64_t>(j, "target_params", what);
  if (j.contains("achieved_params")) out.achieved_params = field<std::int64_t>(j, "achieved_params", what);
  return out;
}

}  // namespace lrc::io
