// SPDX-License-Identifier: Apache-2.0
#include "lrc/model.hpp"

#include <cmath>
#include <sstream>
#include <type_traits>

namespace lrc {

std::string to_string(Nonlinearity act) {
  switch (act) {
    case Nonlinearity::Tanh: return "tanh";
    case Nonlinearity::Identity: return "identity";
  }
  return "tanh";
}

Nonlinearity parse_nonlinearity(const std::string& name) {
  if (name == "tanh") return Nonlinearity::Tanh;
  if (name == "identity") return Nonlinearity::Identity;
  throw Error(ErrorCode::Parse, "unknown nonlinearity '" + name + "'");
}

void apply_nonlinearity(Nonlinearity act, Matrix& z) {
  if (act == Nonlinearity::Tanh) z = z.array().tanh().matrix();
}

Matrix nonlinearity_slope(Nonlinearity act, const Matrix& h) {
  if (act == Nonlinearity::Tanh) return (1.0 - h.array().square()).matrix();
  return Matrix::Ones(h.rows(), h.cols());
}

Index rep_rows(const LayerRep& rep) {
  return std::visit([](const auto& r) -> Index { return r.rows(); }, rep);
}

Index rep_cols(const LayerRep& rep) {
  return std::visit([](const auto& r) -> Index { return r.cols(); }, rep);
}

Matrix apply_layer(const LayerRep& rep, const Matrix& x) {
  if (x.rows() != rep_cols(rep)) throw_dimension_mismatch("apply_layer: input width", rep_cols(rep), x.rows());
  return std::visit(
      [&](const auto& r) -> Matrix {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, Matrix>) {
          return r * x;
        } else if constexpr (std::is_same_v<T, LowRankFactors>) {
          return r.A * (r.B * x);
        } else {
          return pivga_forward(x, r);
        }
      },
      rep);
}

Matrix network_logits(const Network& net, const Matrix& x) {
  Matrix h = x;
  for (const auto& layer : net.layers) {
    Matrix z = apply_layer(layer, h);
    apply_nonlinearity(net.act, z);
    if (uses_skip(net.residual, rep_rows(layer), rep_cols(layer))) {
      h += z;
    } else {
      h = std::move(z);
    }
  }
  if (h.rows() != net.head.cols()) throw_dimension_mismatch("network_logits: head width", net.head.cols(), h.rows());
  return (net.head * h).transpose();
}

std::vector<Matrix> layer_inputs(const std::vector<Matrix>& weights, Nonlinearity act,
                                 bool residual, const Matrix& x) {
  std::vector<Matrix> inputs;
  inputs.reserve(weights.size());
  Matrix h = x;
  for (const auto& w : weights) {
    inputs.push_back(h);
    Matrix z = w * h;
    apply_nonlinearity(act, z);
    if (uses_skip(residual, w.rows(), w.cols())) {
      h += z;
    } else {
      h = std::move(z);
    }
  }
  return inputs;
}

void ToyModelSpec::validate() const {
  const auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, "toy model spec: " + msg); };
  if (layer_shapes.empty()) fail("at least one layer is required");
  if (planted_ranks.size() != layer_shapes.size()) fail("planted_ranks must have one entry per layer");
  if (spectrum_decay.size() != layer_shapes.size()) fail("spectrum_decay must have one entry per layer");
  if (output_dim < 1) fail("output_dim must be positive");
  if (!(noise_floor >= 0.0) || !std::isfinite(noise_floor)) fail("noise_floor must be finite and non-negative");
  for (std::size_t l = 0; l < layer_shapes.size(); ++l) {
    const auto [m, n] = layer_shapes[l];
    std::ostringstream where;
    where << "layer " << l << ": ";
    if (m < 1 || n < 1) fail(where.str() + "shape must be positive");
    if (l > 0 && n != layer_shapes[l - 1].first) fail(where.str() + "input width must equal previous layer's rows");
    if (planted_ranks[l] < 1 || planted_ranks[l] > std::min(m, n)) fail(where.str() + "planted rank out of range");
    if (!(spectrum_decay[l] > 0.0) || !std::isfinite(spectrum_decay[l])) fail(where.str() + "spectrum_decay must be positive");
  }
}

ToyModelSpec ToyModelSpec::desk_default(Seed seed) {
  ToyModelSpec spec;
  spec.layer_shapes = {{64, 64}, {64, 64}, {64, 64}, {64, 64}};
  spec.planted_ranks = {4, 8, 16, 48};
  spec.spectrum_decay = {3.0, 3.0, 3.0, 3.0};
  spec.noise_floor = 1e-3;
  spec.output_dim = 64;
  spec.nonlinearity = Nonlinearity::Tanh;
  spec.seed = seed;
  return spec;
}

std::vector<Matrix> ToyModel::weights() const {
  std::vector<Matrix> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.push_back(l.weight);
  return out;
}

std::vector<Index> ToyModel::caps() const {
  std::vector<Index> out;
  for (const auto& l : layers) out.push_back(l.cap());
  return out;
}

std::vector<std::pair<Index, Index>> ToyModel::shapes() const {
  std::vector<std::pair<Index, Index>> out;
  for (const auto& l : layers) out.emplace_back(l.rows(), l.cols());
  return out;
}

std::int64_t ToyModel::dense_params() const {
  std::int64_t total = 0;
  for (const auto& l : layers) total += static_cast<std::int64_t>(l.rows()) * l.cols();
  return total;
}

bool ToyModel::calibrated() const {
  for (const auto& l : layers) {
    if (!l.factors) return false;
  }
  return !layers.empty();
}

Network ToyModel::dense_network() const {
  Network net;
  for (const auto& l : layers) net.layers.emplace_back(l.weight);
  net.head = head;
  net.act = spec.nonlinearity;
  net.residual = spec.residual;
  return net;
}

}  // namespace lrc
