// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lrc/numeric.hpp"
#include "lrc/pivga.hpp"
#include "lrc/rng.hpp"
#include "lrc/svd_compress.hpp"

namespace lrc {

enum class Nonlinearity { Tanh, Identity };

std::string to_string(Nonlinearity act);
Nonlinearity parse_nonlinearity(const std::string& name);

void apply_nonlinearity(Nonlinearity act, Matrix& z);

/// Derivative of the nonlinearity expressed through its output h = act(z).
Matrix nonlinearity_slope(Nonlinearity act, const Matrix& h);

/// One layer in whichever representation it is stored.
using LayerRep = std::variant<Matrix, LowRankFactors, PivGaFactors>;

Index rep_rows(const LayerRep& rep);
Index rep_cols(const LayerRep& rep);

/// y = W x for x holding one input per column.
Matrix apply_layer(const LayerRep& rep, const Matrix& x);

/// Stack of compressible layers, each followed by the nonlinearity, and a
/// dense readout head that is never compressed. With `residual` set, square
/// layers update a residual stream: h' = h + act(W h). Non-square layers
/// always use h' = act(W h).
struct Network {
  std::vector<LayerRep> layers;
  Matrix head;
  Nonlinearity act = Nonlinearity::Tanh;
  bool residual = true;
};

inline bool uses_skip(bool residual, Index rows, Index cols) { return residual && rows == cols; }

/// x: n_0 x samples. Returns logits as samples x output_dim.
Matrix network_logits(const Network& net, const Matrix& x);

/// Inputs to every compressible layer (index l holds the input of layer l)
/// under the dense teacher weights.
std::vector<Matrix> layer_inputs(const std::vector<Matrix>& weights, Nonlinearity act,
                                 bool residual, const Matrix& x);

/// Desk-scale teacher description. layer_shapes holds (rows m_l, cols n_l)
/// and consecutive layers must compose (n_{l+1} = m_l).
struct ToyModelSpec {
  std::vector<std::pair<Index, Index>> layer_shapes;
  std::vector<Index> planted_ranks;
  std::vector<double> spectrum_decay;
  double noise_floor = 1e-3;
  Index output_dim = 64;
  Nonlinearity nonlinearity = Nonlinearity::Tanh;
  bool residual = true;
  Seed seed{};

  Index input_dim() const { return layer_shapes.front().second; }
  std::size_t num_layers() const { return layer_shapes.size(); }
  void validate() const;

  /// Four 64 x 64 layers with planted ranks (4, 8, 16, 48), decay 3.
  static ToyModelSpec desk_default(Seed seed);
};

struct ToyLayer {
  Matrix weight;
  /// Full-rank data-aware factors, present once the model is calibrated.
  std::optional<LowRankFactors> factors;

  Index rows() const { return weight.rows(); }
  Index cols() const { return weight.cols(); }
  Index cap() const { return std::min(weight.rows(), weight.cols()); }
};

struct ToyModel {
  ToyModelSpec spec;
  std::vector<ToyLayer> layers;
  Matrix head;
  std::int64_t n_inc = 0;

  std::vector<Matrix> weights() const;
  std::vector<Index> caps() const;
  std::vector<std::pair<Index, Index>> shapes() const;
  std::int64_t dense_params() const;  // compressible layers only
  bool calibrated() const;

  Network dense_network() const;
};

}  // namespace lrc
