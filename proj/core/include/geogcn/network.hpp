#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include <geogcn/autodiff.hpp>
#include <geogcn/point_cloud.hpp>

namespace geogcn {

/// Flattened neighbour lists for EdgeConv: row i*k+e is the edge (i, neighbors[i*k+e]).
/// Each point's neighbours are stored in ascending index order so that
/// max-aggregation ties resolve to the lowest neighbour index.
struct EdgeList {
  std::size_t k = 0;
  std::size_t points = 0;
  std::vector<std::size_t> neighbors;

  static EdgeList from_graph(const KnnGraph& graph);
};

struct Architecture {
  std::vector<std::size_t> sgcn_channels{3, 64, 64, 128};
  std::vector<std::size_t> ngcn_channels{6, 64, 64, 128};
  double leaky_slope = 0.1;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// EdgeConv: max_j LReLU(W2 LReLU(W1 [x_i, x_j - x_i] + b1) + b2).
struct EdgeConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  ad::DiffArray w1;  // 2*in x out
  ad::DiffArray b1;  // 1 x out
  ad::DiffArray w2;  // out x out
  ad::DiffArray b2;  // 1 x out

  ad::DiffArray forward(const ad::DiffArray& x, const EdgeList& edges, double slope) const;
};

/// Stack of EdgeConv layers followed by a per-point linear head with 3 outputs.
struct GcnRegressor {
  std::vector<EdgeConvLayer> layers;
  ad::DiffArray head_w;  // C x 3
  ad::DiffArray head_b;  // 1 x 3
  // N-GCN only: gain on the input-normal skip path added to the head output.
  ad::DiffArray skip_gain;

  ad::DiffArray features(const ad::DiffArray& x, const EdgeList& edges, double slope) const;
  ad::DiffArray head(const ad::DiffArray& features) const;
};

enum class ParamGroup { all, sgcn, ngcn };

/// Weights of both regressors plus SGD momentum buffers.
struct NetworkParams {
  Architecture arch;
  GcnRegressor sgcn;
  GcnRegressor ngcn;
  std::uint64_t rng_seed = 0;
  std::size_t epoch = 0;
  std::vector<ad::Matrix> momentum;  // parallel to named_parameters(ParamGroup::all)

  /// Glorot-uniform hidden weights, zero biases, zero heads, unit skip gain.
  static NetworkParams initialize(const Architecture& arch, std::uint64_t seed);

  std::vector<std::pair<std::string, ad::DiffArray>> named_parameters(ParamGroup group = ParamGroup::all) const;
  std::size_t parameter_count() const;
  void zero_grad(ParamGroup group = ParamGroup::all) const;

  // Independent copy (new leaves), momentum included.
  NetworkParams clone() const;
};

ad::DiffArray forward_sgcn(const NetworkParams& params, const ad::DiffArray& patch_positions, const EdgeList& edges);
ad::DiffArray forward_sgcn(const NetworkParams& params, const ad::DiffArray& patch_positions, const KnnGraph& graph);

// `features` is k x 6: normalized positions then unit initial normals. Output rows are unit normals.
ad::DiffArray forward_ngcn(const NetworkParams& params, const ad::DiffArray& features, const EdgeList& edges);
ad::DiffArray forward_ngcn(const NetworkParams& params, const ad::DiffArray& features, const KnnGraph& graph);

inline constexpr double kNormalEpsilon = 1e-12;

/// p <- p - lr * v with v <- momentum * v + grad, then zeroes the gradients.
/// Throws training_divergence_error (before touching any weight) on non-finite gradients.
void sgd_step(NetworkParams& params, double learning_rate, double momentum, ParamGroup group = ParamGroup::all);

/// Geometric decay from `start` at epoch 0 to `end` at the last epoch.
double lr_schedule(std::size_t epoch, std::size_t total_epochs, double start = 1e-3, double end = 1e-6);

nlohmann::json checkpoint_to_json(const NetworkParams& params);
NetworkParams checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const NetworkParams& params, const std::filesystem::path& path);
NetworkParams load_checkpoint(const std::filesystem::path& path);

}  // namespace geogcn
