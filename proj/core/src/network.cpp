#include <geogcn/network.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include <geogcn/errors.hpp>

namespace geogcn {

using ad::DiffArray;
using ad::Matrix;

EdgeList EdgeList::from_graph(const KnnGraph& graph) {
  EdgeList edges;
  edges.k = graph.k;
  edges.points = graph.size();
  edges.neighbors.reserve(graph.size() * graph.k);
  for (const auto& nbrs : graph.neighbor_indices) {
    if (nbrs.size() != graph.k) throw invalid_argument_error("EdgeList: ragged neighbour lists");
    std::vector<Index> sorted(nbrs.begin(), nbrs.end());
    std::sort(sorted.begin(), sorted.end());
    edges.neighbors.insert(edges.neighbors.end(), sorted.begin(), sorted.end());
  }
  return edges;
}

DiffArray EdgeConvLayer::forward(const DiffArray& x, const EdgeList& edges, double slope) const {
  if (static_cast<std::size_t>(x.cols()) != in_channels) {
    throw invalid_argument_error("EdgeConv: expected " + std::to_string(in_channels) + " input channels, got " +
                                 std::to_string(x.cols()));
  }
  auto h = ad::leaky_relu(ad::edge_linear(x, w1, b1, edges.neighbors, edges.k), slope);
  h = ad::leaky_relu(ad::add_row(ad::matmul(h, w2), b2), slope);
  return ad::max_aggregate(h, edges.k);
}

DiffArray GcnRegressor::features(const DiffArray& x, const EdgeList& edges, double slope) const {
  if (static_cast<std::size_t>(x.rows()) != edges.points) {
    throw invalid_argument_error("GCN: " + std::to_string(x.rows()) + " points but graph has " +
                                 std::to_string(edges.points));
  }
  DiffArray h = x;
  for (const auto& layer : layers) h = layer.forward(h, edges, slope);
  return h;
}

DiffArray GcnRegressor::head(const DiffArray& feats) const { return ad::add_row(ad::matmul(feats, head_w), head_b); }

namespace {

Matrix glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
  }
  return m;
}

Matrix zeros(std::size_t r, std::size_t c) {
  return Matrix::Zero(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

GcnRegressor make_regressor(const std::vector<std::size_t>& channels, bool with_skip, std::mt19937_64& rng) {
  if (channels.size() < 2) throw invalid_argument_error("architecture needs at least one EdgeConv layer");
  GcnRegressor net;
  for (std::size_t l = 0; l + 1 < channels.size(); ++l) {
    EdgeConvLayer layer;
    layer.in_channels = channels[l];
    layer.out_channels = channels[l + 1];
    layer.w1 = DiffArray::parameter(glorot(2 * layer.in_channels, layer.out_channels, rng));
    layer.b1 = DiffArray::parameter(zeros(1, layer.out_channels));
    layer.w2 = DiffArray::parameter(glorot(layer.out_channels, layer.out_channels, rng));
    layer.b2 = DiffArray::parameter(zeros(1, layer.out_channels));
    net.layers.push_back(std::move(layer));
  }
  net.head_w = DiffArray::parameter(zeros(channels.back(), 3));
  net.head_b = DiffArray::parameter(zeros(1, 3));
  if (with_skip) net.skip_gain = DiffArray::parameter(Matrix::Ones(1, 1));
  return net;
}

void append_named(std::vector<std::pair<std::string, DiffArray>>& out, const std::string& prefix,
                  const GcnRegressor& net) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    const std::string p = prefix + ".edgeconv" + std::to_string(l);
    out.emplace_back(p + ".w1", layer.w1);
    out.emplace_back(p + ".b1", layer.b1);
    out.emplace_back(p + ".w2", layer.w2);
    out.emplace_back(p + ".b2", layer.b2);
  }
  out.emplace_back(prefix + ".head.w", net.head_w);
  out.emplace_back(prefix + ".head.b", net.head_b);
  if (net.skip_gain.defined()) out.emplace_back(prefix + ".skip_gain", net.skip_gain);
}

GcnRegressor clone_regressor(const GcnRegressor& net) {
  auto copy = [](const DiffArray& a) { return a.defined() ? DiffArray::parameter(a.value()) : DiffArray{}; };
  GcnRegressor out;
  for (const auto& layer : net.layers) {
    EdgeConvLayer l = layer;
    l.w1 = copy(layer.w1);
    l.b1 = copy(layer.b1);
    l.w2 = copy(layer.w2);
    l.b2 = copy(layer.b2);
    out.layers.push_back(std::move(l));
  }
  out.head_w = copy(net.head_w);
  out.head_b = copy(net.head_b);
  out.skip_gain = copy(net.skip_gain);
  return out;
}

void check_channels(const char* what, const DiffArray& x, std::size_t expected) {
  if (static_cast<std::size_t>(x.cols()) != expected) {
    throw invalid_argument_error(std::string(what) + ": expected " + std::to_string(expected) + " channels, got " +
                                 std::to_string(x.cols()));
  }
}

}  // namespace

NetworkParams NetworkParams::initialize(const Architecture& arch, std::uint64_t seed) {
  if (arch.sgcn_channels.empty() || arch.sgcn_channels.front() != 3) {
    throw invalid_argument_error("S-GCN must take 3 input channels");
  }
  if (arch.ngcn_channels.empty() || arch.ngcn_channels.front() != 6) {
    throw invalid_argument_error("N-GCN must take 6 input channels");
  }
  std::mt19937_64 rng(seed);
  NetworkParams params;
  params.arch = arch;
  params.rng_seed = seed;
  params.sgcn = make_regressor(arch.sgcn_channels, false, rng);
  params.ngcn = make_regressor(arch.ngcn_channels, true, rng);
  return params;
}

std::vector<std::pair<std::string, DiffArray>> NetworkParams::named_parameters(ParamGroup group) const {
  std::vector<std::pair<std::string, DiffArray>> out;
  if (group != ParamGroup::ngcn) append_named(out, "sgcn", sgcn);
  if (group != ParamGroup::sgcn) append_named(out, "ngcn", ngcn);
  return out;
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : named_parameters()) n += static_cast<std::size_t>(p.value().size());
  return n;
}

void NetworkParams::zero_grad(ParamGroup group) const {
  for (const auto& [name, p] : named_parameters(group)) {
    DiffArray copy = p;
    copy.zero_grad();
  }
}

NetworkParams NetworkParams::clone() const {
  NetworkParams out;
  out.arch = arch;
  out.sgcn = clone_regressor(sgcn);
  out.ngcn = clone_regressor(ngcn);
  out.rng_seed = rng_seed;
  out.epoch = epoch;
  out.momentum = momentum;
  return out;
}

DiffArray forward_sgcn(const NetworkParams& params, const DiffArray& patch_positions, const EdgeList& edges) {
  check_channels("forward_sgcn", patch_positions, 3);
  const auto feats = params.sgcn.features(patch_positions, edges, params.arch.leaky_slope);
  return patch_positions + params.sgcn.head(feats);
}

DiffArray forward_sgcn(const NetworkParams& params, const DiffArray& patch_positions, const KnnGraph& graph) {
  return forward_sgcn(params, patch_positions, EdgeList::from_graph(graph));
}

DiffArray forward_ngcn(const NetworkParams& params, const DiffArray& features, const EdgeList& edges) {
  check_channels("forward_ngcn", features, 6);
  const auto feats = params.ngcn.features(features, edges, params.arch.leaky_slope);
  auto raw = params.ngcn.head(feats);
  if (params.ngcn.skip_gain.defined()) {
    raw = raw + ad::scale_by(ad::slice_cols(features, 3, 3), params.ngcn.skip_gain);
  }
  return ad::row_normalize(raw, kNormalEpsilon);
}

DiffArray forward_ngcn(const NetworkParams& params, const DiffArray& features, const KnnGraph& graph) {
  return forward_ngcn(params, features, EdgeList::from_graph(graph));
}

void sgd_step(NetworkParams& params, double learning_rate, double momentum, ParamGroup group) {
  if (!(learning_rate > 0.0)) throw invalid_argument_error("sgd_step: learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw invalid_argument_error("sgd_step: momentum must lie in [0, 1)");

  const auto all = params.named_parameters(ParamGroup::all);
  if (params.momentum.size() != all.size()) {
    params.momentum.clear();
    for (const auto& [name, p] : all) params.momentum.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  const auto selected = params.named_parameters(group);
  auto in_group = [&](const std::string& name) {
    return std::any_of(selected.begin(), selected.end(), [&](const auto& s) { return s.first == name; });
  };

  for (const auto& [name, p] : all) {
    if (in_group(name) && p.has_grad() && !p.grad().allFinite()) {
      throw training_divergence_error("sgd_step: non-finite gradient in parameter '" + name + "'");
    }
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto [name, p] = all[i];
    if (!in_group(name)) continue;
    Matrix& v = params.momentum[i];
    if (p.has_grad()) {
      v = momentum * v + p.grad();
    } else {
      v *= momentum;
    }
    p.mutable_value() -= learning_rate * v;
    p.zero_grad();
  }
}

double lr_schedule(std::size_t epoch, std::size_t total_epochs, double start, double end) {
  if (total_epochs < 2) return start;
  if (epoch >= total_epochs) throw invalid_argument_error("lr_schedule: epoch out of range");
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
  return start * std::pow(end / start, t);
}

nlohmann::json checkpoint_to_json(const NetworkParams& params) {
  nlohmann::json j;
  j["format"] = "geogcn-checkpoint";
  j["version"] = 1;
  j["architecture"] = {{"sgcn_channels", params.arch.sgcn_channels},
                       {"ngcn_channels", params.arch.ngcn_channels},
                       {"leaky_slope", params.arch.leaky_slope}};
  j["rng_seed"] = params.rng_seed;
  j["epoch"] = params.epoch;
  auto& arr = j["parameters"] = nlohmann::json::array();
  for (const auto& [name, p] : params.named_parameters()) {
    const Matrix& v = p.value();
    std::vector<double> flat(v.data(), v.data() + v.size());
    arr.push_back({{"name", name}, {"shape", {v.rows(), v.cols()}}, {"values", flat}});
  }
  return j;
}

NetworkParams checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "geogcn-checkpoint") throw validation_error("not a geogcn checkpoint");
    Architecture arch;
    const auto& a = j.at("architecture");
    arch.sgcn_channels = a.at("sgcn_channels").get<std::vector<std::size_t>>();
    arch.ngcn_channels = a.at("ngcn_channels").get<std::vector<std::size_t>>();
    arch.leaky_slope = a.at("leaky_slope").get<double>();

    NetworkParams params = NetworkParams::initialize(arch, j.at("rng_seed").get<std::uint64_t>());
    params.epoch = j.at("epoch").get<std::size_t>();
    const auto named = params.named_parameters();
    const auto& arr = j.at("parameters");
    if (arr.size() != named.size()) {
      throw validation_error("checkpoint has " + std::to_string(arr.size()) + " parameter arrays, architecture needs " +
                             std::to_string(named.size()));
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
      auto [name, p] = named[i];
      const auto& entry = arr[i];
      if (entry.at("name").get<std::string>() != name) {
        throw validation_error("checkpoint parameter " + std::to_string(i) + " is '" +
                               entry.at("name").get<std::string>() + "', expected '" + name + "'");
      }
      const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
      if (shape.size() != 2 || shape[0] != p.rows() || shape[1] != p.cols()) {
        throw validation_error("checkpoint parameter '" + name + "' has inconsistent shape");
      }
      const auto values = entry.at("values").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(values.size()) != p.rows() * p.cols()) {
        throw validation_error("checkpoint parameter '" + name + "' has wrong value count");
      }
      Matrix& m = p.mutable_value();
      std::copy(values.begin(), values.end(), m.data());
      if (!m.allFinite()) throw validation_error("checkpoint parameter '" + name + "' is not finite");
    }
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const NetworkParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open '" + path.string() + "' for writing");
  out << checkpoint_to_json(params).dump() << '\n';
  if (!out) throw io_error("failed writing '" + path.string() + "'");
}

NetworkParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open '" + path.string() + "' for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("cannot parse checkpoint '" + path.string() + "': " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace geogcn
