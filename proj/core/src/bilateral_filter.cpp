#include <geogcn/bilateral_filter.hpp>

#include <cmath>

#include <geogcn/errors.hpp>

namespace geogcn {

void FilterConfig::validate() const {
  if (!(sigma > 0.0)) throw invalid_argument_error("filter sigma must be positive");
  if (iterations < 1) throw invalid_argument_error("filter iterations must be at least 1");
  if (!(lambda >= 0.0)) throw invalid_argument_error("filter lambda must be non-negative");
  if (k_neighbors < 1) throw invalid_argument_error("filter neighbourhood size must be at least 1");
}

double bilateral_weight(const Vec3& n_i, const Vec3& n_j, double sigma) {
  return std::exp(-(n_i - n_j).squaredNorm() / (sigma * sigma));
}

std::vector<Vec3> filter_step(std::span<const Vec3> positions, std::span<const Vec3> normals, const KnnGraph& graph,
                              const FilterConfig& cfg) {
  if (normals.size() != positions.size() || graph.size() != positions.size()) {
    throw invalid_argument_error("filter_step: positions, normals and graph must be index-aligned");
  }
  if (!(cfg.sigma > 0.0) || !(cfg.lambda >= 0.0)) throw invalid_argument_error("filter_step: invalid configuration");

  std::vector<Vec3> out(positions.size());
  for (Index i = 0; i < positions.size(); ++i) {
    const auto& nbrs = graph.neighbors(i);
    const Vec3& p = positions[i];
    const Vec3& ni = normals[i];
    Vec3 delta = Vec3::Zero();
    for (Index j : nbrs) {
      const Vec3 d = positions[j] - p;
      const Vec3& nj = normals[j];
      const double w = bilateral_weight(ni, nj, cfg.sigma);
      if (cfg.literal_scalar_form) {
        delta += (w + cfg.lambda) * d;
      } else {
        delta += w * ni.dot(d) * ni + cfg.lambda * nj.dot(d) * nj;
      }
    }
    const double gamma = nbrs.empty() ? 0.0 : 1.0 / (3.0 * static_cast<double>(nbrs.size()));
    out[i] = p + gamma * delta;
  }
  return out;
}

PointCloud final_denoise(const PointCloud& cloud, const FilterConfig& cfg) {
  cfg.validate();
  const auto& normals = cloud.normals();
  std::vector<Vec3> pos = cloud.positions();
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const KnnGraph graph = build_knn_graph(pos, cfg.k_neighbors);
    pos = filter_step(pos, normals, graph, cfg);
  }
  return cloud.with_positions(std::move(pos));
}

}  // namespace geogcn
