#include <geogcn/point_cloud.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include <geogcn/errors.hpp>
#include <geogcn/kd_tree.hpp>

namespace geogcn {

PointCloud::PointCloud(std::vector<Vec3> positions, std::optional<std::vector<Vec3>> normals, std::string name)
    : positions_(std::move(positions)), normals_(std::move(normals)), name_(std::move(name)) {
  if (positions_.empty()) throw validation_error("point cloud must contain at least one point");
  for (std::size_t i = 0; i < positions_.size(); ++i) {
    if (!positions_[i].allFinite()) {
      throw validation_error("non-finite coordinate at point " + std::to_string(i));
    }
  }
  if (normals_) {
    if (normals_->size() != positions_.size()) {
      throw validation_error("normals count " + std::to_string(normals_->size()) + " does not match positions count " +
                             std::to_string(positions_.size()));
    }
    for (std::size_t i = 0; i < normals_->size(); ++i) {
      const Vec3& n = (*normals_)[i];
      if (!n.allFinite() || std::abs(n.norm() - 1.0) > 1e-6) {
        throw validation_error("normal at point " + std::to_string(i) + " is not unit length");
      }
    }
  }
}

const std::vector<Vec3>& PointCloud::normals() const {
  if (!normals_) throw invalid_argument_error("point cloud '" + name_ + "' has no normals");
  return *normals_;
}

PointCloud PointCloud::with_positions(std::vector<Vec3> positions) const {
  return PointCloud(std::move(positions), normals_, name_);
}

PointCloud PointCloud::with_normals(std::vector<Vec3> normals) const {
  return PointCloud(positions_, std::move(normals), name_);
}

PointCloud PointCloud::without_normals() const { return PointCloud(positions_, std::nullopt, name_); }

Vec3 PointCloud::min_corner() const {
  Vec3 lo = positions_.front();
  for (const auto& p : positions_) lo = lo.cwiseMin(p);
  return lo;
}

Vec3 PointCloud::max_corner() const {
  Vec3 hi = positions_.front();
  for (const auto& p : positions_) hi = hi.cwiseMax(p);
  return hi;
}

double PointCloud::diagonal() const { return (max_corner() - min_corner()).norm(); }

std::vector<Vec3> Patch::normalized_positions(std::span<const Vec3> cloud) const {
  std::vector<Vec3> out;
  out.reserve(member_indices.size());
  for (Index i : member_indices) out.push_back(normalize(cloud[i]));
  return out;
}

KnnGraph build_knn_graph(std::span<const Vec3> points, std::size_t k) {
  if (k < 1) throw invalid_argument_error("build_knn_graph: k must be at least 1");
  if (points.size() <= k) {
    throw invalid_argument_error("build_knn_graph: cloud of " + std::to_string(points.size()) +
                                 " points cannot supply k=" + std::to_string(k) + " neighbours");
  }
  const KdTree tree(points);
  KnnGraph graph;
  graph.k = k;
  graph.neighbor_indices.resize(points.size());
  for (Index i = 0; i < points.size(); ++i) {
    auto& nbrs = graph.neighbor_indices[i];
    nbrs.reserve(k);
    for (const auto& n : tree.knn(points[i], k, i)) nbrs.push_back(n.index);
  }
  return graph;
}

KnnGraph build_knn_graph(const PointCloud& cloud, std::size_t k) { return build_knn_graph(cloud.positions(), k); }

Patch extract_patch(const KdTree& tree, Index seed_index, std::size_t k) {
  if (k < 1) throw invalid_argument_error("extract_patch: k must be at least 1");
  if (tree.size() < k) {
    throw invalid_argument_error("extract_patch: cloud of " + std::to_string(tree.size()) +
                                 " points is smaller than patch size " + std::to_string(k));
  }
  if (seed_index >= tree.size()) throw invalid_argument_error("extract_patch: seed index out of range");

  const Vec3& seed = tree.points()[seed_index];
  Patch patch;
  patch.seed_index = seed_index;
  patch.centroid_offset = seed;
  patch.member_indices.reserve(k);
  patch.member_indices.push_back(seed_index);

  double max_sq = 0.0;
  for (const auto& n : tree.knn(seed, k - 1, seed_index)) {
    patch.member_indices.push_back(n.index);
    max_sq = std::max(max_sq, n.squared_distance);
  }
  patch.scale = max_sq > 0.0 ? std::sqrt(max_sq) : 1.0;
  return patch;
}

Patch extract_patch(const PointCloud& cloud, Index seed_index, std::size_t k) {
  if (cloud.size() < k) {
    throw invalid_argument_error("extract_patch: cloud of " + std::to_string(cloud.size()) +
                                 " points is smaller than patch size " + std::to_string(k));
  }
  return extract_patch(KdTree(cloud.positions()), seed_index, k);
}

Normal pca_normal(std::span<const Vec3> points) {
  if (points.size() < 3) throw degenerate_input_error("pca_normal: at least 3 points required");

  Vec3 mean = Vec3::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - mean;
    cov.noalias() += d * d.transpose();
  }
  if (cov.isZero(0.0)) throw degenerate_input_error("pca_normal: all points coincide");

  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  Vec3 n = solver.eigenvectors().col(0).normalized();

  int axis = 0;
  for (int a = 1; a < 3; ++a) {
    if (std::abs(n[a]) > std::abs(n[axis])) axis = a;
  }
  if (n[axis] < 0.0) n = -n;
  return {n, false};
}

std::vector<Vec3> estimate_all_normals(std::span<const Vec3> points, const KnnGraph& graph) {
  if (graph.size() != points.size()) throw invalid_argument_error("estimate_all_normals: graph does not match cloud");
  if (graph.k < 2) throw invalid_argument_error("estimate_all_normals: neighbourhoods need at least 3 points");

  std::vector<Vec3> normals(points.size());
  std::vector<Index> bad;
  std::vector<Vec3> local;
  for (Index i = 0; i < points.size(); ++i) {
    local.clear();
    local.push_back(points[i]);
    for (Index j : graph.neighbors(i)) local.push_back(points[j]);
    try {
      normals[i] = pca_normal(local).direction;
    } catch (const degenerate_input_error&) {
      bad.push_back(i);
    }
  }
  if (!bad.empty()) {
    std::ostringstream msg;
    msg << "estimate_all_normals: degenerate neighbourhood at " << bad.size() << " point(s):";
    for (std::size_t b = 0; b < std::min<std::size_t>(bad.size(), 20); ++b) msg << ' ' << bad[b];
    if (bad.size() > 20) msg << " ...";
    throw degenerate_input_error(msg.str());
  }
  return normals;
}

PointCloud estimate_all_normals(const PointCloud& cloud, const KnnGraph& graph) {
  return cloud.with_normals(estimate_all_normals(cloud.positions(), graph));
}

}  // namespace geogcn
