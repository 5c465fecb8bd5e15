#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace geogcn {

using Vec3 = Eigen::Vector3d;
using Index = std::size_t;

/// Positions (and optionally unit normals) of surface samples.
///
/// Construction validates the invariants: at least one point, finite
/// coordinates, and normals index-aligned with positions and of unit length
/// (within 1e-6). Noisy/clean pairs share index order.
class PointCloud {
 public:
  explicit PointCloud(std::vector<Vec3> positions, std::optional<std::vector<Vec3>> normals = std::nullopt,
                      std::string name = {});

  std::size_t size() const { return positions_.size(); }
  const std::vector<Vec3>& positions() const { return positions_; }
  const Vec3& position(Index i) const { return positions_[i]; }

  bool has_normals() const { return normals_.has_value(); }
  const std::vector<Vec3>& normals() const;

  const std::string& name() const { return name_; }

  PointCloud with_positions(std::vector<Vec3> positions) const;
  PointCloud with_normals(std::vector<Vec3> normals) const;
  PointCloud without_normals() const;

  // Axis-aligned bounding box.
  Vec3 min_corner() const;
  Vec3 max_corner() const;
  double diagonal() const;

 private:
  std::vector<Vec3> positions_;
  std::optional<std::vector<Vec3>> normals_;
  std::string name_;
};

struct Normal {
  Vec3 direction;
  bool oriented = false;
};

/// For each point, the indices of its k nearest other points sorted by
/// ascending distance (ties by lower index).
struct KnnGraph {
  std::size_t k = 0;
  std::vector<std::vector<Index>> neighbor_indices;

  std::size_t size() const { return neighbor_indices.size(); }
  const std::vector<Index>& neighbors(Index i) const { return neighbor_indices[i]; }
};

/// A seed point and its nearest neighbours, with the map into the unit ball.
struct Patch {
  Index seed_index = 0;
  std::vector<Index> member_indices;  // seed first
  Vec3 centroid_offset = Vec3::Zero();
  double scale = 1.0;

  std::size_t size() const { return member_indices.size(); }

  Vec3 normalize(const Vec3& p) const { return (p - centroid_offset) / scale; }
  Vec3 denormalize(const Vec3& p) const { return p * scale + centroid_offset; }

  // Member positions of `cloud` (which must be index-aligned with the parent) in patch coordinates.
  std::vector<Vec3> normalized_positions(std::span<const Vec3> cloud) const;
};

class KdTree;

KnnGraph build_knn_graph(const PointCloud& cloud, std::size_t k);
KnnGraph build_knn_graph(std::span<const Vec3> points, std::size_t k);

Patch extract_patch(const PointCloud& cloud, Index seed_index, std::size_t k);
Patch extract_patch(const KdTree& tree, Index seed_index, std::size_t k);

/// Unit eigenvector of the smallest covariance eigenvalue, flipped so that its
/// largest-magnitude component is positive (earliest axis wins ties).
Normal pca_normal(std::span<const Vec3> points);

/// PCA normal of every point over itself plus its graph neighbours.
PointCloud estimate_all_normals(const PointCloud& cloud, const KnnGraph& graph);
std::vector<Vec3> estimate_all_normals(std::span<const Vec3> points, const KnnGraph& graph);

}  // namespace geogcn
