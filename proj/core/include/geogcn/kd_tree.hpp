#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <geogcn/point_cloud.hpp>

namespace geogcn {

struct Neighbor {
  Index index;
  double squared_distance;
};

/// Exact k-nearest-neighbour index over a fixed point set.
///
/// Results are ordered by (squared distance, index), so equidistant points are
/// reported lowest index first. The tree keeps a copy of the points.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

  std::vector<Neighbor> knn(const Vec3& query, std::size_t k, std::optional<Index> exclude = std::nullopt) const;

  Neighbor nearest(const Vec3& query) const;

 private:
  struct Node {
    Vec3 lo;
    Vec3 hi;
    std::size_t begin;
    std::size_t end;
    int left = -1;
    int right = -1;
  };

  int build(std::size_t begin, std::size_t end);

  std::vector<Vec3> points_;
  std::vector<Index> order_;
  std::vector<Node> nodes_;
};

}  // namespace geogcn
