#include <geogcn/metrics.hpp>

#include <geogcn/errors.hpp>
#include <geogcn/kd_tree.hpp>

namespace geogcn {

namespace {

double mean_nearest_squared(std::span<const Vec3> from, std::span<const Vec3> to) {
  const KdTree tree(to);
  double total = 0.0;
  for (const auto& p : from) total += tree.nearest(p).squared_distance;
  return total / static_cast<double>(from.size());
}

void require_non_empty(std::span<const Vec3> p, std::span<const Vec3> q, const char* op) {
  if (p.empty() || q.empty()) throw invalid_argument_error(std::string(op) + ": empty point cloud");
}

}  // namespace

double chamfer_distance(std::span<const Vec3> p, std::span<const Vec3> q) {
  require_non_empty(p, q, "chamfer_distance");
  return 0.5 * (mean_nearest_squared(p, q) + mean_nearest_squared(q, p));
}

double chamfer_distance(const PointCloud& p, const PointCloud& q) {
  return chamfer_distance(p.positions(), q.positions());
}

double mse_to_reference(std::span<const Vec3> p, std::span<const Vec3> ref) {
  require_non_empty(p, ref, "mse_to_reference");
  return mean_nearest_squared(p, ref);
}

double mse_to_reference(const PointCloud& p, const PointCloud& ref) {
  return mse_to_reference(p.positions(), ref.positions());
}

std::pair<PointCloud, PointCloud> normalize_jointly(const PointCloud& a, const PointCloud& b) {
  const Vec3 lo = a.min_corner().cwiseMin(b.min_corner());
  const Vec3 hi = a.max_corner().cwiseMax(b.max_corner());
  const Vec3 center = 0.5 * (lo + hi);
  double diag = (hi - lo).norm();
  if (diag == 0.0) diag = 1.0;

  auto map = [&](const PointCloud& c) {
    std::vector<Vec3> pts;
    pts.reserve(c.size());
    for (const auto& p : c.positions()) pts.push_back((p - center) / diag);
    return c.with_positions(std::move(pts));
  };
  return {map(a), map(b)};
}

Metrics evaluate_clouds(const PointCloud& denoised, const PointCloud& clean) {
  const auto [d, c] = normalize_jointly(denoised, clean);
  return {chamfer_distance(d, c), mse_to_reference(d, c)};
}

}  // namespace geogcn
