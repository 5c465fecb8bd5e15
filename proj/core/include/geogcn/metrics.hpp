#pragma once

#include <span>
#include <utility>

#include <geogcn/point_cloud.hpp>

namespace geogcn {

// 0.5 * (mean_p min_q |p-q|^2 + mean_q min_p |q-p|^2)
double chamfer_distance(std::span<const Vec3> p, std::span<const Vec3> q);
double chamfer_distance(const PointCloud& p, const PointCloud& q);

// mean_p min_ref |p-ref|^2, one-directional.
double mse_to_reference(std::span<const Vec3> p, std::span<const Vec3> ref);
double mse_to_reference(const PointCloud& p, const PointCloud& ref);

/// Both clouds translated and scaled together so that the bounding box of
/// their union has unit diagonal. Symmetric in its arguments.
std::pair<PointCloud, PointCloud> normalize_jointly(const PointCloud& a, const PointCloud& b);

struct Metrics {
  double cd = 0.0;
  double mse = 0.0;
};

// CD and MSE of `denoised` against `clean` after joint unit-diagonal normalization.
Metrics evaluate_clouds(const PointCloud& denoised, const PointCloud& clean);

}  // namespace geogcn
