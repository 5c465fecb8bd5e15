#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <geogcn/point_cloud.hpp>

namespace geogcn {

/// Parameters of the normal-guided position update.
struct FilterConfig {
  double lambda = 0.5;
  double sigma = 0.3;
  std::size_t iterations = 10;
  std::size_t k_neighbors = 16;
  // Use the scalar n^T n (== 1) in place of the projector n n^T.
  bool literal_scalar_form = false;

  void validate() const;
};

/// exp(-|n_i - n_j|^2 / sigma^2)
double bilateral_weight(const Vec3& n_i, const Vec3& n_j, double sigma);

/// One Jacobi sweep:
///   p_i' = p_i + 1/(3|N_i|) * sum_j (W(n_i, n_j) n_i n_i^T + lambda n_j n_j^T)(p_j - p_i)
std::vector<Vec3> filter_step(std::span<const Vec3> positions, std::span<const Vec3> normals, const KnnGraph& graph,
                              const FilterConfig& cfg);

/// Runs `cfg.iterations` steps on a cloud with unit normals, rebuilding the
/// kNN graph before every step. Normals stay fixed.
PointCloud final_denoise(const PointCloud& cloud, const FilterConfig& cfg);

}  // namespace geogcn
