#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <geogcn/autodiff.hpp>
#include <geogcn/point_cloud.hpp>

namespace geogcn {

/// Weights of the combined objective alpha*EMD + (1-alpha)*VN + beta*RN.
struct LossWeights {
  double alpha = 0.9;
  double beta = 0.1;

  void validate() const;
};

/// Minimum-cost perfect matching between equal-size point sets.
struct Assignment {
  std::vector<Index> permutation;  // predicted index -> target index
  double total_cost = 0.0;         // sum of matched Euclidean distances
};

inline constexpr std::size_t kDefaultMaxExactAssignment = 512;

/// Exact Hungarian matching under Euclidean cost. Refuses sets larger than `max_exact`.
Assignment emd_assignment(std::span<const Vec3> p, std::span<const Vec3> q,
                          std::size_t max_exact = kDefaultMaxExactAssignment);

/// Mean matched distance of the optimal assignment. The backward pass keeps
/// the assignment fixed and differentiates the matched distances.
ad::DiffArray emd_loss(const ad::DiffArray& p, std::span<const Vec3> q,
                       std::size_t max_exact = kDefaultMaxExactAssignment);
double emd_loss(std::span<const Vec3> p, std::span<const Vec3> q, std::size_t max_exact = kDefaultMaxExactAssignment);

/// Sign-free normal loss: sum_i min(|g_i - p_i|^2, |g_i + p_i|^2).
/// On ties the gradient follows the |g - p| branch.
ad::DiffArray rn_loss(const ad::DiffArray& pred_normals, std::span<const Vec3> gt_normals);
double rn_loss(std::span<const Vec3> pred_normals, std::span<const Vec3> gt_normals);

ad::DiffArray total_loss(const ad::DiffArray& emd, const ad::DiffArray& vn, const ad::DiffArray& rn,
                         const LossWeights& w);
double total_loss(double emd, double vn, double rn, const LossWeights& w);

}  // namespace geogcn
