#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/LU>
#include <Eigen/QR>
#include <gtest/gtest.h>

#include <geogcn/autodiff.hpp>
#include <geogcn/point_cloud.hpp>

namespace geogcn::testing {

inline std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  return pts;
}

inline ad::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// N x 3 leaf holding the given rows.
inline ad::DiffArray points_parameter(const std::vector<Vec3>& pts) {
  return ad::DiffArray::parameter(ad::DiffArray::from_rows(pts).value());
}

inline Eigen::Matrix3d random_rotation(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::Matrix3d a;
  for (int i = 0; i < 9; ++i) a.data()[i] = g(rng);
  Eigen::HouseholderQR<Eigen::Matrix3d> qr(a);
  Eigen::Matrix3d q = qr.householderQ();
  if (q.determinant() < 0) q.col(0) *= -1.0;
  return q;
}

struct GradCheck {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Central finite differences (step h) of `loss` against the analytic
/// gradients of `leaves`. `loss` must rebuild its graph from the leaves on
/// every call. Error per leaf is |analytic - numeric| / max(|analytic|, |numeric|),
/// measured in the Euclidean norm over the leaf's entries.
inline GradCheck check_gradients(const std::function<ad::DiffArray()>& loss, std::vector<ad::DiffArray> leaves,
                                 double h = 1e-5, std::size_t max_entries_per_leaf = 0) {
  for (auto& leaf : leaves) leaf.zero_grad();
  ad::backward(loss());
  GradCheck result;
  for (auto& leaf : leaves) {
    const ad::Matrix analytic = leaf.grad();
    ad::Matrix numeric = ad::Matrix::Zero(analytic.rows(), analytic.cols());
    ad::Matrix& v = leaf.mutable_value();
    const Eigen::Index n = v.size();
    const Eigen::Index stride =
        max_entries_per_leaf == 0 ? 1 : std::max<Eigen::Index>(1, n / static_cast<Eigen::Index>(max_entries_per_leaf));
    ad::Matrix a_sel = ad::Matrix::Zero(analytic.rows(), analytic.cols());
    for (Eigen::Index i = 0; i < n; i += stride) {
      const double orig = v.data()[i];
      v.data()[i] = orig + h;
      const double up = loss().item();
      v.data()[i] = orig - h;
      const double down = loss().item();
      v.data()[i] = orig;
      numeric.data()[i] = (up - down) / (2.0 * h);
      a_sel.data()[i] = analytic.data()[i];
      ++result.checked;
    }
    const double denom = std::max({a_sel.norm(), numeric.norm(), 1e-8});
    result.max_relative_error = std::max(result.max_relative_error, (a_sel - numeric).norm() / denom);
  }
  for (auto& leaf : leaves) leaf.zero_grad();
  return result;
}

}  // namespace geogcn::testing
