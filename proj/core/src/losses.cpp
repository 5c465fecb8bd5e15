#include <geogcn/losses.hpp>

#include <cmath>
#include <limits>
#include <string>

#include <geogcn/errors.hpp>

namespace geogcn {

void LossWeights::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw invalid_argument_error("loss weight alpha must lie in [0, 1]");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw invalid_argument_error("loss weight beta must be non-negative");
}

namespace {

// Shortest augmenting path Hungarian method with row/column potentials, O(n^3).
std::vector<Index> solve_assignment(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based; column 0 is a virtual start column.
  std::vector<double> u(n + 1, 0.0);
  std::vector<double> v(n + 1, 0.0);
  std::vector<std::size_t> row_of(n + 1, 0);
  std::vector<std::size_t> way(n + 1, 0);
  std::vector<double> minv(n + 1);
  std::vector<char> used(n + 1);

  for (std::size_t i = 1; i <= n; ++i) {
    row_of[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = row_of[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      row_of[j0] = row_of[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<Index> perm(n);
  for (std::size_t j = 1; j <= n; ++j) perm[row_of[j] - 1] = j - 1;
  return perm;
}

void check_emd_inputs(std::size_t np, std::size_t nq, std::size_t max_exact) {
  if (np != nq) {
    throw invalid_argument_error("emd: point sets differ in size (" + std::to_string(np) + " vs " + std::to_string(nq) +
                                 ")");
  }
  if (np == 0) throw invalid_argument_error("emd: point sets are empty");
  if (np > max_exact) {
    throw invalid_argument_error("emd: exact assignment limited to " + std::to_string(max_exact) + " points, got " +
                                 std::to_string(np) + "; reduce the patch size");
  }
}

}  // namespace

Assignment emd_assignment(std::span<const Vec3> p, std::span<const Vec3> q, std::size_t max_exact) {
  check_emd_inputs(p.size(), q.size(), max_exact);
  const auto n = static_cast<Eigen::Index>(p.size());
  Eigen::MatrixXd cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = (p[i] - q[j]).norm();
  }
  if (!std::isfinite(cost.sum())) throw invalid_argument_error("emd_assignment: non-finite distances");
  Assignment a;
  a.permutation = solve_assignment(cost);
  for (Eigen::Index i = 0; i < n; ++i) a.total_cost += cost(i, static_cast<Eigen::Index>(a.permutation[i]));
  return a;
}

ad::DiffArray emd_loss(const ad::DiffArray& p, std::span<const Vec3> q, std::size_t max_exact) {
  if (p.cols() != 3) throw invalid_argument_error("emd_loss: positions must be N x 3");
  const auto n = static_cast<std::size_t>(p.rows());
  std::vector<Vec3> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = p.row3(static_cast<Eigen::Index>(i));
  const Assignment a = emd_assignment(pts, q, max_exact);

  // Unit directions from matched targets; zero when a point sits on its match.
  ad::Matrix dir = ad::Matrix::Zero(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = pts[i] - q[a.permutation[i]];
    const double len = d.norm();
    if (len > 0.0) dir.row(static_cast<Eigen::Index>(i)) = (d / len).transpose();
  }

  ad::Matrix value(1, 1);
  value(0, 0) = a.total_cost / static_cast<double>(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  return ad::DiffArray::make(std::move(value), {p}, [dir = std::move(dir), inv_n](ad::detail::Node& self) {
    ad::detail::Node& x = *self.inputs[0];
    if (x.grad.size() == 0) x.grad = ad::Matrix::Zero(x.value.rows(), x.value.cols());
    x.grad += dir * (self.grad(0, 0) * inv_n);
  });
}

double emd_loss(std::span<const Vec3> p, std::span<const Vec3> q, std::size_t max_exact) {
  return emd_assignment(p, q, max_exact).total_cost / static_cast<double>(p.size());
}

ad::DiffArray rn_loss(const ad::DiffArray& pred_normals, std::span<const Vec3> gt_normals) {
  if (pred_normals.cols() != 3 || static_cast<std::size_t>(pred_normals.rows()) != gt_normals.size()) {
    throw invalid_argument_error("rn_loss: predicted and reference normal counts differ");
  }
  const auto gt = ad::DiffArray::from_rows(gt_normals);
  const auto minus = ad::row_sqnorm(gt - pred_normals);
  const auto plus = ad::row_sqnorm(gt + pred_normals);
  return ad::sum(ad::min_select(minus, plus));
}

double rn_loss(std::span<const Vec3> pred_normals, std::span<const Vec3> gt_normals) {
  if (pred_normals.size() != gt_normals.size()) {
    throw invalid_argument_error("rn_loss: predicted and reference normal counts differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < gt_normals.size(); ++i) {
    total += std::min((gt_normals[i] - pred_normals[i]).squaredNorm(), (gt_normals[i] + pred_normals[i]).squaredNorm());
  }
  return total;
}

ad::DiffArray total_loss(const ad::DiffArray& emd, const ad::DiffArray& vn, const ad::DiffArray& rn,
                         const LossWeights& w) {
  w.validate();
  return emd * w.alpha + vn * (1.0 - w.alpha) + rn * w.beta;
}

double total_loss(double emd, double vn, double rn, const LossWeights& w) {
  w.validate();
  return w.alpha * emd + (1.0 - w.alpha) * vn + w.beta * rn;
}

}  // namespace geogcn
