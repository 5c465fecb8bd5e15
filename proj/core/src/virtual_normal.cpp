#include <geogcn/virtual_normal.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include <geogcn/errors.hpp>

namespace geogcn {

namespace {

// Slack on the angle bounds so that exact boundary cases (e.g. 45-45-90) survive rounding.
constexpr double kAngleSlack = 1e-9;

double angle_at(const Vec3& apex, const Vec3& p, const Vec3& q) {
  const Vec3 u = p - apex;
  const Vec3 v = q - apex;
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) return 0.0;
  const double c = std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
  return std::acos(c);
}

void check_indices(const TriangleSample& s, std::size_t n) {
  for (Index idx : s.indices) {
    if (idx >= n) throw invalid_argument_error("triangle sample index " + std::to_string(idx) + " out of range");
  }
}

}  // namespace

std::string VnSampleSet::to_json() const {
  nlohmann::json j;
  j["edge_threshold"] = edge_threshold;
  j["rng_seed"] = rng_seed;
  auto& arr = j["samples"] = nlohmann::json::array();
  for (const auto& s : samples) arr.push_back({s.indices[0], s.indices[1], s.indices[2]});
  return j.dump();
}

bool triangle_is_valid(const Vec3& a, const Vec3& b, const Vec3& c, double edge_threshold) {
  if ((b - a).norm() < edge_threshold || (c - b).norm() < edge_threshold || (a - c).norm() < edge_threshold) {
    return false;
  }
  constexpr double lo = std::numbers::pi / 4.0 - kAngleSlack;
  constexpr double hi = std::numbers::pi / 2.0 + kAngleSlack;
  for (double angle : {angle_at(a, b, c), angle_at(b, c, a), angle_at(c, a, b)}) {
    if (!(angle >= lo && angle <= hi)) return false;
  }
  return true;
}

VnSampleSet sample_vn_set(std::span<const Vec3> cloud, std::size_t n, double edge_threshold, std::uint64_t seed,
                          VnSamplingOptions options) {
  if (cloud.size() < 3) throw invalid_argument_error("sample_vn_set: cloud needs at least 3 points");
  if (n == 0) throw invalid_argument_error("sample_vn_set: n must be positive");

  const std::size_t budget = options.max_attempts > 0 ? options.max_attempts : 1000 * n;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> pick(0, cloud.size() - 1);

  VnSampleSet set;
  set.edge_threshold = edge_threshold;
  set.rng_seed = seed;
  set.samples.reserve(n);
  std::size_t attempts = 0;
  while (set.samples.size() < n) {
    if (attempts == budget) {
      const double rate = static_cast<double>(set.samples.size()) / static_cast<double>(attempts);
      throw sampling_exhausted_error("sample_vn_set: found " + std::to_string(set.samples.size()) + " of " +
                                         std::to_string(n) + " valid triangles in " + std::to_string(attempts) +
                                         " attempts (acceptance rate " + std::to_string(rate) + ")",
                                     rate);
    }
    ++attempts;
    const Index i = pick(rng);
    const Index j = pick(rng);
    const Index k = pick(rng);
    if (i == j || j == k || i == k) continue;
    if (triangle_is_valid(cloud[i], cloud[j], cloud[k], edge_threshold)) set.samples.push_back({{i, j, k}});
  }
  return set;
}

VnSampleSet sample_vn_set(const PointCloud& cloud, std::size_t n, double edge_threshold, std::uint64_t seed,
                          VnSamplingOptions options) {
  return sample_vn_set(cloud.positions(), n, edge_threshold, seed, options);
}

Normal virtual_normal(std::span<const Vec3> positions, const TriangleSample& sample) {
  check_indices(sample, positions.size());
  const Vec3& a = positions[sample.indices[0]];
  const Vec3 c = (positions[sample.indices[1]] - a).cross(positions[sample.indices[2]] - a);
  const double len = c.norm();
  if (len == 0.0) throw degenerate_input_error("virtual_normal: triangle has zero area");
  return {c / len, true};
}

ad::DiffArray vn_loss(const ad::DiffArray& pred, std::span<const Vec3> clean, const VnSampleSet& set) {
  if (pred.cols() != 3 || static_cast<std::size_t>(pred.rows()) != clean.size()) {
    throw invalid_argument_error("vn_loss: predicted and clean clouds are not index-aligned");
  }
  if (set.samples.empty()) throw invalid_argument_error("vn_loss: empty sample set");

  std::array<std::vector<std::size_t>, 3> corner;
  for (auto& c : corner) c.reserve(set.samples.size());
  for (const auto& sample : set.samples) {
    check_indices(sample, clean.size());
    for (int c = 0; c < 3; ++c) corner[c].push_back(sample.indices[c]);
  }

  // Both sides go through the same ops so identical clouds give exactly zero.
  auto triangle_normals = [&](const ad::DiffArray& x) {
    const auto xi = ad::gather_rows(x, corner[0]);
    return ad::row_normalize(ad::cross_rows(ad::gather_rows(x, corner[1]) - xi, ad::gather_rows(x, corner[2]) - xi),
                             kVnNormalizeEpsilon);
  };
  ad::Matrix reference = triangle_normals(ad::DiffArray::from_rows(clean)).value();
  const auto normals = triangle_normals(pred);
  return ad::mean(ad::row_norm(normals - ad::DiffArray::constant(std::move(reference))));
}

double vn_loss(std::span<const Vec3> pred, std::span<const Vec3> clean, const VnSampleSet& set) {
  return vn_loss(ad::DiffArray::from_rows(pred), clean, set).item();
}

double vn_loss(const PointCloud& pred, const PointCloud& clean, const VnSampleSet& set) {
  return vn_loss(pred.positions(), clean.positions(), set);
}

}  // namespace geogcn
