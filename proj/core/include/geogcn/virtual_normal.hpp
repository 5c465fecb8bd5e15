#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <geogcn/autodiff.hpp>
#include <geogcn/point_cloud.hpp>

namespace geogcn {

/// Index triple (i, j, k) whose triangle normal is compared between clouds.
struct TriangleSample {
  std::array<Index, 3> indices{};

  friend bool operator==(const TriangleSample&, const TriangleSample&) = default;
};

struct VnSampleSet {
  std::vector<TriangleSample> samples;
  double edge_threshold = 0.0;
  std::uint64_t rng_seed = 0;

  std::size_t size() const { return samples.size(); }
  std::string to_json() const;
};

inline constexpr double kMinTriangleAngleDeg = 45.0;
inline constexpr double kMaxTriangleAngleDeg = 90.0;

/// True iff all edges are at least `edge_threshold` long and all interior
/// angles lie in [45, 90] degrees (inclusive). Collinear triples fail.
bool triangle_is_valid(const Vec3& a, const Vec3& b, const Vec3& c, double edge_threshold);

struct VnSamplingOptions {
  // 0 means 1000 * n.
  std::size_t max_attempts = 0;
};

/// Rejection-samples `n` valid triangles from uniformly drawn index triples.
/// Throws sampling_exhausted_error when the attempt budget runs out.
VnSampleSet sample_vn_set(std::span<const Vec3> cloud, std::size_t n, double edge_threshold, std::uint64_t seed,
                          VnSamplingOptions options = {});
VnSampleSet sample_vn_set(const PointCloud& cloud, std::size_t n, double edge_threshold, std::uint64_t seed,
                          VnSamplingOptions options = {});

// normalize(cross(p_j - p_i, p_k - p_i)); throws degenerate_input_error for zero area.
Normal virtual_normal(std::span<const Vec3> positions, const TriangleSample& sample);

inline constexpr double kVnNormalizeEpsilon = 1e-12;

/// Mean Euclidean distance between predicted and reference virtual normals
/// over the shared index triples. Differentiable w.r.t. `pred` (N x 3).
ad::DiffArray vn_loss(const ad::DiffArray& pred, std::span<const Vec3> clean, const VnSampleSet& set);
double vn_loss(std::span<const Vec3> pred, std::span<const Vec3> clean, const VnSampleSet& set);
double vn_loss(const PointCloud& pred, const PointCloud& clean, const VnSampleSet& set);

}  // namespace geogcn
