#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <geogcn/errors.hpp>
#include <geogcn/kd_tree.hpp>
#include <geogcn/point_cloud.hpp>

#include "test_support.hpp"

using namespace geogcn;
using geogcn::testing::random_points;
using geogcn::testing::random_rotation;

namespace {

// O(N^2) oracle: sort all other points by (squared distance, index).
std::vector<std::vector<Index>> brute_force_knn(const std::vector<Vec3>& pts, std::size_t k) {
  std::vector<std::vector<Index>> out(pts.size());
  for (Index i = 0; i < pts.size(); ++i) {
    std::vector<std::pair<double, Index>> d;
    for (Index j = 0; j < pts.size(); ++j) {
      if (j != i) d.emplace_back((pts[j] - pts[i]).squaredNorm(), j);
    }
    std::sort(d.begin(), d.end());
    for (std::size_t e = 0; e < k; ++e) out[i].push_back(d[e].second);
  }
  return out;
}

std::vector<Vec3> plane_sample(std::size_t n, const Vec3& normal, std::uint64_t seed) {
  const Vec3 nn = normal.normalized();
  Vec3 u = nn.unitOrthogonal();
  Vec3 v = nn.cross(u);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = d(rng) * u + d(rng) * v;
  return pts;
}

}  // namespace

TEST(PointCloud, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(PointCloud(std::vector<Vec3>{}), validation_error);
  EXPECT_THROW(PointCloud({Vec3(0, 0, std::nan(""))}), validation_error);
  EXPECT_THROW(PointCloud({Vec3(0, std::numeric_limits<double>::infinity(), 0)}), validation_error);
}

TEST(PointCloud, RejectsMisalignedOrNonUnitNormals) {
  EXPECT_THROW(PointCloud({Vec3::Zero(), Vec3::UnitX()}, std::vector<Vec3>{Vec3::UnitZ()}), validation_error);
  EXPECT_THROW(PointCloud({Vec3::Zero()}, std::vector<Vec3>{Vec3(0, 0, 1.01)}), validation_error);
  EXPECT_NO_THROW(PointCloud({Vec3::Zero()}, std::vector<Vec3>{Vec3(0, 0, 1.0 + 5e-7)}));
}

TEST(PointCloud, BoundingBox) {
  PointCloud c({Vec3(0, 0, 0), Vec3(1, 2, 2)});
  EXPECT_DOUBLE_EQ(c.diagonal(), 3.0);
  EXPECT_EQ(c.min_corner(), Vec3(0, 0, 0));
  EXPECT_EQ(c.max_corner(), Vec3(1, 2, 2));
  EXPECT_THROW(c.normals(), invalid_argument_error);
}

TEST(KnnGraph, CollinearExample) {
  const auto g = build_knn_graph(PointCloud({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(4, 0, 0)}), 1);
  EXPECT_EQ(g.neighbors(0), std::vector<Index>{1});
  EXPECT_EQ(g.neighbors(1), std::vector<Index>{0});
  EXPECT_EQ(g.neighbors(2), std::vector<Index>{1});
  EXPECT_EQ(g.neighbors(3), std::vector<Index>{2});
}

TEST(KnnGraph, TwoPoints) {
  const auto g = build_knn_graph(PointCloud({Vec3(0, 0, 0), Vec3(0, 0, 5)}), 1);
  EXPECT_EQ(g.neighbors(0), std::vector<Index>{1});
  EXPECT_EQ(g.neighbors(1), std::vector<Index>{0});
}

TEST(KnnGraph, SquareCornersTieBrokenByIndex) {
  // 0 (0,0)  1 (1,0)  2 (1,1)  3 (0,1)
  const auto g = build_knn_graph(PointCloud({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(0, 1, 0)}), 2);
  EXPECT_EQ(g.neighbors(0), (std::vector<Index>{1, 3}));
  EXPECT_EQ(g.neighbors(1), (std::vector<Index>{0, 2}));
  EXPECT_EQ(g.neighbors(2), (std::vector<Index>{1, 3}));
  EXPECT_EQ(g.neighbors(3), (std::vector<Index>{0, 2}));
}

TEST(KnnGraph, RequiresMorePointsThanK) {
  EXPECT_THROW(build_knn_graph(PointCloud({Vec3(0, 0, 0), Vec3(1, 0, 0)}), 2), invalid_argument_error);
  EXPECT_THROW(build_knn_graph(PointCloud({Vec3(0, 0, 0), Vec3(1, 0, 0)}), 0), invalid_argument_error);
}

TEST(KnnGraph, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const std::size_t n = 2 + (seed * 37) % 199;
    const std::size_t k = 1 + seed % std::min<std::size_t>(n - 1, 20);
    const auto pts = random_points(n, seed);
    const auto g = build_knn_graph(pts, k);
    EXPECT_EQ(g.neighbor_indices, brute_force_knn(pts, k)) << "n=" << n << " k=" << k;
  }
}

TEST(KnnGraph, MatchesOracleOnLatticeWithManyTies) {
  std::vector<Vec3> pts;
  for (int x = 0; x < 5; ++x) {
    for (int y = 0; y < 5; ++y) {
      for (int z = 0; z < 4; ++z) pts.emplace_back(x, y, z);
    }
  }
  for (std::size_t k : {1, 4, 6, 7, 18, 30}) {
    EXPECT_EQ(build_knn_graph(pts, k).neighbor_indices, brute_force_knn(pts, k)) << "k=" << k;
  }
}

TEST(KnnGraph, NoSelfAndNonDecreasingDistances) {
  const auto pts = random_points(500, 99);
  const auto g = build_knn_graph(pts, 12);
  for (Index i = 0; i < pts.size(); ++i) {
    ASSERT_EQ(g.neighbors(i).size(), 12u);
    double prev = 0.0;
    for (Index j : g.neighbors(i)) {
      EXPECT_NE(j, i);
      const double d = (pts[j] - pts[i]).squaredNorm();
      EXPECT_GE(d, prev);
      prev = d;
    }
  }
}

TEST(KdTree, DuplicatePointsReportedByIndex) {
  std::vector<Vec3> pts(30, Vec3(1, 1, 1));
  pts.push_back(Vec3(0, 0, 0));
  KdTree tree(pts);
  const auto nn = tree.knn(Vec3(1, 1, 1), 5, Index{2});
  ASSERT_EQ(nn.size(), 5u);
  EXPECT_EQ(nn[0].index, 0u);
  EXPECT_EQ(nn[1].index, 1u);
  EXPECT_EQ(nn[2].index, 3u);
  EXPECT_EQ(tree.nearest(Vec3(0.1, 0, 0)).index, 30u);
}

TEST(Patch, WholeCloud) {
  const PointCloud c(random_points(5, 3));
  const Patch p = extract_patch(c, 2, 5);
  EXPECT_EQ(p.member_indices.front(), 2u);
  auto sorted = p.member_indices;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<Index>{0, 1, 2, 3, 4}));
}

TEST(Patch, ScaleIsMaxSeedDistance) {
  const PointCloud c({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, -2, 0), Vec3(0, 0, 0.5), Vec3(9, 9, 9)});
  const Patch p = extract_patch(c, 0, 4);
  EXPECT_EQ(p.seed_index, 0u);
  EXPECT_DOUBLE_EQ(p.scale, 2.0);
  EXPECT_EQ(p.centroid_offset, Vec3::Zero());
  double max_r = 0.0;
  for (const auto& q : p.normalized_positions(c.positions())) max_r = std::max(max_r, q.norm());
  EXPECT_NEAR(max_r, 1.0, 1e-9);
}

TEST(Patch, SinglePointAndCoincidentMembers) {
  const PointCloud c(random_points(10, 4));
  const Patch single = extract_patch(c, 7, 1);
  EXPECT_EQ(single.member_indices, std::vector<Index>{7});
  EXPECT_EQ(single.scale, 1.0);

  const PointCloud same(std::vector<Vec3>(6, Vec3(2, 3, 4)));
  EXPECT_EQ(extract_patch(same, 0, 4).scale, 1.0);
}

TEST(Patch, RejectsTooLargeK) {
  const PointCloud c(random_points(4, 5));
  EXPECT_THROW(extract_patch(c, 0, 5), invalid_argument_error);
  EXPECT_THROW(extract_patch(c, 4, 2), invalid_argument_error);
}

TEST(Patch, NormalizationIsInvertibleAndBounded) {
  const PointCloud c(random_points(300, 6, -5.0, 5.0));
  for (Index seed : {0u, 17u, 299u}) {
    const Patch p = extract_patch(c, seed, 40);
    EXPECT_EQ(p.member_indices.front(), seed);
    std::vector<Index> sorted = p.member_indices;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
    double max_r = 0.0;
    for (Index i : p.member_indices) {
      const Vec3 q = p.normalize(c.position(i));
      max_r = std::max(max_r, q.norm());
      EXPECT_LE((p.denormalize(q) - c.position(i)).cwiseAbs().maxCoeff(), 1e-9);
    }
    EXPECT_NEAR(max_r, 1.0, 1e-9);
  }
}

TEST(PcaNormal, PlaneZ) {
  const auto n = pca_normal(plane_sample(50, Vec3::UnitZ(), 1));
  EXPECT_FALSE(n.oriented);
  EXPECT_NEAR(n.direction.z(), 1.0, 1e-12);
}

TEST(PcaNormal, TiltedPlane) {
  const auto n = pca_normal(plane_sample(50, Vec3(1, 1, 1), 2));
  EXPECT_GE(std::abs(n.direction.dot(Vec3(1, 1, 1).normalized())), 1.0 - 1e-9);
}

TEST(PcaNormal, ThreePointsGiveTriangleNormal) {
  const Vec3 a(0.2, -1, 0.5), b(1.5, 0.3, -0.2), c(-0.7, 0.9, 1.1);
  const auto n = pca_normal(std::vector<Vec3>{a, b, c});
  EXPECT_GE(std::abs(n.direction.dot((b - a).cross(c - a).normalized())), 1.0 - 1e-9);
}

TEST(PcaNormal, SignConventionLargestComponentPositive) {
  const auto n = pca_normal(plane_sample(40, Vec3(0.2, -0.9, 0.1), 3));
  EXPECT_GT(n.direction.y(), 0.0);
  EXPECT_NEAR(n.direction.norm(), 1.0, 1e-12);
}

TEST(PcaNormal, Degenerate) {
  EXPECT_THROW(pca_normal(std::vector<Vec3>{Vec3::Zero(), Vec3::UnitX()}), degenerate_input_error);
  EXPECT_THROW(pca_normal(std::vector<Vec3>(5, Vec3(1, 2, 3))), degenerate_input_error);
}

TEST(PcaNormal, CoplanarIsExactlyOrthogonal) {
  const auto pts = plane_sample(30, Vec3(0.3, -0.4, 0.8), 4);
  const auto n = pca_normal(pts).direction;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    EXPECT_LE(std::abs(n.dot((pts[i] - pts[0]).normalized())), 1e-9);
  }
}

TEST(PcaNormal, RotationEquivariant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto pts = random_points(25, 100 + seed);
    for (auto& p : pts) p.z() *= 0.1;  // well separated smallest eigenvalue
    const Eigen::Matrix3d r = random_rotation(seed);
    std::vector<Vec3> rotated;
    for (const auto& p : pts) rotated.push_back(r * p);
    const Vec3 expected = r * pca_normal(pts).direction;
    const Vec3 got = pca_normal(rotated).direction;
    EXPECT_LE(std::min((got - expected).norm(), (got + expected).norm()), 1e-6);
  }
}

TEST(EstimateNormals, PlaneSample) {
  const PointCloud c(plane_sample(400, Vec3::UnitZ(), 5));
  const auto out = estimate_all_normals(c, build_knn_graph(c, 8));
  ASSERT_TRUE(out.has_normals());
  for (const auto& n : out.normals()) EXPECT_GE(std::abs(n.z()), 1.0 - 1e-6);
}

TEST(EstimateNormals, SphereSample) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  std::vector<Vec3> pts(2000);
  for (auto& p : pts) p = Vec3(g(rng), g(rng), g(rng)).normalized();
  const auto normals = estimate_all_normals(pts, build_knn_graph(pts, 16));
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_GE(std::abs(normals[i].dot(pts[i])), 0.99);
}

TEST(EstimateNormals, ThreePoints) {
  const std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(1, 0.2, 0.1), Vec3(0.3, 1, -0.4)};
  const auto normals = estimate_all_normals(pts, build_knn_graph(pts, 2));
  EXPECT_LE((normals[0] - normals[1]).norm(), 1e-12);
  EXPECT_LE((normals[0] - normals[2]).norm(), 1e-12);
}

TEST(EstimateNormals, ReportsDegenerateIndices) {
  std::vector<Vec3> pts(4, Vec3::Zero());
  for (int i = 0; i < 8; ++i) pts.emplace_back(10 + i, (i * 7) % 3, (i * 5) % 4);
  try {
    estimate_all_normals(pts, build_knn_graph(pts, 3));
    FAIL() << "expected degenerate_input_error";
  } catch (const degenerate_input_error& e) {
    EXPECT_NE(std::string(e.what()).find("0"), std::string::npos);
  }
}
