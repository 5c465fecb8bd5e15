#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include <gtest/gtest.h>

#include <geogcn/cloud_io.hpp>
#include <geogcn/errors.hpp>

#include "test_support.hpp"

using namespace geogcn;
namespace fs = std::filesystem;

namespace {

class CloudIo : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("geogcn_io_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  fs::path dir_;
};

PointCloud random_cloud(std::size_t n, bool normals, std::uint64_t seed) {
  auto pts = geogcn::testing::random_points(n, seed, -100.0, 100.0);
  if (!normals) return PointCloud(pts);
  std::vector<Vec3> ns;
  for (const auto& p : geogcn::testing::random_points(n, seed + 1)) ns.push_back(p.normalized());
  return PointCloud(pts, ns);
}

void expect_close(const PointCloud& a, const PointCloud& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  ASSERT_EQ(a.has_normals(), b.has_normals());
  for (Index i = 0; i < a.size(); ++i) {
    EXPECT_LE((a.position(i) - b.position(i)).cwiseAbs().maxCoeff(), tol * std::max(1.0, a.position(i).norm()));
    if (a.has_normals()) EXPECT_LE((a.normals()[i] - b.normals()[i]).cwiseAbs().maxCoeff(), tol);
  }
}

}  // namespace

TEST_F(CloudIo, MinimalXyz) {
  const auto c = read_cloud(write("a.xyz", "0 0 0\n1 0 0\n"));
  EXPECT_EQ(c.size(), 2u);
  EXPECT_FALSE(c.has_normals());
  EXPECT_EQ(c.position(1), Vec3(1, 0, 0));
}

TEST_F(CloudIo, XyzWithNormals) {
  const auto c = read_cloud(write("a.xyz", "0 0 0 0 0 1\n1 0 0 1 0 0\n"));
  ASSERT_TRUE(c.has_normals());
  EXPECT_EQ(c.normals()[1], Vec3(1, 0, 0));
}

TEST_F(CloudIo, XyzSkipsBlankAndCommentLines) {
  const auto c = read_cloud(write("a.xyz", "# header\n\n0 0 0\n  \n1 2 3\n"));
  EXPECT_EQ(c.size(), 2u);
}

TEST_F(CloudIo, MinimalPly) {
  const auto c = read_cloud(write("a.ply",
                                  "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                                  "property float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n"));
  EXPECT_EQ(c.size(), 3u);
  EXPECT_FALSE(c.has_normals());
}

TEST_F(CloudIo, PlyWithNormalsAndExtraProperties) {
  const auto c = read_cloud(write("a.ply",
                                  "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n"
                                  "property double x\nproperty double y\nproperty double z\nproperty float intensity\n"
                                  "property float nx\nproperty float ny\nproperty float nz\nelement face 0\n"
                                  "property list uchar int vertex_indices\nend_header\n"
                                  "0 0 0 7 0 0 1\n1 1 1 8 0 1 0\n"));
  ASSERT_TRUE(c.has_normals());
  EXPECT_EQ(c.position(1), Vec3(1, 1, 1));
  EXPECT_EQ(c.normals()[1], Vec3(0, 1, 0));
}

TEST_F(CloudIo, ParseErrorCarriesLineNumber) {
  try {
    read_cloud(write("bad.xyz", "0 0 0\n1 0 zero\n"));
    FAIL() << "expected parse_error";
  } catch (const parse_error& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  try {
    read_cloud(write("cols.xyz", "0 0 0\n0 0 0\n1 2 3 4\n"));
    FAIL() << "expected parse_error";
  } catch (const parse_error& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    read_cloud(write("bad.ply", "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                                "bogus line\nend_header\n0 0\n"));
    FAIL() << "expected parse_error";
  } catch (const parse_error& e) {
    EXPECT_EQ(e.line(), 6u);
  }
}

TEST_F(CloudIo, PlyRejectsBinaryAndShortBody) {
  EXPECT_THROW(read_cloud(write("bin.ply", "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
                                           "property float x\nproperty float y\nproperty float z\nend_header\n")),
               parse_error);
  EXPECT_THROW(read_cloud(write("short.ply", "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\n"
                                             "property float y\nproperty float z\nend_header\n0 0 0\n")),
               parse_error);
}

TEST_F(CloudIo, NonFiniteIsValidationError) {
  EXPECT_THROW(read_cloud(write("nan.xyz", "0 0 0\nnan 0 0\n")), validation_error);
  EXPECT_THROW(read_cloud(write("inf.xyz", "0 0 inf\n")), validation_error);
}

TEST_F(CloudIo, MissingFileIsIoError) { EXPECT_THROW(read_cloud(dir_ / "absent.xyz"), io_error); }

TEST_F(CloudIo, EmptyFileIsDataError) { EXPECT_THROW(read_cloud(write("empty.xyz", "")), data_error); }

TEST_F(CloudIo, RoundTripXyzAndPly) {
  for (bool normals : {false, true}) {
    const auto c = random_cloud(200, normals, normals ? 2 : 1);
    for (const char* ext : {".xyz", ".ply"}) {
      const fs::path p = dir_ / (std::string("rt") + (normals ? "_n" : "") + ext);
      write_cloud(c, p);
      expect_close(c, read_cloud(p), 1e-6);
    }
  }
}

TEST_F(CloudIo, WritingIsDeterministic) {
  const auto c = random_cloud(50, true, 3);
  write_cloud(c, dir_ / "a.xyz");
  write_cloud(c, dir_ / "b.xyz");
  std::ifstream a(dir_ / "a.xyz"), b(dir_ / "b.xyz");
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
}

TEST_F(CloudIo, UnwritableDestination) {
  EXPECT_THROW(write_cloud(random_cloud(3, false, 4), dir_ / "no_such_dir" / "x.xyz"), io_error);
}
