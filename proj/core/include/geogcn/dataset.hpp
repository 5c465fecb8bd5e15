#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <geogcn/point_cloud.hpp>

namespace geogcn {

enum class ShapeKind { sphere, torus, cylinder, cube, plane_with_ridge };

std::string to_string(ShapeKind kind);
ShapeKind parse_shape_kind(const std::string& name);
// Shapes with creases ("CAD") versus smooth ones.
bool is_sharp(ShapeKind kind);

/// Analytic surface description.
///
/// Recognised parameters (defaults in parentheses):
///   sphere:            radius (1)
///   torus:             major_radius (1), minor_radius (0.3)
///   cylinder:          radius (0.5), height (1.5); capped
///   cube:              edge (2)
///   plane-with-ridge:  extent (2), ridge_height (0.4), ridge_half_width (0.5)
struct ShapeSpec {
  ShapeKind kind = ShapeKind::sphere;
  std::size_t n_points = 5000;
  std::uint64_t rng_seed = 0;
  std::map<std::string, double> params;
  std::string name;  // file stem; derived from kind when empty

  double param(const std::string& key) const;
  void validate() const;
};

/// Area-uniform random surface sample with exact unit normals.
PointCloud generate_shape(const ShapeSpec& spec);

struct NoisySample {
  PointCloud clean;
  PointCloud noisy;  // same index order as clean
  double noise_scale = 0.0;
  std::uint64_t rng_seed = 0;
};

inline constexpr double kMaxNoiseScale = 0.05;

/// i.i.d. per-axis Gaussian displacement, std = noise_scale * bounding-box diagonal.
NoisySample corrupt(const PointCloud& clean, double noise_scale, std::uint64_t seed);

struct ManifestEntry {
  std::filesystem::path clean;
  std::filesystem::path noisy;
  double scale = 0.0;
  std::uint64_t seed = 0;
  ShapeKind kind = ShapeKind::sphere;
  std::string split = "train";  // "train" or "test"
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(const std::string& name) const;
};

/// Writes <name>_clean.xyz per shape, one noisy XYZ per (shape, scale), and
/// `manifest.json` listing them. Paths in the manifest are relative to `out_dir`.
Manifest build_manifest(const std::vector<ShapeSpec>& shapes, const std::vector<double>& scales,
                        const std::filesystem::path& out_dir, const std::vector<ShapeSpec>& test_shapes = {},
                        const std::vector<double>& test_scales = {0.005});

/// Reads a manifest; relative paths resolve against the manifest's directory.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

inline const std::vector<double> kTrainingNoiseScales{0.0025, 0.005, 0.01, 0.015};

// Four sharp-edged and four smooth shapes.
std::vector<ShapeSpec> desk_training_shapes(std::size_t n_points = 5000);
// Held-out variants (two sharp, two smooth) with unseen parameters and seeds.
std::vector<ShapeSpec> desk_test_shapes(std::size_t n_points = 5000);

}  // namespace geogcn
