#include <geogcn/dataset.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include <geogcn/cloud_io.hpp>
#include <geogcn/errors.hpp>
#include <geogcn/random.hpp>

namespace geogcn {

namespace {

constexpr double kPi = std::numbers::pi;

const std::map<std::string, double>& default_params(ShapeKind kind) {
  static const std::map<ShapeKind, std::map<std::string, double>> defaults{
      {ShapeKind::sphere, {{"radius", 1.0}}},
      {ShapeKind::torus, {{"major_radius", 1.0}, {"minor_radius", 0.3}}},
      {ShapeKind::cylinder, {{"radius", 0.5}, {"height", 1.5}}},
      {ShapeKind::cube, {{"edge", 2.0}}},
      {ShapeKind::plane_with_ridge, {{"extent", 2.0}, {"ridge_height", 0.4}, {"ridge_half_width", 0.5}}},
  };
  return defaults.at(kind);
}

using Rng = std::mt19937_64;

void sample_sphere(const ShapeSpec& s, Rng& rng, std::vector<Vec3>& pos, std::vector<Vec3>& nrm) {
  const double r = s.param("radius");
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t i = 0; i < s.n_points; ++i) {
    Vec3 v;
    do {
      v = Vec3(g(rng), g(rng), g(rng));
    } while (v.norm() < 1e-12);
    v.normalize();
    pos.push_back(r * v);
    nrm.push_back(v);
  }
}

void sample_torus(const ShapeSpec& s, Rng& rng, std::vector<Vec3>& pos, std::vector<Vec3>& nrm) {
  const double big = s.param("major_radius");
  const double small = s.param("minor_radius");
  std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < s.n_points; ++i) {
    // Area element is proportional to (R + r cos phi).
    double phi = 0.0;
    do {
      phi = angle(rng);
    } while (unit(rng) * (big + small) > big + small * std::cos(phi));
    const double theta = angle(rng);
    const Vec3 n(std::cos(phi) * std::cos(theta), std::cos(phi) * std::sin(theta), std::sin(phi));
    const Vec3 center(big * std::cos(theta), big * std::sin(theta), 0.0);
    pos.push_back(center + small * n);
    nrm.push_back(n);
  }
}

void sample_cylinder(const ShapeSpec& s, Rng& rng, std::vector<Vec3>& pos, std::vector<Vec3>& nrm) {
  const double r = s.param("radius");
  const double h = s.param("height");
  const double side = 2.0 * kPi * r * h;
  const double caps = 2.0 * kPi * r * r;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
  for (std::size_t i = 0; i < s.n_points; ++i) {
    const double theta = angle(rng);
    if (unit(rng) * (side + caps) < side) {
      const double z = (unit(rng) - 0.5) * h;
      pos.emplace_back(r * std::cos(theta), r * std::sin(theta), z);
      nrm.emplace_back(std::cos(theta), std::sin(theta), 0.0);
    } else {
      const double rho = r * std::sqrt(unit(rng));
      const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
      pos.emplace_back(rho * std::cos(theta), rho * std::sin(theta), sign * 0.5 * h);
      nrm.emplace_back(0.0, 0.0, sign);
    }
  }
}

void sample_cube(const ShapeSpec& s, Rng& rng, std::vector<Vec3>& pos, std::vector<Vec3>& nrm) {
  const double a = 0.5 * s.param("edge");
  std::uniform_int_distribution<int> face(0, 5);
  std::uniform_real_distribution<double> coord(-a, a);
  for (std::size_t i = 0; i < s.n_points; ++i) {
    const int f = face(rng);
    const int axis = f / 2;
    const double sign = (f % 2 == 0) ? 1.0 : -1.0;
    Vec3 p(coord(rng), coord(rng), coord(rng));
    p[axis] = sign * a;
    Vec3 n = Vec3::Zero();
    n[axis] = sign;
    pos.push_back(p);
    nrm.push_back(n);
  }
}

// z = h * max(0, 1 - |x| / w) over the square [-e/2, e/2]^2.
void sample_ridge(const ShapeSpec& s, Rng& rng, std::vector<Vec3>& pos, std::vector<Vec3>& nrm) {
  const double e = s.param("extent");
  const double h = s.param("ridge_height");
  const double w = s.param("ridge_half_width");
  const double slope = h / w;
  const double stretch = std::sqrt(1.0 + slope * slope);
  const double flat_area = e - 2.0 * w;
  const double slope_area = 2.0 * w * stretch;
  const Vec3 left_n = Vec3(-slope, 0.0, 1.0) / stretch;
  const Vec3 right_n = Vec3(slope, 0.0, 1.0) / stretch;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < s.n_points; ++i) {
    const double y = (unit(rng) - 0.5) * e;
    double x = 0.0;
    double z = 0.0;
    Vec3 n(0.0, 0.0, 1.0);
    if (unit(rng) * (flat_area + slope_area) < flat_area) {
      // Flat strips on either side of the ridge.
      const double t = unit(rng) * flat_area;
      x = t < 0.5 * flat_area ? -0.5 * e + t : w + (t - 0.5 * flat_area);
    } else {
      x = (unit(rng) * 2.0 - 1.0) * w;
      z = h * (1.0 - std::abs(x) / w);
      n = x < 0.0 ? left_n : right_n;
    }
    pos.emplace_back(x, y, z);
    nrm.push_back(n);
  }
}

std::string scale_tag(double scale) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", scale);
  return buf;
}

}  // namespace

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::sphere:
      return "sphere";
    case ShapeKind::torus:
      return "torus";
    case ShapeKind::cylinder:
      return "cylinder";
    case ShapeKind::cube:
      return "cube";
    case ShapeKind::plane_with_ridge:
      return "plane-with-ridge";
  }
  return "unknown";
}

ShapeKind parse_shape_kind(const std::string& name) {
  for (auto k : {ShapeKind::sphere, ShapeKind::torus, ShapeKind::cylinder, ShapeKind::cube,
                 ShapeKind::plane_with_ridge}) {
    if (to_string(k) == name) return k;
  }
  throw invalid_argument_error("unknown shape kind '" + name + "'");
}

bool is_sharp(ShapeKind kind) {
  return kind == ShapeKind::cube || kind == ShapeKind::cylinder || kind == ShapeKind::plane_with_ridge;
}

double ShapeSpec::param(const std::string& key) const {
  if (auto it = params.find(key); it != params.end()) return it->second;
  const auto& defaults = default_params(kind);
  if (auto it = defaults.find(key); it != defaults.end()) return it->second;
  throw invalid_argument_error("shape " + to_string(kind) + " has no parameter '" + key + "'");
}

void ShapeSpec::validate() const {
  if (n_points < 100) throw invalid_argument_error("shape needs at least 100 points");
  const auto& defaults = default_params(kind);
  for (const auto& [key, value] : params) {
    if (!defaults.contains(key)) {
      throw invalid_argument_error("shape " + to_string(kind) + " has no parameter '" + key + "'");
    }
    if (!(value > 0.0) || !std::isfinite(value)) {
      throw invalid_argument_error("shape parameter '" + key + "' must be positive");
    }
  }
  if (kind == ShapeKind::torus && param("minor_radius") >= param("major_radius")) {
    throw invalid_argument_error("torus minor radius must be smaller than its major radius");
  }
  if (kind == ShapeKind::plane_with_ridge && 2.0 * param("ridge_half_width") >= param("extent")) {
    throw invalid_argument_error("ridge must fit inside the plane extent");
  }
}

PointCloud generate_shape(const ShapeSpec& spec) {
  spec.validate();
  Rng rng(spec.rng_seed);
  std::vector<Vec3> pos;
  std::vector<Vec3> nrm;
  pos.reserve(spec.n_points);
  nrm.reserve(spec.n_points);
  switch (spec.kind) {
    case ShapeKind::sphere:
      sample_sphere(spec, rng, pos, nrm);
      break;
    case ShapeKind::torus:
      sample_torus(spec, rng, pos, nrm);
      break;
    case ShapeKind::cylinder:
      sample_cylinder(spec, rng, pos, nrm);
      break;
    case ShapeKind::cube:
      sample_cube(spec, rng, pos, nrm);
      break;
    case ShapeKind::plane_with_ridge:
      sample_ridge(spec, rng, pos, nrm);
      break;
  }
  return PointCloud(std::move(pos), std::move(nrm), spec.name.empty() ? to_string(spec.kind) : spec.name);
}

NoisySample corrupt(const PointCloud& clean, double noise_scale, std::uint64_t seed) {
  if (!(noise_scale > 0.0 && noise_scale <= kMaxNoiseScale)) {
    throw invalid_argument_error("noise scale must lie in (0, 0.05]");
  }
  const double sigma = noise_scale * clean.diagonal();
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<Vec3> noisy;
  noisy.reserve(clean.size());
  for (const auto& p : clean.positions()) {
    const double dx = g(rng);
    const double dy = g(rng);
    const double dz = g(rng);
    noisy.push_back(p + Vec3(dx, dy, dz));
  }
  return {clean, PointCloud(std::move(noisy), std::nullopt, clean.name() + "_noisy"), noise_scale, seed};
}

std::vector<ManifestEntry> Manifest::split(const std::string& name) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == name) out.push_back(e);
  }
  return out;
}

Manifest build_manifest(const std::vector<ShapeSpec>& shapes, const std::vector<double>& scales,
                        const std::filesystem::path& out_dir, const std::vector<ShapeSpec>& test_shapes,
                        const std::vector<double>& test_scales) {
  if (shapes.empty()) throw invalid_argument_error("build_manifest: no shapes given");
  if (scales.empty()) throw invalid_argument_error("build_manifest: no noise scales given");
  for (double s : scales) {
    if (!(s > 0.0 && s <= kMaxNoiseScale)) throw invalid_argument_error("build_manifest: noise scale out of range");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create directory '" + out_dir.string() + "': " + ec.message());

  Manifest manifest;
  auto emit = [&](const std::vector<ShapeSpec>& list, const std::vector<double>& levels, const std::string& split) {
    for (std::size_t s = 0; s < list.size(); ++s) {
      ShapeSpec spec = list[s];
      if (spec.name.empty()) spec.name = split + "_" + to_string(spec.kind) + "_" + std::to_string(s);
      const PointCloud clean = generate_shape(spec);
      const std::filesystem::path clean_file = spec.name + "_clean.xyz";
      write_cloud(clean, out_dir / clean_file);
      for (double level : levels) {
        const std::uint64_t seed = derive_seed(spec.rng_seed, {0x6e6f697365ULL, static_cast<std::uint64_t>(level * 1e6)});
        const NoisySample sample = corrupt(clean, level, seed);
        const std::filesystem::path noisy_file = spec.name + "_noisy_" + scale_tag(level) + ".xyz";
        write_cloud(sample.noisy, out_dir / noisy_file);
        manifest.entries.push_back({clean_file, noisy_file, level, seed, spec.kind, split});
      }
    }
  };
  emit(shapes, scales, "train");
  if (!test_shapes.empty()) emit(test_shapes, test_scales, "test");

  write_manifest(manifest, out_dir / "manifest.json");
  for (auto& e : manifest.entries) {
    e.clean = out_dir / e.clean;
    e.noisy = out_dir / e.noisy;
  }
  return manifest;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : manifest.entries) {
    arr.push_back({{"clean", e.clean.generic_string()},
                   {"noisy", e.noisy.generic_string()},
                   {"scale", e.scale},
                   {"seed", e.seed},
                   {"kind", to_string(e.kind)},
                   {"split", e.split}});
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open '" + path.string() + "' for writing");
  out << arr.dump(2) << '\n';
  if (!out) throw io_error("failed writing '" + path.string() + "'");
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open manifest '" + path.string() + "'");
  nlohmann::json arr;
  try {
    in >> arr;
  } catch (const nlohmann::json::exception& e) {
    throw invalid_manifest_error("cannot parse manifest '" + path.string() + "': " + e.what());
  }
  if (!arr.is_array()) throw invalid_manifest_error("manifest '" + path.string() + "' must be a JSON array");

  const auto base = path.parent_path();
  Manifest manifest;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& j = arr[i];
    try {
      ManifestEntry e;
      e.clean = j.at("clean").get<std::string>();
      e.noisy = j.at("noisy").get<std::string>();
      if (e.clean.is_relative()) e.clean = base / e.clean;
      if (e.noisy.is_relative()) e.noisy = base / e.noisy;
      e.scale = j.at("scale").get<double>();
      e.seed = j.at("seed").get<std::uint64_t>();
      e.kind = parse_shape_kind(j.at("kind").get<std::string>());
      e.split = j.value("split", std::string("train"));
      manifest.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw invalid_manifest_error("manifest entry " + std::to_string(i) + ": " + ex.what());
    } catch (const invalid_argument_error& ex) {
      throw invalid_manifest_error("manifest entry " + std::to_string(i) + ": " + ex.what());
    }
  }
  if (manifest.entries.empty()) throw invalid_manifest_error("manifest '" + path.string() + "' is empty");
  return manifest;
}

std::vector<ShapeSpec> desk_training_shapes(std::size_t n_points) {
  return {
      {ShapeKind::cube, n_points, 11, {{"edge", 2.0}}, "cube_a"},
      {ShapeKind::cylinder, n_points, 12, {{"radius", 0.6}, {"height", 1.6}}, "cylinder_a"},
      {ShapeKind::plane_with_ridge, n_points, 13, {{"ridge_height", 0.4}, {"ridge_half_width", 0.5}}, "ridge_a"},
      {ShapeKind::cube, n_points, 14, {{"edge", 1.4}}, "cube_b"},
      {ShapeKind::sphere, n_points, 15, {{"radius", 1.0}}, "sphere_a"},
      {ShapeKind::torus, n_points, 16, {{"major_radius", 1.0}, {"minor_radius", 0.3}}, "torus_a"},
      {ShapeKind::sphere, n_points, 17, {{"radius", 0.7}}, "sphere_b"},
      {ShapeKind::torus, n_points, 18, {{"major_radius", 1.0}, {"minor_radius", 0.45}}, "torus_b"},
  };
}

std::vector<ShapeSpec> desk_test_shapes(std::size_t n_points) {
  return {
      {ShapeKind::cube, n_points, 101, {{"edge", 1.7}}, "test_cube"},
      {ShapeKind::plane_with_ridge, n_points, 102, {{"ridge_height", 0.3}, {"ridge_half_width", 0.6}}, "test_ridge"},
      {ShapeKind::sphere, n_points, 103, {{"radius", 1.2}}, "test_sphere"},
      {ShapeKind::torus, n_points, 104, {{"major_radius", 1.0}, {"minor_radius", 0.35}}, "test_torus"},
  };
}

}  // namespace geogcn
