#include <geogcn/cloud_io.hpp>

#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <geogcn/errors.hpp>

namespace geogcn {

namespace {

bool is_ply(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".ply";
}

bool is_blank(const std::string& line) { return line.find_first_not_of(" \t\r") == std::string::npos; }

std::vector<double> parse_numbers(const std::string& path, std::size_t line_no, const std::string& line) {
  std::vector<double> values;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw parse_error(path, line_no, "not a number: '" + tok + "'");
    }
    if (used != tok.size()) throw parse_error(path, line_no, "not a number: '" + tok + "'");
    if (!std::isfinite(v)) throw validation_error(path + ":" + std::to_string(line_no) + ": non-finite value");
    values.push_back(v);
  }
  return values;
}

PointCloud make_cloud(std::vector<Vec3> positions, std::vector<Vec3> normals, bool with_normals,
                      const std::filesystem::path& path) {
  if (positions.empty()) throw parse_error(path.string(), 0, "file contains no points");
  std::optional<std::vector<Vec3>> n;
  if (with_normals) n = std::move(normals);
  return PointCloud(std::move(positions), std::move(n), path.stem().string());
}

PointCloud read_xyz(const std::filesystem::path& path, std::istream& in) {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;
  std::size_t columns = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line) || line[line.find_first_not_of(" \t")] == '#') continue;
    const auto v = parse_numbers(path.string(), line_no, line);
    if (v.size() != 3 && v.size() != 6) {
      throw parse_error(path.string(), line_no, "expected 3 or 6 columns, found " + std::to_string(v.size()));
    }
    if (columns == 0) columns = v.size();
    if (v.size() != columns) throw parse_error(path.string(), line_no, "inconsistent column count");
    positions.emplace_back(v[0], v[1], v[2]);
    if (columns == 6) normals.emplace_back(v[3], v[4], v[5]);
  }
  return make_cloud(std::move(positions), std::move(normals), columns == 6, path);
}

PointCloud read_ply(const std::filesystem::path& path, std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next() || line != "ply") throw parse_error(path.string(), 1, "missing 'ply' magic");

  std::size_t vertex_count = 0;
  bool in_vertex = false;
  bool seen_vertex = false;
  std::vector<std::string> props;
  bool header_done = false;
  while (next()) {
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw parse_error(path.string(), line_no, "only ASCII PLY is supported");
    } else if (kw == "comment" || kw == "obj_info" || kw.empty()) {
    } else if (kw == "element") {
      std::string name;
      long long count = -1;
      ls >> name >> count;
      if (count < 0) throw parse_error(path.string(), line_no, "bad element declaration");
      in_vertex = name == "vertex";
      if (in_vertex) {
        vertex_count = static_cast<std::size_t>(count);
        seen_vertex = true;
      } else if (count > 0) {
        throw parse_error(path.string(), line_no, "unsupported element '" + name + "'");
      }
    } else if (kw == "property") {
      std::string type;
      std::string name;
      ls >> type;
      if (type == "list") {
        if (in_vertex) throw parse_error(path.string(), line_no, "list properties on vertices are not supported");
        continue;
      }
      ls >> name;
      if (name.empty()) throw parse_error(path.string(), line_no, "bad property declaration");
      if (in_vertex) props.push_back(name);
    } else if (kw == "end_header") {
      header_done = true;
      break;
    } else {
      throw parse_error(path.string(), line_no, "unexpected header keyword '" + kw + "'");
    }
  }
  if (!header_done) throw parse_error(path.string(), line_no, "missing end_header");
  if (!seen_vertex) throw parse_error(path.string(), line_no, "missing 'element vertex'");

  auto find = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < props.size(); ++i) {
      if (props[i] == name) return static_cast<int>(i);
    }
    return -1;
  };
  const std::array<int, 3> pos{find("x"), find("y"), find("z")};
  const std::array<int, 3> nrm{find("nx"), find("ny"), find("nz")};
  if (pos[0] < 0 || pos[1] < 0 || pos[2] < 0) throw parse_error(path.string(), line_no, "vertex lacks x/y/z");
  const bool with_normals = nrm[0] >= 0 && nrm[1] >= 0 && nrm[2] >= 0;

  std::vector<Vec3> positions;
  std::vector<Vec3> normals;
  positions.reserve(vertex_count);
  for (std::size_t v = 0; v < vertex_count; ++v) {
    if (!next()) throw parse_error(path.string(), line_no, "unexpected end of file in vertex data");
    const auto vals = parse_numbers(path.string(), line_no, line);
    if (vals.size() != props.size()) {
      throw parse_error(path.string(), line_no,
                        "expected " + std::to_string(props.size()) + " values, found " + std::to_string(vals.size()));
    }
    positions.emplace_back(vals[pos[0]], vals[pos[1]], vals[pos[2]]);
    if (with_normals) normals.emplace_back(vals[nrm[0]], vals[nrm[1]], vals[nrm[2]]);
  }
  return make_cloud(std::move(positions), std::move(normals), with_normals, path);
}

void put_row(std::string& out, const Vec3& a, const Vec3* b) {
  char buf[160];
  int len = 0;
  if (b != nullptr) {
    len = std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g %.9g %.9g\n", a.x(), a.y(), a.z(), b->x(), b->y(),
                        b->z());
  } else {
    len = std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", a.x(), a.y(), a.z());
  }
  out.append(buf, static_cast<std::size_t>(len));
}

}  // namespace

PointCloud read_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open '" + path.string() + "' for reading");
  return is_ply(path) ? read_ply(path, in) : read_xyz(path, in);
}

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  std::string out;
  const bool normals = cloud.has_normals();
  if (is_ply(path)) {
    out += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
           "\nproperty double x\nproperty double y\nproperty double z\n";
    if (normals) out += "property double nx\nproperty double ny\nproperty double nz\n";
    out += "end_header\n";
  }
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    put_row(out, cloud.position(i), normals ? &cloud.normals()[i] : nullptr);
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw io_error("cannot open '" + path.string() + "' for writing");
  file << out;
  if (!file) throw io_error("failed writing '" + path.string() + "'");
}

}  // namespace geogcn
