#pragma once

#include <filesystem>

#include <geogcn/point_cloud.hpp>

namespace geogcn {

// Format is chosen by extension: ".ply" reads/writes ASCII PLY, anything else is XYZ
// (3 or 6 whitespace-separated columns per line). Written values carry 9 significant digits.
PointCloud read_cloud(const std::filesystem::path& path);
void write_cloud(const PointCloud& cloud, const std::filesystem::path& path);

}  // namespace geogcn
