#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "millforge/levelset.hpp"

namespace millforge::io {

/// Binary grid file: 16-byte header ("MFLSG\0\0\0", u32 version, f32 band),
/// origin 3xf64, spacing f64, dims 3xu32, then f32 values x-fastest. Little-endian.
void write_lsg(const std::filesystem::path& path, const LevelSet& ls);
LevelSet read_lsg(const std::filesystem::path& path);

/// Any node field (e.g. displacement magnitude) in the same format, band 0.
void write_grid_field(const std::filesystem::path& path, const GridSpec& grid, std::span<const double> values);

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;  // counter-clockwise seen from outside

  double enclosed_volume() const;
  double area() const;
};

/// Zero level set triangulated by splitting every cell into six tetrahedra.
/// Vertices on shared grid edges are shared, so the mesh is closed wherever
/// the shape does not touch the grid boundary.
Mesh extract_surface(const LevelSet& ls);

void write_stl(const std::filesystem::path& path, const Mesh& mesh, const std::string& name = "millforge");
/// ASCII or binary STL; vertices are merged when bitwise equal.
Mesh read_stl(const std::filesystem::path& path);

/// Signed distance to the mesh on the given grid: exact unsigned distance
/// near the surface, sign from ray-crossing parity along +x.
LevelSet voxelize(const Mesh& mesh, const GridSpec& grid, double band_width);

/// Comma-separated table with a header row and LF line ends.
class CsvWriter {
public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  CsvWriter& operator<<(double v);
  CsvWriter& operator<<(long long v);
  CsvWriter& operator<<(int v) { return *this << static_cast<long long>(v); }
  CsvWriter& operator<<(const std::string& v);
  void end_row();

private:
  void separator();
  std::ofstream out_;
  std::size_t columns_ = 0;
  std::size_t in_row_ = 0;
};

}  // namespace millforge::io
