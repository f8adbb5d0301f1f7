#include "millforge/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace millforge::io {

namespace {

constexpr char kMagic[8] = {'M', 'F', 'L', 'S', 'G', 0, 0, 0};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "grid files assume a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error(path.string() + ": truncated grid file");
  return v;
}

void write_grid(const std::filesystem::path& path, const GridSpec& g, float band, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<float>(out, band);
  for (int a = 0; a < 3; ++a) put<double>(out, g.origin[a]);
  put<double>(out, g.h);
  for (int a = 0; a < 3; ++a) put<std::uint32_t>(out, static_cast<std::uint32_t>(g.dims[a]));
  std::vector<float> buf(values.begin(), values.end());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

void write_lsg(const std::filesystem::path& path, const LevelSet& ls) {
  write_grid(path, ls.grid(), static_cast<float>(ls.band_width()), ls.values());
}

void write_grid_field(const std::filesystem::path& path, const GridSpec& grid, std::span<const double> values) {
  if (values.size() != grid.node_count()) throw std::invalid_argument("field size does not match grid");
  write_grid(path, grid, 0.0f, values);
}

LevelSet read_lsg(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw std::runtime_error(path.string() + ": not a level-set grid file");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) throw std::runtime_error(path.string() + ": unsupported version " + std::to_string(version));
  const auto band = get<float>(in, path);
  Vec3 origin;
  for (int a = 0; a < 3; ++a) origin[a] = get<double>(in, path);
  const double h = get<double>(in, path);
  Index3 dims;
  for (int a = 0; a < 3; ++a) {
    const auto d = get<std::uint32_t>(in, path);
    if (d < 4 || d > 4096) throw std::runtime_error(path.string() + ": implausible grid dimension");
    dims[a] = static_cast<int>(d);
  }
  const GridSpec grid(origin, h, dims);
  if (!(band > 0.0f)) throw std::runtime_error(path.string() + ": band width must be positive");
  std::vector<float> buf(grid.node_count());
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float))))
    throw std::runtime_error(path.string() + ": truncated grid file");
  LevelSet ls(grid, band);
  auto v = ls.values();
  for (std::size_t i = 0; i < buf.size(); ++i) {
    if (!std::isfinite(buf[i])) throw std::runtime_error(path.string() + ": non-finite value");
    v[i] = buf[i];
  }
  return ls;
}

double Mesh::enclosed_volume() const {
  double sum = 0.0;
  for (const auto& t : triangles)
    sum += vertices[t[0]].dot(vertices[t[1]].cross(vertices[t[2]]));
  return sum / 6.0;
}

double Mesh::area() const {
  double sum = 0.0;
  for (const auto& t : triangles)
    sum += 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
  return sum;
}

Mesh extract_surface(const LevelSet& ls) {
  const GridSpec& g = ls.grid();
  const auto phi = ls.values();
  Mesh mesh;
  std::unordered_map<std::uint64_t, int> edge_vertex;
  auto vertex_on = [&](std::size_t a, std::size_t b) {
    if (a > b) std::swap(a, b);
    std::uint64_t key = static_cast<std::uint64_t>(a) * g.node_count() + b;
    // A zero node is the crossing of all its edges.
    if (phi[a] == 0.0) key = a;
    else if (phi[b] == 0.0) key = b;
    auto [it, inserted] = edge_vertex.try_emplace(key, static_cast<int>(mesh.vertices.size()));
    if (inserted) {
      const double pa = phi[a], pb = phi[b];
      const double t = pa / (pa - pb);
      mesh.vertices.push_back(g.position(a) + t * (g.position(b) - g.position(a)));
    }
    return it->second;
  };
  // Emits a triangle oriented so that its normal points from `in` toward `out`.
  auto emit = [&](int v0, int v1, int v2, const Vec3& in, const Vec3& out) {
    if (v0 == v1 || v1 == v2 || v0 == v2) return;
    const Vec3 n = (mesh.vertices[v1] - mesh.vertices[v0]).cross(mesh.vertices[v2] - mesh.vertices[v0]);
    if (n.dot(out - in) < 0.0) std::swap(v1, v2);
    mesh.triangles.push_back({v0, v1, v2});
  };

  // Six tetrahedra sharing the cell diagonal from corner 0 to corner 7.
  static constexpr int kPaths[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (int k = 0; k + 1 < g.dims[2]; ++k)
    for (int j = 0; j + 1 < g.dims[1]; ++j)
      for (int i = 0; i + 1 < g.dims[0]; ++i) {
        bool neg = false, pos = false;
        for (int c = 0; c < 8; ++c) {
          const bool inside = phi[g.index(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2))] < 0.0;
          neg = neg || inside;
          pos = pos || !inside;
        }
        if (!neg || !pos) continue;
        for (const auto& path : kPaths) {
          std::size_t tet[4];
          Index3 c{i, j, k};
          tet[0] = g.index(c[0], c[1], c[2]);
          for (int s = 0; s < 3; ++s) {
            ++c[path[s]];
            tet[s + 1] = g.index(c[0], c[1], c[2]);
          }
          std::size_t in[4], out[4];
          int ni = 0, no = 0;
          for (std::size_t v : tet) (phi[v] < 0.0 ? in[ni++] : out[no++]) = v;
          if (ni == 0 || no == 0) continue;
          Vec3 cin = Vec3::Zero(), cout = Vec3::Zero();
          for (int q = 0; q < ni; ++q) cin += g.position(in[q]) / ni;
          for (int q = 0; q < no; ++q) cout += g.position(out[q]) / no;
          if (ni == 1 || no == 1) {
            const bool single_in = ni == 1;
            const std::size_t apex = single_in ? in[0] : out[0];
            const std::size_t* others = single_in ? out : in;
            emit(vertex_on(apex, others[0]), vertex_on(apex, others[1]), vertex_on(apex, others[2]), cin, cout);
          } else {
            const int a = vertex_on(in[0], out[0]), b = vertex_on(in[0], out[1]);
            const int c2 = vertex_on(in[1], out[1]), d = vertex_on(in[1], out[0]);
            emit(a, b, c2, cin, cout);
            emit(a, c2, d, cin, cout);
          }
        }
      }
  return mesh;
}

void write_stl(const std::filesystem::path& path, const Mesh& mesh, const std::string& name) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(9);
  out << "solid " << name << '\n';
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    Vec3 n = (b - a).cross(c - a);
    const double len = n.norm();
    if (len > 0.0) n /= len;
    out << "  facet normal " << n.x() << ' ' << n.y() << ' ' << n.z() << '\n' << "    outer loop\n";
    for (const Vec3* v : {&a, &b, &c}) out << "      vertex " << v->x() << ' ' << v->y() << ' ' << v->z() << '\n';
    out << "    endloop\n  endfacet\n";
  }
  out << "endsolid " << name << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Mesh read_stl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Mesh mesh;
  std::map<std::array<double, 3>, int> index;
  auto add = [&](const Vec3& v) {
    auto [it, inserted] = index.try_emplace({v.x(), v.y(), v.z()}, static_cast<int>(mesh.vertices.size()));
    if (inserted) mesh.vertices.push_back(v);
    return it->second;
  };

  bool binary = false;
  if (data.size() >= 84) {
    std::uint32_t count;
    std::memcpy(&count, data.data() + 80, 4);
    binary = data.size() == 84 + 50 * static_cast<std::size_t>(count);
  }
  if (binary) {
    std::uint32_t count;
    std::memcpy(&count, data.data() + 80, 4);
    for (std::uint32_t f = 0; f < count; ++f) {
      const char* rec = data.data() + 84 + 50 * static_cast<std::size_t>(f);
      std::array<int, 3> tri;
      for (int v = 0; v < 3; ++v) {
        float xyz[3];
        std::memcpy(xyz, rec + 12 + 12 * v, 12);
        tri[v] = add(Vec3(xyz[0], xyz[1], xyz[2]));
      }
      mesh.triangles.push_back(tri);
    }
  } else {
    std::istringstream text(data);
    std::string word;
    if (!(text >> word) || word != "solid") throw std::runtime_error(path.string() + ": not an STL file");
    std::vector<int> pending;
    while (text >> word) {
      if (word != "vertex") continue;
      Vec3 v;
      if (!(text >> v.x() >> v.y() >> v.z())) throw std::runtime_error(path.string() + ": malformed vertex");
      pending.push_back(add(v));
      if (pending.size() == 3) {
        mesh.triangles.push_back({pending[0], pending[1], pending[2]});
        pending.clear();
      }
    }
    if (!pending.empty()) throw std::runtime_error(path.string() + ": facet with fewer than three vertices");
  }
  if (mesh.triangles.empty()) throw std::runtime_error(path.string() + ": no triangles");
  return mesh;
}

namespace {

Vec3 closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + d1 / (d1 - d3) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + d2 / (d2 - d6) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) return b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

}  // namespace

LevelSet voxelize(const Mesh& mesh, const GridSpec& grid, double band_width) {
  const GridSpec& g = grid;
  LevelSet ls(g, band_width);
  std::vector<double> dist(g.node_count(), band_width);

  for (const auto& t : mesh.triangles) {
    const Vec3 &a = mesh.vertices[t[0]], &b = mesh.vertices[t[1]], &c = mesh.vertices[t[2]];
    const Vec3 lo = a.cwiseMin(b).cwiseMin(c) - Vec3::Constant(band_width);
    const Vec3 hi = a.cwiseMax(b).cwiseMax(c) + Vec3::Constant(band_width);
    Index3 i0, i1;
    for (int ax = 0; ax < 3; ++ax) {
      i0[ax] = std::max(0, static_cast<int>(std::floor((lo[ax] - g.origin[ax]) / g.h)));
      i1[ax] = std::min(g.dims[ax] - 1, static_cast<int>(std::ceil((hi[ax] - g.origin[ax]) / g.h)));
    }
    for (int k = i0[2]; k <= i1[2]; ++k)
      for (int j = i0[1]; j <= i1[1]; ++j)
        for (int i = i0[0]; i <= i1[0]; ++i) {
          const Vec3 p = g.position(i, j, k);
          const double d = (p - closest_on_triangle(p, a, b, c)).norm();
          double& slot = dist[g.index(i, j, k)];
          slot = std::min(slot, d);
        }
  }

  // Parity of +x ray crossings; rows are nudged off the lattice to avoid edges.
  const double ey = 1.234567e-4 * g.h, ez = 2.345678e-4 * g.h;
  std::vector<std::vector<double>> crossings(static_cast<std::size_t>(g.dims[1]) * g.dims[2]);
  for (const auto& t : mesh.triangles) {
    const Vec3 &a = mesh.vertices[t[0]], &b = mesh.vertices[t[1]], &c = mesh.vertices[t[2]];
    const double ylo = std::min({a.y(), b.y(), c.y()}), yhi = std::max({a.y(), b.y(), c.y()});
    const double zlo = std::min({a.z(), b.z(), c.z()}), zhi = std::max({a.z(), b.z(), c.z()});
    const int j0 = std::max(0, static_cast<int>(std::floor((ylo - ey - g.origin.y()) / g.h)));
    const int j1 = std::min(g.dims[1] - 1, static_cast<int>(std::ceil((yhi - ey - g.origin.y()) / g.h)));
    const int k0 = std::max(0, static_cast<int>(std::floor((zlo - ez - g.origin.z()) / g.h)));
    const int k1 = std::min(g.dims[2] - 1, static_cast<int>(std::ceil((zhi - ez - g.origin.z()) / g.h)));
    for (int k = k0; k <= k1; ++k)
      for (int j = j0; j <= j1; ++j) {
        const double y = g.origin.y() + j * g.h + ey, z = g.origin.z() + k * g.h + ez;
        // Barycentric test in the yz projection.
        const double d = (b.y() - a.y()) * (c.z() - a.z()) - (c.y() - a.y()) * (b.z() - a.z());
        if (d == 0.0) continue;
        const double u = ((y - a.y()) * (c.z() - a.z()) - (c.y() - a.y()) * (z - a.z())) / d;
        const double v = ((b.y() - a.y()) * (z - a.z()) - (y - a.y()) * (b.z() - a.z())) / d;
        if (u < 0.0 || v < 0.0 || u + v > 1.0) continue;
        crossings[static_cast<std::size_t>(j) + static_cast<std::size_t>(g.dims[1]) * k].push_back(
            a.x() + u * (b.x() - a.x()) + v * (c.x() - a.x()));
      }
  }
  auto phi = ls.values();
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j) {
      auto& row = crossings[static_cast<std::size_t>(j) + static_cast<std::size_t>(g.dims[1]) * k];
      std::sort(row.begin(), row.end());
      std::size_t next = 0;
      for (int i = 0; i < g.dims[0]; ++i) {
        const double x = g.origin.x() + i * g.h;
        while (next < row.size() && row[next] < x) ++next;
        const bool inside = next % 2 == 1;
        const std::size_t idx = g.index(i, j, k);
        phi[idx] = inside ? -dist[idx] : dist[idx];
      }
    }
  return ls;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(path), columns_(header.size()) {
  if (!out_) throw std::runtime_error("cannot write " + path.string());
  out_ << std::setprecision(10);
  for (const std::string& h : header) *this << h;
  end_row();
}

void CsvWriter::separator() {
  if (in_row_ > 0) out_ << ',';
  ++in_row_;
}

CsvWriter& CsvWriter::operator<<(double v) {
  separator();
  out_ << v;
  return *this;
}

CsvWriter& CsvWriter::operator<<(long long v) {
  separator();
  out_ << v;
  return *this;
}

CsvWriter& CsvWriter::operator<<(const std::string& v) {
  separator();
  out_ << v;
  return *this;
}

void CsvWriter::end_row() {
  if (in_row_ != columns_) throw std::logic_error("CSV row has the wrong number of columns");
  out_ << '\n';
  out_.flush();
  in_row_ = 0;
}

}  // namespace millforge::io
