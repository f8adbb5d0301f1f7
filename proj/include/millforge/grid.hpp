#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace millforge {

using Vec3 = Eigen::Vector3d;
using Index3 = std::array<int, 3>;

/// Raised when an operation would leave the shape with no boundary.
class EmptyShapeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Uniform Cartesian node grid. Node (i,j,k) sits at origin + h*(i,j,k);
/// linear indices are x-fastest.
struct GridSpec {
  Vec3 origin = Vec3::Zero();
  double h = 1.0;
  Index3 dims{4, 4, 4};

  GridSpec() = default;
  GridSpec(const Vec3& origin_, double spacing, Index3 dims_);

  /// Smallest grid covering [lo, hi] with `pad` extra nodes on every side.
  static GridSpec covering(const Vec3& lo, const Vec3& hi, double spacing, int pad);

  void validate() const;

  std::size_t node_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t cell_count() const {
    return static_cast<std::size_t>(dims[0] - 1) * (dims[1] - 1) * (dims[2] - 1);
  }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) +
                                                static_cast<std::size_t>(dims[1]) * k);
  }
  Index3 unindex(std::size_t idx) const {
    const int i = static_cast<int>(idx % dims[0]);
    const std::size_t rest = idx / dims[0];
    return {i, static_cast<int>(rest % dims[1]), static_cast<int>(rest / dims[1])};
  }

  std::size_t cell_index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0] - 1) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1] - 1) * k);
  }
  Index3 cell_unindex(std::size_t idx) const {
    const int i = static_cast<int>(idx % (dims[0] - 1));
    const std::size_t rest = idx / (dims[0] - 1);
    return {i, static_cast<int>(rest % (dims[1] - 1)), static_cast<int>(rest / (dims[1] - 1))};
  }

  Vec3 position(int i, int j, int k) const { return origin + h * Vec3(i, j, k); }
  Vec3 position(std::size_t idx) const {
    const auto c = unindex(idx);
    return position(c[0], c[1], c[2]);
  }
  Vec3 cell_center(std::size_t cell) const {
    const auto c = cell_unindex(cell);
    return origin + h * Vec3(c[0] + 0.5, c[1] + 0.5, c[2] + 0.5);
  }

  Vec3 lower() const { return origin; }
  Vec3 upper() const { return origin + h * Vec3(dims[0] - 1, dims[1] - 1, dims[2] - 1); }
  double diagonal() const { return (upper() - lower()).norm(); }

  bool contains(const Vec3& x, double tol = 0.0) const;
  bool is_boundary_node(int i, int j, int k) const {
    return i == 0 || j == 0 || k == 0 || i == dims[0] - 1 || j == dims[1] - 1 || k == dims[2] - 1;
  }

  /// Continuous index coordinates of a point.
  Vec3 to_index(const Vec3& x) const { return (x - origin) / h; }

  /// Containing cell (clamped to the grid) and the local coordinates in [0,1]^3.
  Index3 locate(const Vec3& x, Vec3& local) const;

  friend bool operator==(const GridSpec& a, const GridSpec& b) {
    return a.origin == b.origin && a.h == b.h && a.dims == b.dims;
  }
};

}  // namespace millforge
