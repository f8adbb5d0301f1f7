#include "millforge/grid.hpp"

#include <algorithm>
#include <cmath>

namespace millforge {

GridSpec::GridSpec(const Vec3& origin_, double spacing, Index3 dims_)
    : origin(origin_), h(spacing), dims(dims_) {
  validate();
}

GridSpec GridSpec::covering(const Vec3& lo, const Vec3& hi, double spacing, int pad) {
  Index3 d{};
  for (int a = 0; a < 3; ++a) {
    const double extent = hi[a] - lo[a];
    d[a] = static_cast<int>(std::ceil(extent / spacing - 1e-9)) + 1 + 2 * pad;
  }
  return GridSpec(lo - Vec3::Constant(pad * spacing), spacing, d);
}

void GridSpec::validate() const {
  if (!(h > 0.0) || !std::isfinite(h)) throw std::invalid_argument("grid spacing must be positive");
  for (int a = 0; a < 3; ++a)
    if (dims[a] < 4) throw std::invalid_argument("grid dims must each be >= 4");
  if (!origin.allFinite()) throw std::invalid_argument("grid origin must be finite");
}

bool GridSpec::contains(const Vec3& x, double tol) const {
  const Vec3 lo = lower(), hi = upper();
  for (int a = 0; a < 3; ++a)
    if (x[a] < lo[a] - tol || x[a] > hi[a] + tol) return false;
  return true;
}

Index3 GridSpec::locate(const Vec3& x, Vec3& local) const {
  Index3 c{};
  const Vec3 u = to_index(x);
  for (int a = 0; a < 3; ++a) {
    const double ua = std::clamp(u[a], 0.0, static_cast<double>(dims[a] - 1));
    int ia = static_cast<int>(std::floor(ua));
    ia = std::min(ia, dims[a] - 2);
    c[a] = ia;
    local[a] = ua - ia;
  }
  return c;
}

}  // namespace millforge
