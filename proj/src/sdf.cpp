#include "millforge/sdf.hpp"

#include <algorithm>
#include <cmath>

namespace millforge::sdf {

double sphere(const Vec3& x, const Vec3& center, double radius) { return (x - center).norm() - radius; }

double box(const Vec3& x, const Vec3& lo, const Vec3& hi) {
  const Vec3 c = 0.5 * (lo + hi);
  const Vec3 half = 0.5 * (hi - lo);
  const Vec3 q = (x - c).cwiseAbs() - half;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

double cylinder(const Vec3& x, int axis, const Vec3& center, double radius, double lo, double hi) {
  Vec3 r = x - center;
  const double along = x[axis];
  r[axis] = 0.0;
  const double dr = r.norm() - radius;
  const double mid = 0.5 * (lo + hi);
  const double da = std::abs(along - mid) - 0.5 * (hi - lo);
  const double ox = std::max(dr, 0.0), oy = std::max(da, 0.0);
  return std::sqrt(ox * ox + oy * oy) + std::min(std::max(dr, da), 0.0);
}

double capsule(const Vec3& x, const Vec3& a, const Vec3& b, double radius) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((x - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (x - (a + t * ab)).norm() - radius;
}

double ray_capsule(const Vec3& x, const Vec3& a, const Vec3& d, double radius) {
  const double t = std::max(0.0, (x - a).dot(d));
  return (x - (a + t * d)).norm() - radius;
}

double half_space(const Vec3& x, const Vec3& point, const Vec3& normal) { return normal.dot(x - point); }

Field make_union(Field a, Field b) {
  return [a = std::move(a), b = std::move(b)](const Vec3& x) { return std::min(a(x), b(x)); };
}
Field make_subtract(Field a, Field b) {
  return [a = std::move(a), b = std::move(b)](const Vec3& x) { return std::max(a(x), -b(x)); };
}
Field make_intersect(Field a, Field b) {
  return [a = std::move(a), b = std::move(b)](const Vec3& x) { return std::max(a(x), b(x)); };
}

}  // namespace millforge::sdf
