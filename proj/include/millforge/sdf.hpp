#pragma once

#include <functional>

#include "millforge/grid.hpp"

// Analytic signed distance functions used to build initial shapes, tool
// volumes and test scenes. Negative inside.
namespace millforge::sdf {

using Field = std::function<double(const Vec3&)>;

double sphere(const Vec3& x, const Vec3& center, double radius);
/// Axis-aligned box given by its corners.
double box(const Vec3& x, const Vec3& lo, const Vec3& hi);
/// Finite cylinder along a coordinate axis, spanning [lo, hi] along that axis.
double cylinder(const Vec3& x, int axis, const Vec3& center, double radius, double lo, double hi);
/// Capsule around the segment [a, b].
double capsule(const Vec3& x, const Vec3& a, const Vec3& b, double radius);
/// Capsule around the ray starting at a in unit direction d (infinite length).
double ray_capsule(const Vec3& x, const Vec3& a, const Vec3& d, double radius);
/// Half-space {n . x <= n . p} with unit n.
double half_space(const Vec3& x, const Vec3& point, const Vec3& normal);

Field make_union(Field a, Field b);
Field make_subtract(Field a, Field b);
Field make_intersect(Field a, Field b);

}  // namespace millforge::sdf
