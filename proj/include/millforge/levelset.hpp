#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "millforge/grid.hpp"

namespace millforge {

/// Dense signed-distance field with a narrow band of half-width `band_width`.
/// The shape is the region where the field is negative. Values outside the
/// band are clamped to +/- band_width.
class LevelSet {
public:
  LevelSet() = default;
  LevelSet(GridSpec grid, double band_width);

  /// Samples an implicit function at every node and clamps to the band.
  /// The function should be (close to) a signed distance.
  static LevelSet from_function(const GridSpec& grid, double band_width,
                                const std::function<double(const Vec3&)>& f);

  const GridSpec& grid() const { return grid_; }
  double band_width() const { return band_; }
  double spacing() const { return grid_.h; }

  std::span<const double> values() const { return phi_; }
  std::span<double> values() { return phi_; }
  double operator[](std::size_t idx) const { return phi_[idx]; }
  double& operator[](std::size_t idx) { return phi_[idx]; }

  double at(int i, int j, int k) const { return phi_[grid_.index(i, j, k)]; }
  /// Node value with indices clamped to the grid.
  double at_clamped(int i, int j, int k) const;

  bool in_band(std::size_t idx) const { return std::abs(phi_[idx]) < band_; }

  /// Trilinear interpolation; points outside the grid are clamped onto it.
  double interpolate(const Vec3& x) const;
  /// Central-difference gradient at a node (one-sided on the grid boundary).
  Vec3 node_gradient(int i, int j, int k) const;
  /// Trilinear interpolation of node gradients.
  Vec3 gradient(const Vec3& x) const;

  /// Re-clamps values to the band. Does not redistance.
  void clamp_to_band();
  /// Changes the band width; callers redistance afterwards to fill it.
  void set_band_width(double width) { band_ = width; }

  bool empty() const;

private:
  GridSpec grid_;
  double band_ = 0.0;
  std::vector<double> phi_;
};

/// A point on the zero level set obtained by projecting a band node.
struct SurfaceSample {
  Vec3 position;
  Vec3 normal;  // outward, unit
  std::size_t node = 0;
};

/// Axis-aligned mirror plane `x[axis] = offset`.
struct MirrorPlane {
  int axis = 0;
  double offset = 0.0;
};

/// First point along the ray where the field crosses `iso` from above.
/// Sphere tracing with bisection refinement; the ray is clipped to the grid box.
/// Returns the start point itself when it already lies below `iso`.
/// `max_distance` truncates the ray (in units of |dir|).
std::optional<Vec3> raycast(const LevelSet& ls, const Vec3& start, const Vec3& dir, double iso,
                            double max_distance = std::numeric_limits<double>::infinity());

/// Fast-sweeping reinitialization to a signed distance, band recentered.
/// Throws EmptyShapeError when there is no zero crossing.
LevelSet redistance(const LevelSet& ls);
void redistance_in_place(LevelSet& ls);

/// Shifts the field by a constant so that volume(ls) matches `target`
/// (within `tolerance`), offsetting the slow drift of repeated redistancing.
/// The shift is limited to half a cell; returns the applied shift.
double restore_volume(LevelSet& ls, double target, double tolerance = 1e-9);

/// Zero level set moved outward by `o` (inward for negative `o`).
LevelSet offset(const LevelSet& ls, double o);

/// First-order upwind integration of phi_t + V |grad phi| = 0 for pseudo-time t.
/// Positive speed grows the shape. `speed` holds one value per node.
LevelSet advect(const LevelSet& ls, std::span<const double> speed, double t);

/// Morphological closing: offset by +o, then by -o.
LevelSet close(const LevelSet& ls, double o);

/// Nodes with |phi| <= h/2 projected onto the zero set, duplicates within h/4 merged.
std::vector<SurfaceSample> sample_boundary(const LevelSet& ls);

/// Extends per-sample values to every band node via closest-point lookup.
std::vector<double> extend_normal(const LevelSet& ls, std::span<const SurfaceSample> samples,
                                  std::span<const double> boundary_values);

LevelSet unite(const LevelSet& a, const LevelSet& b);
LevelSet intersect(const LevelSet& a, const LevelSet& b);
/// a minus b.
LevelSet subtract(const LevelSet& a, const LevelSet& b);
/// phi <- min(phi, phi o reflection). The plane must map nodes onto nodes.
LevelSet mirror(const LevelSet& ls, const MirrorPlane& plane);

/// Per-cell occupied volume fraction in [0,1] (sub-cell linear estimate).
std::vector<double> cell_occupancy(const LevelSet& ls);
double volume(const LevelSet& ls);

/// Integral over the zero set of a node field, using a smoothed delta of width 1.5h.
double surface_integral(const LevelSet& ls, std::span<const double> node_values);
double surface_area(const LevelSet& ls);

/// Godunov upwind gradient norm at a node (the discretization the redistancer solves).
double upwind_gradient_norm(const LevelSet& ls, int i, int j, int k);

}  // namespace millforge
