#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "millforge/heat.hpp"
#include "millforge/levelset.hpp"

namespace millforge {

/// Ball-end bit of radius r_b and length l_b, backed by a head of radius r_h
/// that extends to infinity behind the bit.
struct ToolModel {
  double bit_radius = 3.0;
  double bit_length = 10.0;
  double head_radius = 15.0;

  void validate() const;
};

/// Approach directions. Each direction points from the tool toward the part;
/// the tool retracts along the negated direction.
class DirectionSet {
public:
  explicit DirectionSet(std::vector<Vec3> directions);
  /// Normalizes each vector first.
  static DirectionSet normalized(std::vector<Vec3> directions);
  /// +-X, +-Y, +-Z.
  static DirectionSet axes();

  std::span<const Vec3> directions() const { return dirs_; }
  std::size_t size() const { return dirs_.size(); }
  const Vec3& operator[](std::size_t i) const { return dirs_[i]; }

private:
  std::vector<Vec3> dirs_;
};

struct MillTestResult {
  bool accessible = false;
  double eta_candidate = 0.0;
  std::optional<Vec3> hit;
};

/// Per-sample filter values and the direction that produced them.
struct FilterField {
  std::vector<double> eta;
  std::vector<std::optional<Vec3>> best_direction;
  std::vector<int> iterations;  // accessibility tests spent per sample

  std::size_t size() const { return eta.size(); }
  double fraction_zero() const;
};

enum class MillingMode { Off, ThreeAxis, Hemisphere, NormalSearch, HeatSearch };

MillingMode parse_milling_mode(const std::string& name);
std::string to_string(MillingMode mode);

struct MillingOptions {
  int max_iters = 8;          // 5-axis searches
  double heat_step = 0.0;     // trajectory step; 0 means one grid spacing
  double contact_slack = 0.25;  // isovalue tolerance at the contact, in grid spacings
  bool smooth_collar = false;
  double collar_radius = 0.0;  // 0 means two grid spacings
  int threads = 1;  // workers for the per-sample loop; results do not depend on it
};

/// Accessibility of surface point x (normal n) from direction m, where
/// p = x + r_b n is the bit-tip sphere center. Casts the bit ray from p
/// against the r_b isosurface and the head ray from p - m (l_b + r_h)
/// against the r_h isosurface, both along -m.
MillTestResult milling_test(const LevelSet& omega, const Vec3& n, const Vec3& p, const Vec3& m,
                            const ToolModel& tool, const MillingOptions& options = {});

/// Convenience overload computing p from the sample.
MillTestResult milling_test(const LevelSet& omega, const SurfaceSample& sample, const Vec3& m,
                            const ToolModel& tool, const MillingOptions& options = {});

/// Copy of omega whose band reaches past the head isosurface, on a grid
/// padded so that the part stays a head radius away from the grid boundary.
LevelSet prepare_for_milling(const LevelSet& omega, const ToolModel& tool);

FilterField filter_3axis(const LevelSet& omega, std::span<const SurfaceSample> samples,
                         const DirectionSet& directions, const ToolModel& tool,
                         const MillingOptions& options = {});

/// The 26 normalized directions from a cube center to its face centers,
/// edge midpoints and corners.
DirectionSet hemisphere_directions();

FilterField filter_5axis_hemisphere(const LevelSet& omega, std::span<const SurfaceSample> samples,
                                    const ToolModel& tool, const MillingOptions& options = {});

struct SearchOutcome {
  bool accessible = false;
  double eta = 0.0;
  std::optional<Vec3> direction;
  int iterations = 0;
  std::vector<Vec3> candidates;  // every direction tested, in order
  std::vector<Vec3> trajectory;  // heat search only: y_k
};

/// Local search guided by the distance field: on a failed test, walk from
/// the hit point up the distance gradient to a peak or plateau and aim the
/// tool axis through it.
SearchOutcome normal_search(const LevelSet& omega, const SurfaceSample& sample, const ToolModel& tool,
                            const MillingOptions& options = {});

/// Local search guided by the temperature gradient away from the part.
SearchOutcome heat_search(const LevelSet& omega, const SurfaceSample& sample, const ToolModel& tool,
                          const TemperatureField& temperature, const MillingOptions& options = {});

FilterField filter_5axis_normal_search(const LevelSet& omega, std::span<const SurfaceSample> samples,
                                       const ToolModel& tool, const MillingOptions& options = {});

FilterField filter_5axis_heat_search(const LevelSet& omega, std::span<const SurfaceSample> samples,
                                     const ToolModel& tool, const TemperatureField& temperature,
                                     const MillingOptions& options = {});

/// Temperature field for heat search: solved around omega offset by r_b.
TemperatureField milling_temperature(const LevelSet& omega, const ToolModel& tool,
                                     const TemperatureField* warm_start = nullptr);

/// Lowers eta near inaccessible samples (never raises it, zeros stay zero).
void smooth_collar(std::span<const SurfaceSample> samples, FilterField& field, double radius);

/// Mode dispatch. `directions` is used by ThreeAxis, `temperature` by HeatSearch.
/// Off yields eta = 1 everywhere with no recorded direction.
FilterField compute_filter(MillingMode mode, const LevelSet& omega, std::span<const SurfaceSample> samples,
                           const ToolModel& tool, const DirectionSet* directions,
                           const TemperatureField* temperature, const MillingOptions& options = {});

}  // namespace millforge
