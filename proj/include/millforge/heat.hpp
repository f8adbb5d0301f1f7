#pragma once

#include <cstdint>
#include <vector>

#include "millforge/levelset.hpp"

namespace millforge {

/// Steady-state temperature between an offset part and the grid box:
/// T = 0 on free nodes touching the part, T = 1 on the box faces.
struct TemperatureField {
  enum NodeKind : std::uint8_t { kSolid = 0, kFree = 1, kCold = 2, kHot = 3 };

  GridSpec grid;
  std::vector<double> T;
  std::vector<std::uint8_t> kind;
  int steps = 0;
  double last_change = 0.0;

  double value(const Vec3& y) const;
  /// True when y is inside the box and its cell touches at least one non-solid node.
  bool in_domain(const Vec3& y) const;
};

struct HeatOptions {
  double tolerance = 1e-5;  // max per-node change per step
  int max_steps = 0;        // 0: 20 * max(dims)^2
  /// When set, nodes where this field is >= 0 are held at T = 1 as well.
  const LevelSet* outer = nullptr;
};

/// Explicit Euler on the 7-point Laplacian (dt = h^2/8) to approximate steady
/// state. `warm_start`, when it matches the grid, seeds the free nodes.
/// Throws std::invalid_argument when no free node lies between the two
/// Dirichlet sets.
TemperatureField solve_heat(const LevelSet& omega_plus, const HeatOptions& options = {},
                            const TemperatureField* warm_start = nullptr);

/// Central-difference node gradients interpolated trilinearly at y.
/// Throws std::out_of_range outside the box or deep inside the offset part.
Vec3 grad_T(const TemperatureField& field, const Vec3& y);

/// Discrete Laplacian of T at a node (one row of the steady-state residual).
double heat_residual(const TemperatureField& field, int i, int j, int k);

}  // namespace millforge
