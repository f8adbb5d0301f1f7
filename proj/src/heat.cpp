#include "millforge/heat.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace millforge {

namespace {

double trilinear(const GridSpec& g, const std::vector<double>& f, const Vec3& y) {
  Vec3 t;
  const Index3 c = g.locate(y, t);
  double v = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    const int dx = corner & 1, dy = (corner >> 1) & 1, dz = corner >> 2;
    const double w = (dx ? t[0] : 1 - t[0]) * (dy ? t[1] : 1 - t[1]) * (dz ? t[2] : 1 - t[2]);
    v += w * f[g.index(c[0] + dx, c[1] + dy, c[2] + dz)];
  }
  return v;
}

}  // namespace

double TemperatureField::value(const Vec3& y) const { return trilinear(grid, T, y); }

bool TemperatureField::in_domain(const Vec3& y) const {
  if (!grid.contains(y, 1e-9 * grid.h)) return false;
  Vec3 t;
  const Index3 c = grid.locate(y, t);
  for (int corner = 0; corner < 8; ++corner) {
    const std::size_t idx = grid.index(c[0] + (corner & 1), c[1] + ((corner >> 1) & 1), c[2] + (corner >> 2));
    if (kind[idx] != kSolid) return true;
  }
  return false;
}

TemperatureField solve_heat(const LevelSet& omega_plus, const HeatOptions& options,
                            const TemperatureField* warm_start) {
  const GridSpec& g = omega_plus.grid();
  if (options.outer && !(options.outer->grid() == g))
    throw std::invalid_argument("outer boundary field is on a different grid");
  const auto& d = g.dims;
  const std::size_t n = g.node_count();
  TemperatureField field;
  field.grid = g;
  field.T.assign(n, 0.0);
  field.kind.assign(n, TemperatureField::kFree);

  for (std::size_t idx = 0; idx < n; ++idx)
    if (omega_plus[idx] < 0.0) field.kind[idx] = TemperatureField::kSolid;

  const std::ptrdiff_t sx = 1, sy = d[0], sz = sy * d[1];
  const std::ptrdiff_t nbr[6] = {-sx, sx, -sy, sy, -sz, sz};
  std::vector<std::size_t> free_nodes;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        const std::size_t idx = g.index(i, j, k);
        auto& kind = field.kind[idx];
        if (kind == TemperatureField::kSolid) continue;
        if (g.is_boundary_node(i, j, k) || (options.outer && (*options.outer)[idx] >= 0.0)) {
          kind = TemperatureField::kHot;
          field.T[idx] = 1.0;
          continue;
        }
        bool touches = false;
        for (std::ptrdiff_t o : nbr) touches = touches || omega_plus[idx + o] < 0.0;
        if (touches) {
          kind = TemperatureField::kCold;
          continue;
        }
        free_nodes.push_back(idx);
      }
  if (free_nodes.empty())
    throw std::invalid_argument("no free nodes between the offset part and the grid box");

  const bool warm = warm_start && warm_start->grid == g && warm_start->T.size() == n;
  for (std::size_t idx : free_nodes) {
    if (warm) {
      field.T[idx] = std::clamp(warm_start->T[idx], 0.0, 1.0);
      continue;
    }
    // Initial guess: relative position between the part and the nearest box face.
    const auto c = g.unindex(idx);
    int wall = d[0];
    for (int a = 0; a < 3; ++a) wall = std::min({wall, c[a], d[a] - 1 - c[a]});
    const double to_box = wall * g.h;
    const double to_part = std::max(omega_plus[idx], g.h);
    field.T[idx] = to_part / (to_part + to_box);
  }

  const int max_steps = options.max_steps > 0 ? options.max_steps
                                              : 20 * std::max({d[0], d[1], d[2]}) * std::max({d[0], d[1], d[2]});
  std::vector<double> next = field.T;
  // dt = h^2/8 makes the update T += (sum of neighbors - 6T)/8.
  int step = 0;
  double change = 0.0;
  for (; step < max_steps; ++step) {
    change = 0.0;
    for (std::size_t idx : free_nodes) {
      double sum = 0.0;
      for (std::ptrdiff_t o : nbr) sum += field.T[idx + o];
      const double delta = (sum - 6.0 * field.T[idx]) / 8.0;
      next[idx] = field.T[idx] + delta;
      change = std::max(change, std::abs(delta));
    }
    for (std::size_t idx : free_nodes) field.T[idx] = next[idx];
    if (change < options.tolerance) {
      ++step;
      break;
    }
  }
  field.steps = step;
  field.last_change = change;
  return field;
}

Vec3 grad_T(const TemperatureField& field, const Vec3& y) {
  if (!field.in_domain(y)) throw std::out_of_range("point lies outside the heat domain");
  const GridSpec& g = field.grid;
  Vec3 t;
  const Index3 c = g.locate(y, t);
  Vec3 grad = Vec3::Zero();
  for (int corner = 0; corner < 8; ++corner) {
    const int dx = corner & 1, dy = (corner >> 1) & 1, dz = corner >> 2;
    const double w = (dx ? t[0] : 1 - t[0]) * (dy ? t[1] : 1 - t[1]) * (dz ? t[2] : 1 - t[2]);
    const Index3 node{c[0] + dx, c[1] + dy, c[2] + dz};
    Vec3 gn;
    for (int a = 0; a < 3; ++a) {
      Index3 lo = node, hi = node;
      lo[a] = std::max(node[a] - 1, 0);
      hi[a] = std::min(node[a] + 1, g.dims[a] - 1);
      gn[a] = (field.T[g.index(hi[0], hi[1], hi[2])] - field.T[g.index(lo[0], lo[1], lo[2])]) /
              ((hi[a] - lo[a]) * g.h);
    }
    grad += w * gn;
  }
  return grad;
}

double heat_residual(const TemperatureField& field, int i, int j, int k) {
  const GridSpec& g = field.grid;
  const double c = field.T[g.index(i, j, k)];
  double sum = 0.0;
  sum += field.T[g.index(i - 1, j, k)] + field.T[g.index(i + 1, j, k)];
  sum += field.T[g.index(i, j - 1, k)] + field.T[g.index(i, j + 1, k)];
  sum += field.T[g.index(i, j, k - 1)] + field.T[g.index(i, j, k + 1)];
  return (sum - 6.0 * c) / (g.h * g.h);
}

}  // namespace millforge
