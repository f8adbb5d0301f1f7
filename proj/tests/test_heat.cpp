#include <doctest.h>

#include <cmath>

#include "millforge/heat.hpp"
#include "millforge/sdf.hpp"

using namespace millforge;

namespace {

// Half-space x < 0.25: solid up to x = 0, cold plane at x = 1, hot face at x = 8.
LevelSet slab_part() {
  const GridSpec g(Vec3(-4, -30, -30), 1.0, {13, 61, 61});
  return LevelSet::from_function(g, 4.0, [](const Vec3& x) { return x.x() - 0.25; });
}

// Exact Laplace solution between concentric spheres a (T = 0) and b (T = 1).
double shell(double r, double a, double b) { return (1.0 / a - 1.0 / r) / (1.0 / a - 1.0 / b); }

}  // namespace

TEST_CASE("slab: temperature is linear across the gap") {
  const TemperatureField f = solve_heat(slab_part());
  const double L = 7.0;
  for (int i = 1; i <= 8; ++i) {
    const double expected = (i - 1) / L;
    const Vec3 y(i, 0.0, 0.0);
    CHECK(std::abs(f.value(y) - expected) <= 0.02);
  }
  for (double x : {2.0, 3.5, 5.0, 6.5}) {
    const Vec3 g = grad_T(f, Vec3(x, 0.3, -0.7));
    CHECK(g.x() == doctest::Approx(1.0 / L).epsilon(0.02));
    CHECK(std::abs(g.y()) <= 0.02 / L);
    CHECK(std::abs(g.z()) <= 0.02 / L);
  }
}

TEST_CASE("sphere in a box: bracketed by the inscribed and circumscribed shell solutions") {
  const double a = 4.0, B = 12.0, h = 0.5;
  const GridSpec g(Vec3::Constant(-B), h, {49, 49, 49});
  // Omega+ slightly smaller than a so that the cold nodes sit near radius a.
  const LevelSet part = LevelSet::from_function(g, 4.0, [&](const Vec3& x) { return x.norm() - (a - 0.5 * h); });
  const TemperatureField f = solve_heat(part);

  int checked = 0;
  double worst_angle = 0.0;
  for (int k = 0; k < g.dims[2]; k += 2)
    for (int j = 0; j < g.dims[1]; j += 2)
      for (int i = 0; i < g.dims[0]; i += 2) {
        const std::size_t idx = g.index(i, j, k);
        if (f.kind[idx] != TemperatureField::kFree) continue;
        const Vec3 y = g.position(i, j, k);
        const double r = y.norm();
        if (r <= a || r >= B) continue;
        const double lower = shell(r, a, std::sqrt(3.0) * B), upper = shell(r, a, B);
        CHECK(f.T[idx] >= lower - 0.05);
        CHECK(f.T[idx] <= upper + 0.05);
        ++checked;
        // Away from the box corners and from the voxel staircase of the cold surface.
        if (r >= a + 3 * h && r < 0.75 * B) {
          const Vec3 grad = grad_T(f, y);
          const double c = grad.normalized().dot(y.normalized());
          worst_angle = std::max(worst_angle, std::acos(std::clamp(c, -1.0, 1.0)));
        }
      }
  CHECK(checked > 1000);
  CHECK(worst_angle * 180.0 / M_PI <= 10.0);

  SUBCASE("maximum principle and residual") {
    double lo = 1.0, hi = 0.0, worst_residual = 0.0;
    for (int k = 1; k < g.dims[2] - 1; ++k)
      for (int j = 1; j < g.dims[1] - 1; ++j)
        for (int i = 1; i < g.dims[0] - 1; ++i) {
          const std::size_t idx = g.index(i, j, k);
          if (f.kind[idx] != TemperatureField::kFree) continue;
          lo = std::min(lo, f.T[idx]);
          hi = std::max(hi, f.T[idx]);
          worst_residual = std::max(worst_residual, std::abs(heat_residual(f, i, j, k)));
          // No interior extremum: some neighbor is strictly higher and some strictly lower.
          double nmin = 2.0, nmax = -1.0;
          for (int a2 = 0; a2 < 3; ++a2)
            for (int s = -1; s <= 1; s += 2) {
              Index3 q{i, j, k};
              q[a2] += s;
              const double v = f.T[g.index(q[0], q[1], q[2])];
              nmin = std::min(nmin, v);
              nmax = std::max(nmax, v);
            }
          REQUIRE(nmin < f.T[idx]);
          REQUIRE(nmax > f.T[idx]);
        }
    CHECK(lo > 0.0);
    CHECK(hi < 1.0);
    CHECK(worst_residual <= 1e-3 / (h * h));
  }

  SUBCASE("gradient ascent trajectories reach the box") {
    const int limit = static_cast<int>(10.0 * g.diagonal() / h);
    int started = 0;
    for (int k = 3; k < g.dims[2] - 3; k += 7)
      for (int j = 3; j < g.dims[1] - 3; j += 7)
        for (int i = 3; i < g.dims[0] - 3; i += 7) {
          const std::size_t idx = g.index(i, j, k);
          if (f.kind[idx] != TemperatureField::kFree) continue;
          ++started;
          Vec3 y = g.position(i, j, k);
          double t = f.value(y);
          int steps = 0;
          bool reached = false;
          while (steps < limit) {
            const Vec3 grad = grad_T(f, y);
            REQUIRE(grad.norm() > 1e-9);
            y += h * grad.normalized();
            ++steps;
            if (!g.contains(y) || f.value(y) >= 1.0 - 1e-9) {
              reached = true;
              break;
            }
            const double tn = f.value(y);
            REQUIRE(tn > t);
            t = tn;
            // Within one cell of the wall counts as arriving at a box node.
            const Vec3 u = g.to_index(y);
            for (int ax = 0; ax < 3; ++ax)
              if (u[ax] < 1.0 || u[ax] > g.dims[ax] - 2.0) reached = true;
            if (reached) break;
          }
          CHECK(reached);
        }
    CHECK(started > 10);
  }

  SUBCASE("gradient next to a hot wall points at the wall") {
    const Vec3 near_wall = g.position(g.dims[0] - 2, 24, 24);
    const Vec3 grad = grad_T(f, near_wall);
    CHECK(grad.x() > 0.0);
    CHECK(grad.normalized().x() > 0.9);
  }

  SUBCASE("warm start converges faster") {
    const TemperatureField again = solve_heat(part, {}, &f);
    CHECK(again.steps < f.steps / 4);
    double diff = 0.0;
    for (std::size_t i = 0; i < f.T.size(); ++i) diff = std::max(diff, std::abs(f.T[i] - again.T[i]));
    CHECK(diff < 0.01);
  }
}

TEST_CASE("concentric spheres: an outer hot sphere gives the shell solution") {
  const double a = 4.0, b = 10.0, h = 0.5;
  const GridSpec g(Vec3::Constant(-12), h, {49, 49, 49});
  const LevelSet part = LevelSet::from_function(g, 4.0, [&](const Vec3& x) { return x.norm() - (a - 0.5 * h); });
  const LevelSet outer = LevelSet::from_function(g, 4.0, [&](const Vec3& x) { return x.norm() - b; });
  HeatOptions options;
  options.outer = &outer;
  const TemperatureField f = solve_heat(part, options);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const double r = g.position(i).norm();
    if (r > b) CHECK(f.T[i] == 1.0);
    if (f.kind[i] != TemperatureField::kFree || r < a + h || r > b - h) continue;
    worst = std::max(worst, std::abs(f.T[i] - shell(r, a, b)));
  }
  CHECK(worst <= 0.03);

  const LevelSet elsewhere = LevelSet::from_function(GridSpec(Vec3::Zero(), h, {9, 9, 9}), 4.0,
                                                     [](const Vec3& x) { return x.norm(); });
  options.outer = &elsewhere;
  CHECK_THROWS_AS(solve_heat(part, options), std::invalid_argument);
}

TEST_CASE("heat errors") {
  const GridSpec g(Vec3::Constant(-4), 1.0, {9, 9, 9});
  const LevelSet full = LevelSet::from_function(g, 3.0, [](const Vec3& x) { return x.norm() - 20.0; });
  CHECK_THROWS_AS(solve_heat(full), std::invalid_argument);

  const LevelSet ball = LevelSet::from_function(g, 3.0, [](const Vec3& x) { return x.norm() - 3.0; });
  const TemperatureField f = solve_heat(ball);
  CHECK_THROWS_AS(grad_T(f, Vec3(0.1, 0.1, 0.1)), std::out_of_range);
  CHECK_THROWS_AS(grad_T(f, Vec3(9, 0, 0)), std::out_of_range);
  CHECK_NOTHROW(grad_T(f, Vec3(2.5, 0.2, 0.1)));
}
