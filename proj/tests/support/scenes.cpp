#include "scenes.hpp"

#include <algorithm>
#include <random>

#include "millforge/sdf.hpp"

namespace scenes {

using namespace millforge;

namespace {

LevelSet build(const GridSpec& g, double band, const sdf::Field& f) {
  return redistance(LevelSet::from_function(g, band, f));
}

}  // namespace

LevelSet blind_hole(double hole_radius, double h, double band) {
  const GridSpec g = GridSpec::covering(Vec3(-20, -20, -30), Vec3(20, 20, 14), h, 0);
  return build(g, band, [hole_radius](const Vec3& x) {
    const double block = sdf::box(x, Vec3(-12, -12, -24), Vec3(12, 12, 0));
    const double hole = sdf::cylinder(x, 2, Vec3::Zero(), hole_radius, -20.0, 5.0);
    return std::max(block, -hole);
  });
}

LevelSet flat_top(double h, double band) {
  const GridSpec g = GridSpec::covering(Vec3(-8, -8, -8), Vec3(8, 8, 8), h, 0);
  return build(g, band, [](const Vec3& x) { return std::max(x.z(), sdf::box(x, Vec3(-20, -20, -6), Vec3(20, 20, 20))); });
}

LevelSet ledge(double h, double band) {
  const GridSpec g = GridSpec::covering(Vec3(-16, -10, -8), Vec3(16, 10, 16), h, 0);
  return build(g, band, [](const Vec3& x) {
    const double floor = sdf::box(x, Vec3(-14, -8, -4), Vec3(6, 8, 0));
    const double wall = sdf::box(x, Vec3(-14, -8, -4), Vec3(-10, 8, 12));
    // Ledge slab between the sloped underside z = 5 + 0.3 x and z = 12, up to x = 3.
    const Vec3 up = Vec3(-0.3, 0, 1).normalized();
    const double under = -sdf::half_space(x, Vec3(0, 0, 5), up);
    const double slab = std::max({under, x.z() - 12.0, x.x() - 3.0, -x.x() - 14.0, std::abs(x.y()) - 8.0});
    return std::min({floor, wall, slab});
  });
}

LevelSet hook(double h, double band) {
  const GridSpec g = GridSpec::covering(Vec3(-22, -14, -26), Vec3(22, 14, 16), h, 0);
  return build(g, band, [](const Vec3& x) {
    const double block = sdf::box(x, Vec3(-16, -10, -20), Vec3(16, 10, 0));
    const double chamber = sdf::box(x, Vec3(-12, -6, -16), Vec3(12, 6, -4));
    const double slot = sdf::box(x, Vec3(4, -6, -5), Vec3(12, 6, 1));
    return std::max(block, -std::min(chamber, slot));
  });
}

LevelSet random_balls(unsigned seed, double h, double band) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::pair<Vec3, double>> balls;
  for (int b = 0; b < 4; ++b) balls.emplace_back(Vec3(8 * u(rng), 8 * u(rng), 8 * u(rng)), 3.0 + 2.0 * std::abs(u(rng)));
  const GridSpec g = GridSpec::covering(Vec3::Constant(-16), Vec3::Constant(16), h, 0);
  return build(g, band, [balls](const Vec3& x) {
    double d = 1e9;
    for (const auto& [c, r] : balls) d = std::min(d, sdf::sphere(x, c, r));
    return d;
  });
}

}  // namespace scenes
