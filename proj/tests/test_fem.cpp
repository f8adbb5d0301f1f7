#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "millforge/fem.hpp"
#include "millforge/sdf.hpp"

using namespace millforge;

namespace {

// Solid block of whole cells [lo, hi] (grid units) on a grid padded by one cell.
Discretization block(Index3 cells, double h, Index3 pad = {1, 1, 1}) {
  Discretization d;
  d.grid = GridSpec(Vec3(-pad[0] * h, -pad[1] * h, -pad[2] * h), h,
                    {cells[0] + 2 * pad[0] + 1, cells[1] + 2 * pad[1] + 1, cells[2] + 2 * pad[2] + 1});
  d.rho.assign(d.grid.cell_count(), 0.0);
  for (std::size_t c = 0; c < d.rho.size(); ++c) {
    const Vec3 x = d.grid.cell_center(c);
    bool inside = true;
    for (int a = 0; a < 3; ++a) inside = inside && x[a] > 0.0 && x[a] < cells[a] * h;
    if (inside) d.rho[c] = 1.0;
  }
  return d;
}

// Plane patch x[axis] = value spanning the whole block.
PatchRegion face(int axis, double value, double extent = 1e3) {
  Vec3 lo = Vec3::Constant(-extent), hi = Vec3::Constant(extent);
  lo[axis] = hi[axis] = value;
  return PatchRegion::box(lo, hi);
}

LoadCase end_load(int axis, double length, const Vec3& force) {
  LoadCase lc;
  lc.name = "end";
  lc.fixed.push_back(face(axis, 0.0));
  lc.tractions.push_back({face(axis, length), force});
  return lc;
}

// Average of one displacement component over the nodes of a patch.
double mean_displacement(const ElasticState& s, const PatchRegion& region, int component) {
  const GridSpec& g = s.disc.grid;
  double sum = 0.0;
  int n = 0;
  for (std::size_t v = 0; v < g.node_count(); ++v) {
    const auto c = g.unindex(v);
    if (!region.contains(g.position(v), 0.5 * g.h) || !s.disc.node_active(c[0], c[1], c[2])) continue;
    sum += s.cases[0].u[3 * v + component];
    ++n;
  }
  return sum / n;
}

}  // namespace

TEST_CASE("single element in uniaxial tension stretches by tL/E") {
  const double L = 2.0, F = 40.0;
  Material mat{1e9, 0.0};
  const Discretization d = block({1, 1, 1}, L);
  const ElasticState s = solve(d, mat, {end_load(2, L, Vec3(0, 0, F))});
  const double stress = F / (L * L);
  const double expected = stress * L / mat.modulus_mpa();
  const GridSpec& g = d.grid;
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 2; ++i) {
      const std::size_t v = g.index(i + 1, j + 1, 2);
      CHECK(s.cases[0].u[3 * v + 2] == doctest::Approx(expected).epsilon(1e-6));
      CHECK(std::abs(s.cases[0].u[3 * v]) <= 1e-9 * expected);
    }
  CHECK(s.cases[0].compliance == doctest::Approx(F * expected).epsilon(1e-6));
  CHECK(s.energy_density[g.cell_index(1, 1, 1)] == doctest::Approx(stress * stress / (2.0 * mat.modulus_mpa())).epsilon(1e-6));
}

TEST_CASE("uniaxial bar: energy density equals t^2/(2E) and zero load gives zero") {
  Material mat{2e9, 0.0};
  const Discretization d = block({2, 2, 6}, 1.0);
  const double F = 8.0, stress = F / 4.0;
  const ElasticState s = solve(d, mat, {end_load(2, 6.0, Vec3(0, 0, F))});
  for (std::size_t c = 0; c < d.rho.size(); ++c)
    if (d.rho[c] > 0.0) CHECK(s.energy_density[c] == doctest::Approx(stress * stress / (2.0 * mat.modulus_mpa())).epsilon(1e-5));

  SurfaceSample side{Vec3(2.0, 1.0, 3.0), Vec3(1, 0, 0), 0};
  const auto w = shape_gradient_compliance(s, std::span(&side, 1));
  CHECK(w[0] == doctest::Approx(stress * stress / (2.0 * mat.modulus_mpa())).epsilon(1e-5));

  const ElasticState zero = solve(d, mat, {end_load(2, 6.0, Vec3::Zero())});
  CHECK(zero.cases[0].compliance == 0.0);
  for (double e : zero.energy_density) CHECK(e == 0.0);
  CHECK(shape_gradient_compliance(zero, std::span(&side, 1))[0] == 0.0);
}

TEST_CASE("cantilever tip deflection matches beam theory") {
  const double L = 64.0, b = 8.0, P = 100.0;
  Material mat{1e9, 0.3};
  const Discretization d = block({64, 8, 8}, 1.0);
  const LoadCase lc = end_load(0, L, Vec3(0, 0, -P));
  const ElasticState s = solve(d, mat, {lc});
  const double I = b * b * b * b / 12.0;
  const double beam = P * L * L * L / (3.0 * mat.modulus_mpa() * I);
  const double tip = -mean_displacement(s, face(0, L), 2);
  MESSAGE("tip " << tip << " beam theory " << beam << " CG iterations " << s.cases[0].iterations);
  CHECK(std::abs(tip - beam) <= 0.15 * beam);
  CHECK(s.cases[0].compliance == doctest::Approx(2.0 * s.cases[0].strain_energy).epsilon(1e-5));
  CHECK(s.cases[0].compliance == doctest::Approx(P * tip).epsilon(1e-3));

  SUBCASE("multigrid and Jacobi preconditioning reach the same answer") {
    FemOptions jacobi;
    jacobi.multigrid = false;
    const ElasticState sj = solve(d, mat, {lc}, jacobi);
    CHECK(sj.cases[0].compliance == doctest::Approx(s.cases[0].compliance).epsilon(1e-5));
    CHECK(s.cases[0].iterations < sj.cases[0].iterations);
  }

  SUBCASE("warm start from the converged state takes few iterations") {
    const ElasticState again = solve(d, mat, {lc}, {}, &s);
    CHECK(again.cases[0].iterations <= 2);
  }
}

TEST_CASE("halving the element size changes compliance by under 5%") {
  Material mat{1e9, 0.3};
  const Vec3 P(0, 0, -50.0);
  const ElasticState coarse = solve(block({32, 8, 8}, 1.0), mat, {end_load(0, 32.0, P)});
  const ElasticState fine = solve(block({64, 16, 16}, 0.5), mat, {end_load(0, 32.0, P)});
  const double c0 = coarse.mean_compliance(), c1 = fine.mean_compliance();
  MESSAGE("h=1: " << c0 << "  h=0.5: " << c1);
  CHECK(std::abs(c1 - c0) <= 0.05 * c1);
}

TEST_CASE("assembled stiffness is symmetric and annihilates rigid motions") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Discretization d;
  d.grid = GridSpec(Vec3(0.5, -1, 2), 0.7, {4, 4, 4});
  d.rho.resize(d.grid.cell_count());
  for (double& r : d.rho) r = u(rng) < 0.2 ? 0.0 : std::max(u(rng), kMinDensity);
  const Material mat{3e9, 0.35};
  const Eigen::MatrixXd K = dense_stiffness(d, mat);
  const double scale = K.cwiseAbs().maxCoeff();
  CHECK((K - K.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale);

  const GridSpec& g = d.grid;
  for (int mode = 0; mode < 6; ++mode) {
    std::vector<double> r(3 * g.node_count());
    for (std::size_t v = 0; v < g.node_count(); ++v) {
      const Vec3 x = g.position(v);
      Vec3 disp = Vec3::Zero();
      if (mode < 3) disp[mode] = 1.0;
      else disp = Vec3(Vec3::Unit(mode - 3)).cross(x);
      for (int a = 0; a < 3; ++a) r[3 * v + a] = disp[a];
    }
    const auto Kr = apply_stiffness(d, mat, r);
    double worst = 0.0;
    for (double v : Kr) worst = std::max(worst, std::abs(v));
    CHECK(worst <= 1e-10 * scale);
    // The matrix-free product agrees with the dense matrix.
    const Eigen::Map<const Eigen::VectorXd> rv(r.data(), static_cast<Eigen::Index>(r.size()));
    CHECK((K * rv).cwiseAbs().maxCoeff() <= 1e-10 * scale);
  }

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(K);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-9 * scale);
}

TEST_CASE("stiffening any element never raises compliance") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  Discretization d = block({12, 4, 4}, 1.0);
  for (double& r : d.rho)
    if (r > 0.0) r = u(rng);
  const Material mat{1e9, 0.3};
  const LoadCase lc = end_load(0, 12.0, Vec3(0, -10.0, -30.0));
  FemOptions tight;
  tight.tolerance = 1e-11;
  const double base = solve(d, mat, {lc}, tight).mean_compliance();

  std::vector<std::size_t> active;
  for (std::size_t c = 0; c < d.rho.size(); ++c)
    if (d.rho[c] > 0.0) active.push_back(c);
  std::shuffle(active.begin(), active.end(), rng);
  for (int t = 0; t < 10; ++t) {
    Discretization stiffer = d;
    stiffer.rho[active[t]] = std::min(1.0, stiffer.rho[active[t]] + 0.3);
    const double c = solve(stiffer, mat, {lc}, tight).mean_compliance();
    CHECK(c <= base * (1.0 + 1e-9));
  }
}

TEST_CASE("discretize maps occupancy to element densities") {
  const GridSpec g(Vec3(-3, -3, -3), 1.0, {7, 7, 7});
  SUBCASE("half-filled cells") {
    const Discretization d = discretize(LevelSet::from_function(g, 3.0, [](const Vec3& x) { return x.z() - 0.5; }));
    CHECK(d.rho[g.cell_index(2, 2, 3)] == doctest::Approx(0.5).epsilon(0.1));
    CHECK(d.rho[g.cell_index(2, 2, 1)] == 1.0);
    CHECK(d.rho[g.cell_index(2, 2, 5)] == 0.0);
  }
  SUBCASE("slivers are clamped to the minimum density") {
    const Discretization d = discretize(LevelSet::from_function(g, 3.0, [](const Vec3& x) { return x.z() - 0.0005; }));
    CHECK(d.rho[g.cell_index(2, 2, 3)] == doctest::Approx(kMinDensity));
  }
  SUBCASE("empty shape") {
    CHECK_THROWS_AS(discretize(LevelSet::from_function(g, 3.0, [](const Vec3& x) { return x.norm() + 1.0; })),
                    EmptyShapeError);
  }
}

TEST_CASE("floating element groups are reported and can be removed") {
  Discretization d = block({8, 2, 2}, 1.0);
  for (std::size_t c = 0; c < d.rho.size(); ++c)
    if (std::abs(d.grid.cell_center(c).x() - 4.5) < 0.6) d.rho[c] = 0.0;
  LoadCase lc;
  lc.fixed.push_back(face(0, 0.0));
  lc.tractions.push_back({face(0, 4.0), Vec3(0, 0, -1)});
  const Material mat{1e9, 0.3};
  const auto floating = floating_components(d, {lc});
  REQUIRE(floating.size() == 1);
  CHECK(floating[0].cells.size() == 12);
  CHECK(floating[0].lo.x() == doctest::Approx(5.0));
  CHECK_THROWS_AS(solve(d, mat, {lc}), FloatingComponentError);
  CHECK(remove_floating(d, {lc}) == 12);
  CHECK_NOTHROW(solve(d, mat, {lc}));

  LoadCase missing = lc;
  missing.fixed = {face(0, 100.0)};
  CHECK_THROWS_AS(solve(d, mat, {missing}), std::invalid_argument);
  CHECK_THROWS_AS((Material{1e9, 0.5}.validate()), std::invalid_argument);
}

TEST_CASE("compliance responds to a thin boundary shift as 2 eps times the surface energy") {
  // Beam x in [0,32] with side faces inside cells so that occupancy varies smoothly.
  const GridSpec g(Vec3(-3, -3, -3), 1.0, {39, 15, 15});
  const double lo = 0.35, hi = 8.35;
  const LevelSet beam = redistance(LevelSet::from_function(g, 4.0, [&](const Vec3& x) {
    return sdf::box(x, Vec3(0, lo, lo), Vec3(32, hi, hi));
  }));
  LoadCase lc;
  lc.fixed.push_back(face(0, 0.0));
  lc.tractions.push_back({face(0, 32.0), Vec3(0, 0, -100.0)});
  const Material mat{1e9, 0.3};
  FemOptions tight;
  tight.tolerance = 1e-9;
  const ElasticState s0 = solve(discretize(beam), mat, {lc}, tight);

  // Move only the side faces between the clamp and the load inward.
  std::vector<double> speed(g.node_count(), 0.0);
  for (std::size_t v = 0; v < g.node_count(); ++v) {
    const double x = g.position(v).x();
    if (x > 4.0 && x < 28.0) speed[v] = -1.0;
  }
  // Central difference: both sides pass through the same redistance.
  const double eps = 0.05;
  auto compliance_after = [&](double sign) {
    std::vector<double> v(speed);
    for (double& x : v) x *= sign;
    return solve(discretize(advect(beam, v, eps)), mat, {lc}, tight).mean_compliance();
  };
  const double actual = 0.5 * (compliance_after(1.0) - compliance_after(-1.0));

  const auto samples = sample_boundary(beam);
  std::vector<double> w = shape_gradient_compliance(s0, samples);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double x = samples[i].position.x();
    if (!(x > 4.0 && x < 28.0)) w[i] = 0.0;
  }
  const double predicted = 2.0 * eps * surface_integral(beam, extend_normal(beam, samples, w));
  MESSAGE("actual " << actual << " predicted " << predicted);
  CHECK(actual > 0.0);
  CHECK(std::abs(actual - predicted) <= 0.15 * std::abs(actual));
}
