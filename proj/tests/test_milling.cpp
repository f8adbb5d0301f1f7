#include <doctest.h>

#include <cmath>
#include <random>

#include "millforge/milling.hpp"
#include "millforge/sdf.hpp"
#include "support/oracle.hpp"
#include "support/scenes.hpp"

using namespace millforge;

namespace {

SurfaceSample nearest_sample(const std::vector<SurfaceSample>& samples, const Vec3& x, const Vec3& n) {
  double best = 1e300;
  SurfaceSample out;
  for (const auto& s : samples) {
    if (s.normal.dot(n) < 0.9) continue;
    const double d = (s.position - x).norm();
    if (d < best) {
      best = d;
      out = s;
    }
  }
  REQUIRE(best < 1.0);
  return out;
}

const ToolModel kSmallTool{0.5, 3.0, 1.5};
const ToolModel kHookTool{1.0, 25.0, 3.0};

}  // namespace

TEST_CASE("milling_test on a flat top") {
  const LevelSet part = prepare_for_milling(scenes::flat_top(), kSmallTool);
  const Vec3 n(0, 0, 1);
  const Vec3 p = kSmallTool.bit_radius * n;
  const auto down = milling_test(part, n, p, Vec3(0, 0, -1), kSmallTool);
  CHECK(down.accessible);
  CHECK(down.eta_candidate == doctest::Approx(1.0));
  const auto up = milling_test(part, n, p, Vec3(0, 0, 1), kSmallTool);
  CHECK_FALSE(up.accessible);
  CHECK_FALSE(up.hit);

  // A band that does not reach the head isosurface is refused.
  CHECK_THROWS_AS(milling_test(scenes::flat_top(0.5, 1.0), n, p, Vec3(0, 0, -1), kSmallTool),
                  std::invalid_argument);
}

TEST_CASE("blind hole: a wide bit cannot reach the bottom, a thin long one can") {
  const ToolModel wide{3.0, 10.0, 6.0};
  const LevelSet part = prepare_for_milling(scenes::blind_hole(2.0), wide);
  const auto samples = sample_boundary(part);
  const SurfaceSample bottom = nearest_sample(samples, Vec3(0, 0, -20), Vec3(0, 0, 1));

  const auto dirs = hemisphere_directions();
  for (const Vec3& m : dirs.directions()) {
    const auto r = milling_test(part, bottom, m, wide);
    CHECK_FALSE(r.accessible);
    if (bottom.normal.dot(m) < 0.0) CHECK(oracle::classify(part, bottom.position, bottom.normal, m, wide) == oracle::Verdict::Blocked);
  }
  const FilterField f = filter_5axis_hemisphere(part, std::vector<SurfaceSample>{bottom}, wide);
  CHECK(f.eta[0] == 0.0);

  const ToolModel thin{1.0, 25.0, 4.0};
  const LevelSet part_thin = prepare_for_milling(scenes::blind_hole(2.0), thin);
  const SurfaceSample bottom_thin = nearest_sample(sample_boundary(part_thin), Vec3(0, 0, -20), Vec3(0, 0, 1));
  const auto r = milling_test(part_thin, bottom_thin, Vec3(0, 0, -1), thin);
  CHECK(r.accessible);
  CHECK(oracle::classify(part_thin, bottom_thin.position, bottom_thin.normal, Vec3(0, 0, -1), thin) ==
        oracle::Verdict::Accessible);
}

TEST_CASE("3-axis filter on a sphere") {
  const LevelSet part = scenes::random_balls(0, 0.5, 4.0);  // only used for its grid
  const LevelSet ball = LevelSet::from_function(part.grid(), 4.0, [](const Vec3& x) { return x.norm() - 10.0; });
  const auto samples = sample_boundary(ball);
  const std::vector<SurfaceSample> picked{nearest_sample(samples, Vec3(0, 0, 10), Vec3(0, 0, 1)),
                                          nearest_sample(samples, Vec3(1, 1, 0).normalized() * 10.0,
                                                         Vec3(1, 1, 0).normalized())};
  const FilterField f = filter_3axis(ball, picked, DirectionSet::axes(), kSmallTool);
  CHECK(f.eta[0] == doctest::Approx(1.0).epsilon(1e-3));
  REQUIRE(f.best_direction[0]);
  CHECK((*f.best_direction[0] - Vec3(0, 0, -1)).norm() < 1e-12);
  CHECK(f.eta[1] == doctest::Approx(std::sqrt(0.5)).epsilon(0.02));
  CHECK(f.best_direction[1]);
}

TEST_CASE("3-axis filter: grazing slot walls get zero") {
  const GridSpec g = GridSpec::covering(Vec3(-12, -12, -12), Vec3(12, 12, 8), 0.5, 0);
  const LevelSet part = redistance(LevelSet::from_function(g, 4.0, [](const Vec3& x) {
    const double block = sdf::box(x, Vec3(-10, -10, -10), Vec3(10, 10, 0));
    const double slot = sdf::box(x, Vec3(-1, -6, -8), Vec3(1, 6, 2));
    return std::max(block, -slot);
  }));
  const auto samples = sample_boundary(part);
  const DirectionSet down({Vec3(0, 0, -1)});
  const FilterField f = filter_3axis(part, samples, down, kSmallTool);
  int walls = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (std::abs(s.normal.x()) > 0.99 && std::abs(s.position.x()) < 1.1 && std::abs(s.position.y()) < 5 &&
        s.position.z() < -1 && s.position.z() > -7) {
      ++walls;
      CHECK(f.eta[i] == 0.0);
    }
  }
  CHECK(walls > 20);
}

TEST_CASE("hemisphere directions") {
  const DirectionSet d = hemisphere_directions();
  CHECK(d.size() == 26);
  bool down = false, corner = false;
  for (const Vec3& m : d.directions()) {
    CHECK(std::abs(m.norm() - 1.0) < 1e-12);
    down = down || (m - Vec3(0, 0, -1)).norm() < 1e-12;
    corner = corner || (m - Vec3(1, 1, 1).normalized()).norm() < 1e-12;
    bool negated = false;
    for (const Vec3& q : d.directions()) negated = negated || (q + m).norm() < 1e-12;
    CHECK(negated);
  }
  CHECK(down);
  CHECK(corner);
  CHECK_THROWS_AS(DirectionSet({}), std::invalid_argument);
  CHECK_THROWS_AS(DirectionSet({Vec3(1, 1, 0)}), std::invalid_argument);
}

TEST_CASE("hemisphere filter on flat and 45-degree faces") {
  const LevelSet flat = prepare_for_milling(scenes::flat_top(), kSmallTool);
  std::vector<SurfaceSample> top;
  for (const auto& s : sample_boundary(flat))
    if (s.normal.z() > 0.999 && s.position.head<2>().norm() < 4.0) top.push_back(s);
  REQUIRE(top.size() > 50);
  const FilterField f = filter_5axis_hemisphere(flat, top, kSmallTool);
  for (double e : f.eta) CHECK(e == doctest::Approx(1.0).epsilon(1e-3));

  const GridSpec g = GridSpec::covering(Vec3::Constant(-8), Vec3::Constant(8), 0.5, 0);
  const Vec3 n = Vec3(1, 1, 0).normalized();
  const LevelSet facet = LevelSet::from_function(g, 4.0, [&](const Vec3& x) { return n.dot(x); });
  const SurfaceSample s{Vec3::Zero(), n, 0};
  const FilterField ff = filter_5axis_hemisphere(facet, std::vector<SurfaceSample>{s}, kSmallTool);
  CHECK(ff.eta[0] == doctest::Approx(1.0));
  REQUIRE(ff.best_direction[0]);
  CHECK((*ff.best_direction[0] + n).norm() < 1e-12);
}

TEST_CASE("normal search") {
  SUBCASE("flat top succeeds immediately") {
    const LevelSet flat = scenes::flat_top();
    const SurfaceSample s{Vec3::Zero(), Vec3(0, 0, 1), 0};
    const auto o = normal_search(flat, s, kSmallTool);
    CHECK(o.accessible);
    CHECK(o.iterations == 1);
    CHECK(o.eta == doctest::Approx(1.0));
  }
  SUBCASE("escapes from under a ledge") {
    const LevelSet part = prepare_for_milling(scenes::ledge(), kSmallTool);
    const SurfaceSample s = nearest_sample(sample_boundary(part), scenes::ledge_sample(), Vec3(0, 0, 1));
    const auto o = normal_search(part, s, kSmallTool);
    REQUIRE(o.accessible);
    CHECK(o.iterations <= 3);
    REQUIRE(o.direction);
    CHECK(o.eta == doctest::Approx(-o.direction->dot(s.normal)));
    CHECK(oracle::classify(part, s.position, s.normal, *o.direction, kSmallTool) != oracle::Verdict::Blocked);
    // Straight up is blocked by the ledge.
    CHECK(oracle::classify(part, s.position, s.normal, Vec3(0, 0, -1), kSmallTool) == oracle::Verdict::Blocked);
  }
}

TEST_CASE("heat search") {
  SUBCASE("flat top succeeds immediately") {
    const LevelSet flat = prepare_for_milling(scenes::flat_top(), kSmallTool);
    const TemperatureField t = milling_temperature(flat, kSmallTool);
    const SurfaceSample s{Vec3::Zero(), Vec3(0, 0, 1), 0};
    const auto o = heat_search(flat, s, kSmallTool, t);
    CHECK(o.accessible);
    CHECK(o.iterations == 1);
    CHECK(o.trajectory.size() == 1);
  }
  SUBCASE("hook: heat search finds an exit that normal search misses") {
    const LevelSet part = prepare_for_milling(scenes::hook(), kHookTool);
    const SurfaceSample s = nearest_sample(sample_boundary(part), scenes::hook_sample(), Vec3(0, 0, 1));
    MillingOptions options;
    options.max_iters = 40;
    const auto ns = normal_search(part, s, kHookTool, options);
    if (ns.accessible) CHECK(oracle::classify(part, s.position, s.normal, *ns.direction, kHookTool) != oracle::Verdict::Blocked);
    CHECK_FALSE(ns.accessible);

    const TemperatureField t = milling_temperature(part, kHookTool);
    const auto hs = heat_search(part, s, kHookTool, t, options);
    REQUIRE(hs.accessible);
    CHECK(oracle::classify(part, s.position, s.normal, *hs.direction, kHookTool) != oracle::Verdict::Blocked);
    for (std::size_t k = 1; k < hs.trajectory.size(); ++k)
      CHECK(t.value(hs.trajectory[k]) >= t.value(hs.trajectory[k - 1]) - 1e-12);
    // Straight up hits the chamber ceiling.
    CHECK(oracle::classify(part, s.position, s.normal, Vec3(0, 0, -1), kHookTool) == oracle::Verdict::Blocked);
  }
}

TEST_CASE("bit test agrees with the swept-volume oracle on random rays") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const ToolModel tool{1.5, 6.0, 3.0};
  int agree = 0, tangent = 0, disagree = 0;
  for (unsigned scene = 0; scene < 5; ++scene) {
    const LevelSet part = prepare_for_milling(scenes::random_balls(100 + scene), tool);
    for (int t = 0; t < 100; ++t) {
      const Vec3 p(12 * u(rng), 12 * u(rng), 12 * u(rng));
      const Vec3 m = Vec3(u(rng), u(rng), u(rng)).normalized();
      const auto r = milling_test(part, -m, p, m, tool);
      const bool bit_blocked = !r.accessible && r.hit && (*r.hit - p).norm() <= tool.bit_length + 1e-9;
      const double o = oracle::bit_overlap(part, p, m, tool);
      if (std::abs(o) <= part.spacing()) {
        ++tangent;
        continue;
      }
      if (bit_blocked == (o < 0.0)) ++agree;
      else ++disagree;
    }
  }
  CHECK(disagree == 0);
  CHECK(agree + tangent == 500);
  MESSAGE("bit verdicts: " << agree << " agree, " << tangent << " within tangency");
}

TEST_CASE("filters are sound against the swept-volume oracle") {
  const LevelSet part = prepare_for_milling(scenes::hook(), kHookTool);
  const auto all = sample_boundary(part);
  std::vector<SurfaceSample> samples;
  for (std::size_t i = 0; i < all.size(); i += 23) samples.push_back(all[i]);
  const TemperatureField temp = milling_temperature(part, kHookTool);
  MillingOptions options;
  options.max_iters = 12;
  const FilterField fields[] = {filter_5axis_hemisphere(part, samples, kHookTool, options),
                                filter_5axis_normal_search(part, samples, kHookTool, options),
                                filter_5axis_heat_search(part, samples, kHookTool, temp, options)};
  for (const FilterField& f : fields) {
    int positive = 0, sound = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      CHECK(f.eta[i] >= 0.0);
      CHECK(f.eta[i] <= 1.0);
      if (f.eta[i] == 0.0) continue;
      ++positive;
      REQUIRE(f.best_direction[i]);
      if (oracle::classify(part, samples[i].position, samples[i].normal, *f.best_direction[i], kHookTool) !=
          oracle::Verdict::Blocked)
        ++sound;
    }
    CHECK(positive > 20);
    CHECK(sound >= 0.99 * positive);
  }
}

TEST_CASE("bigger tools never reach more") {
  const LevelSet base = scenes::hook();
  const ToolModel small{1.0, 25.0, 3.0};
  const ToolModel variants[] = {{1.5, 25.0, 3.0}, {1.0, 25.0, 4.5}, {1.0, 15.0, 3.0}};
  const LevelSet prepared = prepare_for_milling(base, ToolModel{1.5, 25.0, 4.5});
  const auto all = sample_boundary(prepared);
  std::vector<SurfaceSample> samples;
  for (std::size_t i = 0; i < all.size(); i += 17) samples.push_back(all[i]);
  const DirectionSet dirs = hemisphere_directions();
  int violations = 0, tangent_violations = 0;
  for (const ToolModel& big : variants) {
    for (const auto& s : samples)
      for (const Vec3& m : dirs.directions()) {
        const bool small_ok = milling_test(prepared, s, m, small).accessible;
        const bool big_ok = milling_test(prepared, s, m, big).accessible;
        if (big_ok && !small_ok) {
          if (oracle::classify(prepared, s.position, s.normal, m, small) == oracle::Verdict::Blocked) ++violations;
          else ++tangent_violations;
        }
      }
  }
  CHECK(violations == 0);
  MESSAGE("tangent-only inversions: " << tangent_violations);
}

TEST_CASE("argmax direction is invariant under rescaling") {
  const LevelSet flat = scenes::flat_top();
  const SurfaceSample s{Vec3::Zero(), Vec3(1, 0, 2).normalized(), 0};
  const DirectionSet dirs = hemisphere_directions();
  const FilterField f = filter_3axis(flat, std::vector<SurfaceSample>{s}, dirs, kSmallTool);
  REQUIRE(f.best_direction[0]);
  for (double scale : {0.1, 3.0, 17.0}) {
    std::size_t best = 0;
    double best_value = -1.0;
    for (std::size_t i = 0; i < dirs.size(); ++i) {
      if (!milling_test(prepare_for_milling(flat, kSmallTool), s, dirs[i], kSmallTool).accessible) continue;
      const double v = scale * std::abs(dirs[i].dot(s.normal));
      if (v > best_value) {
        best_value = v;
        best = i;
      }
    }
    CHECK((dirs[best] - *f.best_direction[0]).norm() < 1e-12);
  }
}

TEST_CASE("filter modes and collar smoothing") {
  CHECK(parse_milling_mode("heat") == MillingMode::HeatSearch);
  CHECK(to_string(parse_milling_mode("3axis")) == "3axis");
  CHECK_THROWS_AS(parse_milling_mode("7axis"), std::invalid_argument);

  const LevelSet part = prepare_for_milling(scenes::blind_hole(2.0), ToolModel{3.0, 10.0, 6.0});
  const auto all = sample_boundary(part);
  std::vector<SurfaceSample> samples;
  for (std::size_t i = 0; i < all.size(); i += 5) samples.push_back(all[i]);
  const ToolModel tool{3.0, 10.0, 6.0};
  const DirectionSet down({Vec3(0, 0, -1)});

  const FilterField off = compute_filter(MillingMode::Off, part, samples, tool, nullptr, nullptr);
  for (double e : off.eta) CHECK(e == 1.0);

  const FilterField plain = compute_filter(MillingMode::ThreeAxis, part, samples, tool, &down, nullptr);
  MillingOptions smooth;
  smooth.smooth_collar = true;
  const FilterField collared = compute_filter(MillingMode::ThreeAxis, part, samples, tool, &down, nullptr, smooth);
  bool lowered = false;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(collared.eta[i] <= plain.eta[i] + 1e-15);
    if (plain.eta[i] == 0.0) CHECK(collared.eta[i] == 0.0);
    lowered = lowered || collared.eta[i] < plain.eta[i] - 1e-6;
  }
  CHECK(lowered);
  CHECK_THROWS_AS(compute_filter(MillingMode::ThreeAxis, part, samples, tool, nullptr, nullptr), std::invalid_argument);
}
