#include "millforge/milling.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <thread>
#include <unordered_map>

namespace millforge {

void ToolModel::validate() const {
  if (!(bit_radius > 0.0) || !(bit_radius <= head_radius))
    throw std::invalid_argument("tool requires 0 < bit radius <= head radius");
  if (!(bit_length > 0.0)) throw std::invalid_argument("tool bit length must be positive");
}

DirectionSet::DirectionSet(std::vector<Vec3> directions) : dirs_(std::move(directions)) {
  if (dirs_.empty()) throw std::invalid_argument("direction set is empty");
  for (const Vec3& m : dirs_)
    if (!m.allFinite() || std::abs(m.norm() - 1.0) > 1e-6)
      throw std::invalid_argument("milling directions must be unit vectors");
}

DirectionSet DirectionSet::normalized(std::vector<Vec3> directions) {
  for (Vec3& m : directions) {
    const double len = m.norm();
    if (!(len > 0.0) || !std::isfinite(len)) throw std::invalid_argument("zero or non-finite milling direction");
    m /= len;
  }
  return DirectionSet(std::move(directions));
}

DirectionSet DirectionSet::axes() {
  return DirectionSet({Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 1, 0), Vec3(0, -1, 0), Vec3(0, 0, 1),
                       Vec3(0, 0, -1)});
}

double FilterField::fraction_zero() const {
  if (eta.empty()) return 0.0;
  const auto zeros = std::count(eta.begin(), eta.end(), 0.0);
  return static_cast<double>(zeros) / static_cast<double>(eta.size());
}

MillingMode parse_milling_mode(const std::string& name) {
  if (name == "off" || name == "none") return MillingMode::Off;
  if (name == "3axis" || name == "three-axis") return MillingMode::ThreeAxis;
  if (name == "hemisphere") return MillingMode::Hemisphere;
  if (name == "normal" || name == "normal-search") return MillingMode::NormalSearch;
  if (name == "heat" || name == "heat-search") return MillingMode::HeatSearch;
  throw std::invalid_argument("unknown milling mode '" + name + "'");
}

std::string to_string(MillingMode mode) {
  switch (mode) {
    case MillingMode::Off: return "off";
    case MillingMode::ThreeAxis: return "3axis";
    case MillingMode::Hemisphere: return "hemisphere";
    case MillingMode::NormalSearch: return "normal";
    case MillingMode::HeatSearch: return "heat";
  }
  return "off";
}

namespace {

// Cells of padding needed below and above the part on each axis so that a
// head sphere centered outside the grid cannot reach material.
std::array<std::array<int, 2>, 3> missing_padding(const LevelSet& omega, const ToolModel& tool) {
  const GridSpec& g = omega.grid();
  Index3 lo{g.dims[0], g.dims[1], g.dims[2]}, hi{-1, -1, -1};
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        if (omega.at(i, j, k) >= 0.0) continue;
        const Index3 c{i, j, k};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], c[a]);
          hi[a] = std::max(hi[a], c[a]);
        }
      }
  std::array<std::array<int, 2>, 3> pad{};
  if (hi[0] < 0) return pad;
  // The part may extend up to one cell past its last inside node.
  const int need = static_cast<int>(std::ceil(tool.head_radius / g.h)) + 2;
  for (int a = 0; a < 3; ++a) {
    pad[a][0] = std::max(0, need - lo[a]);
    pad[a][1] = std::max(0, need - (g.dims[a] - 1 - hi[a]));
  }
  return pad;
}

bool band_covers_head(const LevelSet& omega, const ToolModel& tool) {
  return omega.band_width() >= tool.head_radius + omega.spacing();
}

bool ready_for_tool(const LevelSet& omega, const ToolModel& tool) {
  if (!band_covers_head(omega, tool)) return false;
  for (const auto& p : missing_padding(omega, tool))
    if (p[0] > 0 || p[1] > 0) return false;
  return true;
}

// Views omega through a copy with a wide enough band, made only when needed.
class Prepared {
public:
  Prepared(const LevelSet& omega, const ToolModel& tool) {
    tool.validate();
    if (ready_for_tool(omega, tool)) {
      ptr_ = &omega;
    } else {
      copy_ = prepare_for_milling(omega, tool);
      ptr_ = &copy_;
    }
  }
  const LevelSet& get() const { return *ptr_; }

private:
  LevelSet copy_;
  const LevelSet* ptr_ = nullptr;
};

Vec3 contact_center(const SurfaceSample& s, const ToolModel& tool) {
  return s.position + tool.bit_radius * s.normal;
}

}  // namespace

MillTestResult milling_test(const LevelSet& omega, const Vec3& n, const Vec3& p, const Vec3& m,
                            const ToolModel& tool, const MillingOptions& options) {
  if (!band_covers_head(omega, tool))
    throw std::invalid_argument("level set band does not reach the head radius; call prepare_for_milling");
  MillTestResult result;
  if (n.dot(m) >= 0.0) return result;
  const double slack = options.contact_slack * omega.spacing();
  const Vec3 retract = -m;

  if (auto hit = raycast(omega, p, retract, tool.bit_radius - slack, tool.bit_length)) {
    result.hit = *hit;
    return result;
  }
  const Vec3 head_start = p + (tool.bit_length + tool.head_radius) * retract;
  if (auto hit = raycast(omega, head_start, retract, tool.head_radius - slack)) {
    result.hit = *hit;
    return result;
  }
  result.accessible = true;
  result.eta_candidate = std::min(1.0, -m.dot(n));
  return result;
}

MillTestResult milling_test(const LevelSet& omega, const SurfaceSample& sample, const Vec3& m,
                            const ToolModel& tool, const MillingOptions& options) {
  return milling_test(omega, sample.normal, contact_center(sample, tool), m, tool, options);
}

LevelSet prepare_for_milling(const LevelSet& omega, const ToolModel& tool) {
  const double needed = tool.head_radius + 2.0 * omega.spacing();
  const auto pad = missing_padding(omega, tool);
  const GridSpec& g = omega.grid();
  const Index3 shift{pad[0][0], pad[1][0], pad[2][0]};
  const Index3 dims{g.dims[0] + pad[0][0] + pad[0][1], g.dims[1] + pad[1][0] + pad[1][1],
                    g.dims[2] + pad[2][0] + pad[2][1]};
  const bool grow = dims != g.dims;
  const double band = std::max(omega.band_width(), needed);
  if (!grow && band == omega.band_width()) return omega;

  LevelSet out = omega;
  if (grow) {
    const GridSpec big(g.origin - g.h * Vec3(shift[0], shift[1], shift[2]), g.h, dims);
    out = LevelSet(big, band);
    for (double& v : out.values()) v = band;
    for (int k = 0; k < g.dims[2]; ++k)
      for (int j = 0; j < g.dims[1]; ++j)
        for (int i = 0; i < g.dims[0]; ++i)
          out[big.index(i + shift[0], j + shift[1], k + shift[2])] = omega.at(i, j, k);
  }
  out.set_band_width(band);
  redistance_in_place(out);
  return out;
}

namespace {

// Calls fn(s) for every sample index, split into contiguous chunks.
template <class Fn>
void for_each_sample(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(1, threads), std::max<std::size_t>(1, n / 16));
  if (workers <= 1) {
    for (std::size_t s = 0; s < n; ++s) fn(s);
    return;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t s = w * chunk; s < std::min(n, (w + 1) * chunk); ++s) fn(s);
    });
}

}  // namespace

FilterField filter_3axis(const LevelSet& omega, std::span<const SurfaceSample> samples,
                         const DirectionSet& directions, const ToolModel& tool,
                         const MillingOptions& options) {
  const Prepared prepared(omega, tool);
  const LevelSet& ls = prepared.get();
  FilterField field;
  field.eta.assign(samples.size(), 0.0);
  field.best_direction.assign(samples.size(), std::nullopt);
  field.iterations.assign(samples.size(), 0);
  for_each_sample(samples.size(), options.threads, [&](std::size_t s) {
    for (const Vec3& m : directions.directions()) {
      ++field.iterations[s];
      const auto r = milling_test(ls, samples[s], m, tool, options);
      if (r.accessible && r.eta_candidate > field.eta[s]) {
        field.eta[s] = r.eta_candidate;
        field.best_direction[s] = m;
      }
    }
  });
  return field;
}

DirectionSet hemisphere_directions() {
  std::vector<Vec3> dirs;
  // Face centers, then edge midpoints, then corners of the unit cube around the origin.
  for (int nonzero = 1; nonzero <= 3; ++nonzero)
    for (int z = -1; z <= 1; ++z)
      for (int y = -1; y <= 1; ++y)
        for (int x = -1; x <= 1; ++x)
          if (std::abs(x) + std::abs(y) + std::abs(z) == nonzero) dirs.push_back(Vec3(x, y, z).normalized());
  return DirectionSet(std::move(dirs));
}

FilterField filter_5axis_hemisphere(const LevelSet& omega, std::span<const SurfaceSample> samples,
                                    const ToolModel& tool, const MillingOptions& options) {
  return filter_3axis(omega, samples, hemisphere_directions(), tool, options);
}

namespace {

SearchOutcome run_normal_search(const LevelSet& ls, const SurfaceSample& sample, const ToolModel& tool,
                                const MillingOptions& options) {
  SearchOutcome out;
  const double h = ls.spacing();
  const Vec3 p = contact_center(sample, tool);
  Vec3 m = -sample.normal;
  const int max_walk = std::max(1, static_cast<int>(std::ceil(ls.band_width() / h)));
  for (int iter = 1; iter <= options.max_iters; ++iter) {
    out.iterations = iter;
    out.candidates.push_back(m);
    const auto r = milling_test(ls, sample.normal, p, m, tool, options);
    if (r.accessible) {
      out.accessible = true;
      out.eta = r.eta_candidate;
      out.direction = m;
      return out;
    }
    if (!r.hit) break;
    // Climb the distance field from the obstruction to its medial axis or band edge.
    Vec3 y = *r.hit;
    double f = ls.interpolate(y);
    for (int step = 0; step < max_walk; ++step) {
      const Vec3 g = ls.gradient(y);
      const double gn = g.norm();
      if (gn < 1e-12) break;
      const Vec3 next = y + h * g / gn;
      const double fn = ls.interpolate(next);
      if (fn <= f) break;
      y = next;
      if (std::abs(fn - f) < 1e-3 * h) break;
      f = fn;
    }
    const Vec3 aim = p - y;
    const double len = aim.norm();
    if (len < 1e-9 * h) break;
    m = aim / len;
  }
  return out;
}

SearchOutcome run_heat_search(const LevelSet& ls, const SurfaceSample& sample, const ToolModel& tool,
                              const TemperatureField& temperature, const MillingOptions& options) {
  SearchOutcome out;
  const double step = options.heat_step > 0.0 ? options.heat_step : ls.spacing();
  const Vec3 p = contact_center(sample, tool);
  Vec3 y = p;
  Vec3 m = -sample.normal;
  out.trajectory.push_back(y);
  for (int iter = 1; iter <= options.max_iters; ++iter) {
    out.iterations = iter;
    out.candidates.push_back(m);
    const auto r = milling_test(ls, sample.normal, p, m, tool, options);
    if (r.accessible) {
      out.accessible = true;
      out.eta = r.eta_candidate;
      out.direction = m;
      return out;
    }
    if (iter == options.max_iters || !temperature.in_domain(y)) break;
    const Vec3 g = grad_T(temperature, y);
    if (g.norm() < 1e-9) break;
    y += step * g.normalized();
    out.trajectory.push_back(y);
    if (!temperature.in_domain(y)) break;
    const Vec3 gy = grad_T(temperature, y);
    if (gy.norm() < 1e-9) break;
    m = -gy.normalized();
  }
  return out;
}

template <class Search>
FilterField run_searches(std::span<const SurfaceSample> samples, int threads, Search&& search) {
  FilterField field;
  field.eta.assign(samples.size(), 0.0);
  field.best_direction.assign(samples.size(), std::nullopt);
  field.iterations.assign(samples.size(), 0);
  for_each_sample(samples.size(), threads, [&](std::size_t s) {
    const SearchOutcome o = search(samples[s]);
    field.iterations[s] = o.iterations;
    if (o.accessible) {
      field.eta[s] = o.eta;
      field.best_direction[s] = o.direction;
    }
  });
  return field;
}

}  // namespace

SearchOutcome normal_search(const LevelSet& omega, const SurfaceSample& sample, const ToolModel& tool,
                            const MillingOptions& options) {
  const Prepared prepared(omega, tool);
  return run_normal_search(prepared.get(), sample, tool, options);
}

SearchOutcome heat_search(const LevelSet& omega, const SurfaceSample& sample, const ToolModel& tool,
                          const TemperatureField& temperature, const MillingOptions& options) {
  const Prepared prepared(omega, tool);
  return run_heat_search(prepared.get(), sample, tool, temperature, options);
}

FilterField filter_5axis_normal_search(const LevelSet& omega, std::span<const SurfaceSample> samples,
                                       const ToolModel& tool, const MillingOptions& options) {
  if (options.max_iters < 1) throw std::invalid_argument("max_iters must be at least 1");
  const Prepared prepared(omega, tool);
  return run_searches(samples, options.threads, [&](const SurfaceSample& s) {
    return run_normal_search(prepared.get(), s, tool, options);
  });
}

FilterField filter_5axis_heat_search(const LevelSet& omega, std::span<const SurfaceSample> samples,
                                     const ToolModel& tool, const TemperatureField& temperature,
                                     const MillingOptions& options) {
  if (options.max_iters < 1) throw std::invalid_argument("max_iters must be at least 1");
  if (!(temperature.grid == omega.grid())) throw std::invalid_argument("temperature grid does not match");
  const Prepared prepared(omega, tool);
  return run_searches(samples, options.threads, [&](const SurfaceSample& s) {
    return run_heat_search(prepared.get(), s, tool, temperature, options);
  });
}

TemperatureField milling_temperature(const LevelSet& omega, const ToolModel& tool,
                                     const TemperatureField* warm_start) {
  tool.validate();
  LevelSet base = omega;
  if (base.band_width() <= tool.bit_radius + omega.spacing()) {
    base.set_band_width(tool.bit_radius + 2.0 * omega.spacing());
    redistance_in_place(base);
  }
  return solve_heat(offset(base, tool.bit_radius), {}, warm_start);
}

void smooth_collar(std::span<const SurfaceSample> samples, FilterField& field, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("collar radius must be positive");
  const double sigma2 = 0.25 * radius * radius;
  auto cell_of = [radius](const Vec3& x) {
    return std::array<long, 3>{static_cast<long>(std::floor(x.x() / radius)),
                               static_cast<long>(std::floor(x.y() / radius)),
                               static_cast<long>(std::floor(x.z() / radius))};
  };
  auto key = [](const std::array<long, 3>& c) {
    return (static_cast<std::uint64_t>(c[0] & 0x1fffff) << 42) |
           (static_cast<std::uint64_t>(c[1] & 0x1fffff) << 21) | static_cast<std::uint64_t>(c[2] & 0x1fffff);
  };
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < samples.size(); ++i) buckets[key(cell_of(samples[i].position))].push_back(i);

  const std::vector<double> original = field.eta;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (original[i] == 0.0) continue;
    const auto c = cell_of(samples[i].position);
    double wsum = 0.0, vsum = 0.0;
    for (long dz = -1; dz <= 1; ++dz)
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const auto it = buckets.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
          if (it == buckets.end()) continue;
          for (std::size_t j : it->second) {
            const double d2 = (samples[j].position - samples[i].position).squaredNorm();
            if (d2 > radius * radius) continue;
            const double w = std::exp(-d2 / (2.0 * sigma2));
            wsum += w;
            vsum += w * original[j];
          }
        }
    if (wsum > 0.0) field.eta[i] = std::min(original[i], vsum / wsum);
  }
}

FilterField compute_filter(MillingMode mode, const LevelSet& omega, std::span<const SurfaceSample> samples,
                           const ToolModel& tool, const DirectionSet* directions,
                           const TemperatureField* temperature, const MillingOptions& options) {
  FilterField field;
  switch (mode) {
    case MillingMode::Off:
      field.eta.assign(samples.size(), 1.0);
      field.best_direction.assign(samples.size(), std::nullopt);
      field.iterations.assign(samples.size(), 0);
      return field;
    case MillingMode::ThreeAxis:
      if (!directions) throw std::invalid_argument("3-axis milling needs a direction set");
      field = filter_3axis(omega, samples, *directions, tool, options);
      break;
    case MillingMode::Hemisphere:
      field = filter_5axis_hemisphere(omega, samples, tool, options);
      break;
    case MillingMode::NormalSearch:
      field = filter_5axis_normal_search(omega, samples, tool, options);
      break;
    case MillingMode::HeatSearch:
      if (temperature) {
        field = filter_5axis_heat_search(omega, samples, tool, *temperature, options);
      } else {
        const TemperatureField t = milling_temperature(omega, tool);
        field = filter_5axis_heat_search(omega, samples, tool, t, options);
      }
      break;
  }
  if (options.smooth_collar) {
    const double radius = options.collar_radius > 0.0 ? options.collar_radius : 2.0 * omega.spacing();
    smooth_collar(samples, field, radius);
  }
  return field;
}

}  // namespace millforge
