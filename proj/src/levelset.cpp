#include "millforge/levelset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <unordered_map>

namespace millforge {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_grid(const LevelSet& a, const LevelSet& b) {
  if (!(a.grid() == b.grid())) throw std::invalid_argument("level sets live on different grids");
}

// Buckets points into grid cells of size h for radius queries.
class PointBuckets {
public:
  PointBuckets(const GridSpec& grid, std::span<const Vec3> points) : grid_(grid) {
    dims_ = grid.dims;
    const std::size_t ncells = grid.node_count();
    start_.assign(ncells + 1, 0);
    keys_.resize(points.size());
    for (std::size_t p = 0; p < points.size(); ++p) {
      keys_[p] = key(points[p]);
      ++start_[keys_[p] + 1];
    }
    for (std::size_t c = 0; c < ncells; ++c) start_[c + 1] += start_[c];
    items_.resize(points.size());
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t p = 0; p < points.size(); ++p) items_[fill[keys_[p]]++] = p;
  }

  Index3 bucket(const Vec3& x) const {
    const Vec3 u = grid_.to_index(x);
    Index3 b{};
    for (int a = 0; a < 3; ++a)
      b[a] = std::clamp(static_cast<int>(std::floor(u[a])), 0, dims_[a] - 1);
    return b;
  }

  // Visits every point in buckets within `ring` of the bucket holding x.
  template <typename Fn>
  void visit(const Vec3& x, int ring, Fn&& fn) const {
    const Index3 b = bucket(x);
    for (int k = std::max(0, b[2] - ring); k <= std::min(dims_[2] - 1, b[2] + ring); ++k)
      for (int j = std::max(0, b[1] - ring); j <= std::min(dims_[1] - 1, b[1] + ring); ++j)
        for (int i = std::max(0, b[0] - ring); i <= std::min(dims_[0] - 1, b[0] + ring); ++i) {
          const std::size_t c = grid_.index(i, j, k);
          for (std::size_t s = start_[c]; s < start_[c + 1]; ++s) fn(items_[s]);
        }
  }

  int max_ring() const { return std::max({dims_[0], dims_[1], dims_[2]}); }

private:
  std::size_t key(const Vec3& x) const {
    const Index3 b = bucket(x);
    return grid_.index(b[0], b[1], b[2]);
  }

  const GridSpec& grid_;
  Index3 dims_{};
  std::vector<std::size_t> start_, items_, keys_;
};

// Catmull-Rom tricubic value, used where the trilinear zero set is too crude.
double interpolate_cubic(const LevelSet& ls, const Vec3& x) {
  const GridSpec& g = ls.grid();
  Vec3 t;
  const Index3 c = g.locate(x, t);
  double w[3][4];
  for (int a = 0; a < 3; ++a) {
    const double u = t[a], u2 = u * u, u3 = u2 * u;
    w[a][0] = 0.5 * (-u3 + 2 * u2 - u);
    w[a][1] = 0.5 * (3 * u3 - 5 * u2 + 2);
    w[a][2] = 0.5 * (-3 * u3 + 4 * u2 + u);
    w[a][3] = 0.5 * (u3 - u2);
  }
  double sum = 0.0;
  for (int dk = 0; dk < 4; ++dk)
    for (int dj = 0; dj < 4; ++dj) {
      double row = 0.0;
      for (int di = 0; di < 4; ++di) row += w[0][di] * ls.at_clamped(c[0] + di - 1, c[1] + dj - 1, c[2] + dk - 1);
      sum += w[1][dj] * w[2][dk] * row;
    }
  return sum;
}

}  // namespace

// ---------------------------------------------------------------------------
// LevelSet

LevelSet::LevelSet(GridSpec grid, double band_width)
    : grid_(std::move(grid)), band_(band_width), phi_(grid_.node_count(), band_width) {
  grid_.validate();
  if (!(band_width > 0.0)) throw std::invalid_argument("band width must be positive");
}

LevelSet LevelSet::from_function(const GridSpec& grid, double band_width,
                                 const std::function<double(const Vec3&)>& f) {
  LevelSet ls(grid, band_width);
  const auto& d = grid.dims;
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        const double v = f(grid.position(i, j, k));
        ls.phi_[grid.index(i, j, k)] = std::clamp(v, -band_width, band_width);
      }
  return ls;
}

double LevelSet::at_clamped(int i, int j, int k) const {
  i = std::clamp(i, 0, grid_.dims[0] - 1);
  j = std::clamp(j, 0, grid_.dims[1] - 1);
  k = std::clamp(k, 0, grid_.dims[2] - 1);
  return phi_[grid_.index(i, j, k)];
}

double LevelSet::interpolate(const Vec3& x) const {
  Vec3 t;
  const Index3 c = grid_.locate(x, t);
  const std::size_t sx = 1, sy = grid_.dims[0], sz = sy * grid_.dims[1];
  const std::size_t b = grid_.index(c[0], c[1], c[2]);
  const double c00 = phi_[b] * (1 - t[0]) + phi_[b + sx] * t[0];
  const double c10 = phi_[b + sy] * (1 - t[0]) + phi_[b + sy + sx] * t[0];
  const double c01 = phi_[b + sz] * (1 - t[0]) + phi_[b + sz + sx] * t[0];
  const double c11 = phi_[b + sz + sy] * (1 - t[0]) + phi_[b + sz + sy + sx] * t[0];
  const double c0 = c00 * (1 - t[1]) + c10 * t[1];
  const double c1 = c01 * (1 - t[1]) + c11 * t[1];
  return c0 * (1 - t[2]) + c1 * t[2];
}

Vec3 LevelSet::node_gradient(int i, int j, int k) const {
  Vec3 g;
  const Index3 c{i, j, k};
  for (int a = 0; a < 3; ++a) {
    Index3 lo = c, hi = c;
    lo[a] = std::max(0, c[a] - 1);
    hi[a] = std::min(grid_.dims[a] - 1, c[a] + 1);
    const int span = hi[a] - lo[a];
    g[a] = span == 0 ? 0.0
                     : (at(hi[0], hi[1], hi[2]) - at(lo[0], lo[1], lo[2])) / (span * grid_.h);
  }
  return g;
}

Vec3 LevelSet::gradient(const Vec3& x) const {
  Vec3 t;
  const Index3 c = grid_.locate(x, t);
  Vec3 g = Vec3::Zero();
  for (int dk = 0; dk < 2; ++dk)
    for (int dj = 0; dj < 2; ++dj)
      for (int di = 0; di < 2; ++di) {
        const double w = (di ? t[0] : 1 - t[0]) * (dj ? t[1] : 1 - t[1]) * (dk ? t[2] : 1 - t[2]);
        if (w == 0.0) continue;
        g += w * node_gradient(c[0] + di, c[1] + dj, c[2] + dk);
      }
  return g;
}

void LevelSet::clamp_to_band() {
  for (double& v : phi_) v = std::clamp(v, -band_, band_);
}

bool LevelSet::empty() const {
  return std::none_of(phi_.begin(), phi_.end(), [](double v) { return v < 0.0; });
}

// ---------------------------------------------------------------------------
// Ray casting

std::optional<Vec3> raycast(const LevelSet& ls, const Vec3& start, const Vec3& dir, double iso,
                            double max_distance) {
  const GridSpec& g = ls.grid();
  const Vec3 lo = g.lower(), hi = g.upper();
  double t0 = 0.0, t1 = max_distance;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (start[a] < lo[a] || start[a] > hi[a]) return std::nullopt;
      continue;
    }
    double ta = (lo[a] - start[a]) / dir[a];
    double tb = (hi[a] - start[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t1 < t0) return std::nullopt;

  auto field = [&](double t) { return ls.interpolate(start + t * dir) - iso; };
  double t = t0;
  double f = field(t);
  if (f < 0.0) return Vec3(start + t * dir);

  const double min_step = 0.25 * g.h;
  while (t < t1) {
    const double tn = std::min(t + std::max(f, min_step), t1);
    const double fn = field(tn);
    if (fn < 0.0) {
      double a = t, b = tn;
      for (int it = 0; it < 30; ++it) {
        const double m = 0.5 * (a + b);
        if (field(m) < 0.0) b = m; else a = m;
      }
      return Vec3(start + b * dir);
    }
    t = tn;
    f = fn;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Redistancing: fast sweeping that propagates closest interface points

void redistance_in_place(LevelSet& ls) {
  const GridSpec& g = ls.grid();
  const auto& d = g.dims;
  const double h = g.h;
  const std::size_t n = g.node_count();
  std::vector<double> dist(n, kInf);
  std::vector<Vec3> closest(n);
  std::vector<std::uint8_t> fixed(n, 0);
  const auto phi = ls.values();
  bool any = false;

  // Nodes of cells whose corners change sign straddle the zero set.
  std::vector<std::uint8_t> straddle(n, 0);
  for (int k = 0; k + 1 < d[2]; ++k)
    for (int j = 0; j + 1 < d[1]; ++j)
      for (int i = 0; i + 1 < d[0]; ++i) {
        int neg = 0;
        for (int c = 0; c < 8; ++c) neg += phi[g.index(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2))] < 0.0;
        if (neg == 0 || neg == 8) continue;
        for (int c = 0; c < 8; ++c) straddle[g.index(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2))] = 1;
      }

  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        const std::size_t idx = g.index(i, j, k);
        const double p = phi[idx];
        const bool inside = p < 0.0;
        const Vec3 x = g.position(i, j, k);
        if (p == 0.0) {
          any = true;
          dist[idx] = 0.0;
          closest[idx] = x;
          fixed[idx] = 1;
          continue;
        }
        if (!straddle[idx]) continue;
        // Linear crossing along grid edges; infinite when only a diagonal neighbor differs.
        double est = kInf;
        Vec3 est_point = Vec3::Zero();
        const int nb[6][3] = {{i - 1, j, k}, {i + 1, j, k}, {i, j - 1, k},
                              {i, j + 1, k}, {i, j, k - 1}, {i, j, k + 1}};
        for (const auto& q : nb) {
          if (q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= d[0] || q[1] >= d[1] || q[2] >= d[2])
            continue;
          const double pn = phi[g.index(q[0], q[1], q[2])];
          if ((pn < 0.0) != inside) {
            const double denom = std::abs(p) + std::abs(pn);
            const double t = denom > 0.0 ? std::abs(p) / denom : 0.0;
            if (t * h < est) {
              est = t * h;
              est_point = x + t * (g.position(q[0], q[1], q[2]) - x);
            }
          }
        }
        any = true;
        const double reach = std::min(est, std::sqrt(3.0) * h);
        // Newton projection onto the zero set; kept only if it beats the edge crossing.
        Vec3 y = x;
        bool ok = true;
        for (int it = 0; it < 8 && ok; ++it) {
          const Vec3 grad = ls.gradient(y);
          const double g2 = grad.squaredNorm();
          const double f = interpolate_cubic(ls, y);
          if (g2 < 1e-12) ok = false;
          else if (std::abs(f) < 1e-4 * h) break;
          else y -= f * grad / g2;
        }
        const double dy = (y - x).norm();
        if (ok && dy <= reach + 1e-12 && std::abs(interpolate_cubic(ls, y)) < 1e-3 * h) {
          est = dy;
          est_point = y;
        }
        if (!std::isfinite(est)) continue;
        dist[idx] = est;
        closest[idx] = est_point;
      }
  if (!any) throw EmptyShapeError("level set has no zero crossing");

  const double limit = ls.band_width() + 2.0 * h;
  const std::ptrdiff_t sx = 1, sy = d[0], sz = sy * d[1];
  for (int round = 0; round < 8; ++round) {
    bool changed = false;
    for (int dir = 0; dir < 8; ++dir) {
      const int di = (dir & 1) ? -1 : 1, dj = (dir & 2) ? -1 : 1, dk = (dir & 4) ? -1 : 1;
      for (int kk = 0; kk < d[2]; ++kk) {
        const int k = dk > 0 ? kk : d[2] - 1 - kk;
        for (int jj = 0; jj < d[1]; ++jj) {
          const int j = dj > 0 ? jj : d[1] - 1 - jj;
          for (int ii = 0; ii < d[0]; ++ii) {
            const int i = di > 0 ? ii : d[0] - 1 - ii;
            const std::size_t idx = g.index(i, j, k);
            if (fixed[idx]) continue;
            const std::ptrdiff_t offs[6] = {i > 0 ? -sx : 0, i < d[0] - 1 ? sx : 0,
                                            j > 0 ? -sy : 0, j < d[1] - 1 ? sy : 0,
                                            k > 0 ? -sz : 0, k < d[2] - 1 ? sz : 0};
            const Vec3 x = g.position(i, j, k);
            for (std::ptrdiff_t o : offs) {
              if (o == 0) continue;
              const std::size_t q = idx + o;
              if (!(dist[q] < limit)) continue;
              const double cand = (x - closest[q]).norm();
              if (cand < dist[idx] - 1e-12 * h) {
                dist[idx] = cand;
                closest[idx] = closest[q];
                changed = true;
              }
            }
          }
        }
      }
    }
    if (!changed) break;
  }

  // Propagated points are only neighbors' closest points; slide each one
  // tangentially toward the true foot point and keep it when it is closer.
  auto project = [&](Vec3 y) -> std::optional<Vec3> {
    for (int it = 0; it < 6; ++it) {
      const Vec3 grad = ls.gradient(y);
      const double g2 = grad.squaredNorm();
      const double f = interpolate_cubic(ls, y);
      if (g2 < 1e-12) return std::nullopt;
      if (std::abs(f) < 1e-4 * h) break;
      y -= f * grad / g2;
    }
    if (std::abs(interpolate_cubic(ls, y)) > 1e-3 * h) return std::nullopt;
    return y;
  };
  for (std::size_t idx = 0; idx < n; ++idx) {
    if (fixed[idx] || !(dist[idx] < limit)) continue;
    const Vec3 x = g.position(idx);
    for (int it = 0; it < 4; ++it) {
      const Vec3 c = closest[idx];
      const Vec3 nrm = ls.gradient(c).normalized();
      const Vec3 t = x - c;
      const auto refined = project(c + t - t.dot(nrm) * nrm);
      if (!refined) break;
      const double dr = (x - *refined).norm();
      if (dr >= dist[idx]) break;
      dist[idx] = dr;
      closest[idx] = *refined;
    }
  }

  const double band = ls.band_width();
  auto out = ls.values();
  for (std::size_t idx = 0; idx < n; ++idx) {
    const double mag = std::min(dist[idx], band);
    out[idx] = phi[idx] < 0.0 ? -mag : mag;
  }
}

LevelSet redistance(const LevelSet& ls) {
  LevelSet out = ls;
  redistance_in_place(out);
  return out;
}

// ---------------------------------------------------------------------------
// Offset / advect / close

LevelSet offset(const LevelSet& ls, double o) {
  if (std::abs(o) >= ls.band_width())
    throw std::invalid_argument("offset magnitude must be smaller than the band width");
  LevelSet out = ls;
  if (o == 0.0) return out;
  for (double& v : out.values()) v -= o;
  redistance_in_place(out);
  return out;
}

LevelSet advect(const LevelSet& ls, std::span<const double> speed, double t) {
  const GridSpec& g = ls.grid();
  if (speed.size() != g.node_count()) throw std::invalid_argument("speed field size mismatch");
  if (!(t >= 0.0)) throw std::invalid_argument("advection time must be non-negative");
  double vmax = 0.0;
  for (double v : speed) {
    if (!std::isfinite(v)) throw std::invalid_argument("speed field contains non-finite values");
    vmax = std::max(vmax, std::abs(v));
  }
  LevelSet out = ls;
  if (vmax == 0.0 || t == 0.0) return out;

  const double h = g.h;
  const int steps = std::max(1, static_cast<int>(std::ceil(t / (0.5 * h / vmax) - 1e-12)));
  const double dt = t / steps;
  const auto& d = g.dims;
  const std::size_t sx = 1, sy = d[0], sz = sy * d[1];
  std::vector<double> next(g.node_count());
  for (int s = 0; s < steps; ++s) {
    const auto phi = out.values();
    for (int k = 0; k < d[2]; ++k)
      for (int j = 0; j < d[1]; ++j)
        for (int i = 0; i < d[0]; ++i) {
          const std::size_t idx = g.index(i, j, k);
          const double v = speed[idx];
          const double p = phi[idx];
          if (v == 0.0) {
            next[idx] = p;
            continue;
          }
          const double dxm = i > 0 ? (p - phi[idx - sx]) / h : 0.0;
          const double dxp = i < d[0] - 1 ? (phi[idx + sx] - p) / h : 0.0;
          const double dym = j > 0 ? (p - phi[idx - sy]) / h : 0.0;
          const double dyp = j < d[1] - 1 ? (phi[idx + sy] - p) / h : 0.0;
          const double dzm = k > 0 ? (p - phi[idx - sz]) / h : 0.0;
          const double dzp = k < d[2] - 1 ? (phi[idx + sz] - p) / h : 0.0;
          double grad2;
          if (v > 0.0) {
            grad2 = std::pow(std::max(dxm, 0.0), 2) + std::pow(std::min(dxp, 0.0), 2) +
                    std::pow(std::max(dym, 0.0), 2) + std::pow(std::min(dyp, 0.0), 2) +
                    std::pow(std::max(dzm, 0.0), 2) + std::pow(std::min(dzp, 0.0), 2);
          } else {
            grad2 = std::pow(std::min(dxm, 0.0), 2) + std::pow(std::max(dxp, 0.0), 2) +
                    std::pow(std::min(dym, 0.0), 2) + std::pow(std::max(dyp, 0.0), 2) +
                    std::pow(std::min(dzm, 0.0), 2) + std::pow(std::max(dzp, 0.0), 2);
          }
          next[idx] = p - dt * v * std::sqrt(grad2);
        }
    std::copy(next.begin(), next.end(), phi.begin());
  }
  redistance_in_place(out);
  return out;
}

LevelSet close(const LevelSet& ls, double o) {
  if (!(o > 0.0) || o >= ls.band_width())
    throw std::invalid_argument("closing radius must lie in (0, band width)");
  return offset(offset(ls, o), -o);
}

// ---------------------------------------------------------------------------
// Boundary samples and normal extension

std::vector<SurfaceSample> sample_boundary(const LevelSet& ls) {
  const GridSpec& g = ls.grid();
  const double h = g.h;
  std::vector<SurfaceSample> samples;
  const auto phi = ls.values();
  const double merge2 = 0.0625 * h * h;
  std::unordered_map<std::int64_t, std::vector<std::size_t>> buckets;
  const double q = 0.25 * h;
  auto bucket_key = [&](int a, int b, int c) {
    return (static_cast<std::int64_t>(a) * 73856093) ^ (static_cast<std::int64_t>(b) * 19349663) ^
           (static_cast<std::int64_t>(c) * 83492791);
  };

  for (std::size_t idx = 0; idx < phi.size(); ++idx) {
    if (std::abs(phi[idx]) > 0.5 * h) continue;
    Vec3 x = g.position(idx);
    bool ok = true;
    for (int it = 0; it < 2; ++it) {
      const Vec3 grad = ls.gradient(x);
      const double gn = grad.norm();
      if (gn < 1e-9) {
        ok = false;
        break;
      }
      x -= ls.interpolate(x) * grad / gn;
    }
    if (!ok) continue;
    const Vec3 grad = ls.gradient(x);
    if (grad.norm() < 1e-9) continue;

    const Vec3 u = (x - g.origin) / q;
    const int bx = static_cast<int>(std::floor(u[0]));
    const int by = static_cast<int>(std::floor(u[1]));
    const int bz = static_cast<int>(std::floor(u[2]));
    bool dup = false;
    for (int dz = -1; dz <= 1 && !dup; ++dz)
      for (int dy = -1; dy <= 1 && !dup; ++dy)
        for (int dx = -1; dx <= 1 && !dup; ++dx) {
          auto it = buckets.find(bucket_key(bx + dx, by + dy, bz + dz));
          if (it == buckets.end()) continue;
          for (std::size_t s : it->second)
            if ((samples[s].position - x).squaredNorm() < merge2) {
              dup = true;
              break;
            }
        }
    if (dup) continue;
    buckets[bucket_key(bx, by, bz)].push_back(samples.size());
    samples.push_back({x, grad.normalized(), idx});
  }
  return samples;
}

std::vector<double> extend_normal(const LevelSet& ls, std::span<const SurfaceSample> samples,
                                  std::span<const double> boundary_values) {
  if (samples.size() != boundary_values.size())
    throw std::invalid_argument("one boundary value per sample required");
  for (double v : boundary_values)
    if (!std::isfinite(v)) throw std::invalid_argument("boundary values must be finite");
  const GridSpec& g = ls.grid();
  std::vector<double> out(g.node_count(), 0.0);
  if (samples.empty()) return out;

  std::vector<Vec3> pts;
  pts.reserve(samples.size());
  for (const auto& s : samples) pts.push_back(s.position);
  PointBuckets buckets(g, pts);

  const double h = g.h;
  const double sigma2 = 0.25 * h * h;
  const auto phi = ls.values();
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const std::size_t idx = g.index(i, j, k);
        if (!ls.in_band(idx)) continue;
        Vec3 cp = g.position(i, j, k);
        const Vec3 grad = ls.node_gradient(i, j, k);
        const double gn = grad.norm();
        if (gn > 1e-9) cp -= phi[idx] * grad / gn;

        double wsum = 0.0, vsum = 0.0;
        std::size_t nearest = samples.size();
        double best = kInf;
        buckets.visit(cp, 1, [&](std::size_t s) {
          const double d2 = (pts[s] - cp).squaredNorm();
          if (d2 < best) {
            best = d2;
            nearest = s;
          }
          if (d2 <= h * h) {
            const double w = std::exp(-d2 / sigma2);
            wsum += w;
            vsum += w * boundary_values[s];
          }
        });
        if (wsum > 0.0) {
          out[idx] = vsum / wsum;
          continue;
        }
        for (int ring = 2; nearest == samples.size() && ring <= buckets.max_ring(); ring *= 2)
          buckets.visit(cp, ring, [&](std::size_t s) {
            const double d2 = (pts[s] - cp).squaredNorm();
            if (d2 < best) {
              best = d2;
              nearest = s;
            }
          });
        out[idx] = nearest < samples.size() ? boundary_values[nearest] : 0.0;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Booleans and symmetry

namespace {
template <typename Op>
LevelSet combine(const LevelSet& a, const LevelSet& b, Op op) {
  require_same_grid(a, b);
  LevelSet out(a.grid(), std::max(a.band_width(), b.band_width()));
  auto o = out.values();
  const auto va = a.values(), vb = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = op(va[i], vb[i]);
  redistance_in_place(out);
  return out;
}
}  // namespace

LevelSet unite(const LevelSet& a, const LevelSet& b) {
  return combine(a, b, [](double x, double y) { return std::min(x, y); });
}
LevelSet intersect(const LevelSet& a, const LevelSet& b) {
  return combine(a, b, [](double x, double y) { return std::max(x, y); });
}
LevelSet subtract(const LevelSet& a, const LevelSet& b) {
  return combine(a, b, [](double x, double y) { return std::max(x, -y); });
}

LevelSet mirror(const LevelSet& ls, const MirrorPlane& plane) {
  if (plane.axis < 0 || plane.axis > 2) throw std::invalid_argument("mirror axis must be 0, 1 or 2");
  const GridSpec& g = ls.grid();
  const double c2 = 2.0 * (plane.offset - g.origin[plane.axis]) / g.h;
  const double r = std::round(c2);
  if (std::abs(c2 - r) > 1e-6)
    throw std::invalid_argument("mirror plane must pass through a grid plane or midway between two");
  const int twice = static_cast<int>(r);
  LevelSet out = ls;
  auto o = out.values();
  const auto src = ls.values();
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        Index3 q{i, j, k};
        q[plane.axis] = twice - q[plane.axis];
        if (q[plane.axis] < 0 || q[plane.axis] >= g.dims[plane.axis]) continue;
        const std::size_t idx = g.index(i, j, k);
        o[idx] = std::min(src[idx], src[g.index(q[0], q[1], q[2])]);
      }
  return out;
}

// ---------------------------------------------------------------------------
// Volume and surface measures

std::vector<double> cell_occupancy(const LevelSet& ls) {
  const GridSpec& g = ls.grid();
  constexpr int kSub = 4;
  const double s = g.h / kSub;
  std::vector<double> frac(g.cell_count(), 0.0);
  const auto phi = ls.values();
  for (int k = 0; k < g.dims[2] - 1; ++k)
    for (int j = 0; j < g.dims[1] - 1; ++j)
      for (int i = 0; i < g.dims[0] - 1; ++i) {
        double c[8];
        double lo = kInf, hi = -kInf;
        for (int n = 0; n < 8; ++n) {
          c[n] = phi[g.index(i + (n & 1), j + ((n >> 1) & 1), k + ((n >> 2) & 1))];
          lo = std::min(lo, c[n]);
          hi = std::max(hi, c[n]);
        }
        const std::size_t cell = g.cell_index(i, j, k);
        if (hi <= -0.5 * s) {
          frac[cell] = 1.0;
          continue;
        }
        if (lo >= 0.5 * s) continue;
        double sum = 0.0;
        for (int c3 = 0; c3 < kSub; ++c3)
          for (int c2 = 0; c2 < kSub; ++c2)
            for (int c1 = 0; c1 < kSub; ++c1) {
              const double tx = (c1 + 0.5) / kSub, ty = (c2 + 0.5) / kSub, tz = (c3 + 0.5) / kSub;
              const double x00 = c[0] * (1 - tx) + c[1] * tx;
              const double x10 = c[2] * (1 - tx) + c[3] * tx;
              const double x01 = c[4] * (1 - tx) + c[5] * tx;
              const double x11 = c[6] * (1 - tx) + c[7] * tx;
              const double v = (x00 * (1 - ty) + x10 * ty) * (1 - tz) + (x01 * (1 - ty) + x11 * ty) * tz;
              sum += std::clamp(0.5 - v / s, 0.0, 1.0);
            }
        frac[cell] = sum / (kSub * kSub * kSub);
      }
  return frac;
}

double volume(const LevelSet& ls) {
  const auto frac = cell_occupancy(ls);
  double sum = 0.0;
  for (double f : frac) sum += f;
  const double h = ls.spacing();
  return sum * h * h * h;
}

double surface_integral(const LevelSet& ls, std::span<const double> node_values) {
  const GridSpec& g = ls.grid();
  if (node_values.size() != g.node_count()) throw std::invalid_argument("node field size mismatch");
  const double h = g.h;
  const double w = 1.5 * h;
  const auto phi = ls.values();
  double sum = 0.0;
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const std::size_t idx = g.index(i, j, k);
        const double p = phi[idx];
        if (std::abs(p) >= w) continue;
        const double delta = (1.0 + std::cos(std::numbers::pi * p / w)) / (2.0 * w);
        sum += node_values[idx] * delta * ls.node_gradient(i, j, k).norm();
      }
  return sum * h * h * h;
}

double surface_area(const LevelSet& ls) {
  std::vector<double> ones(ls.grid().node_count(), 1.0);
  return surface_integral(ls, ones);
}

double upwind_gradient_norm(const LevelSet& ls, int i, int j, int k) {
  const GridSpec& g = ls.grid();
  const double p = std::abs(ls.at(i, j, k));
  double sum = 0.0;
  const Index3 c{i, j, k};
  for (int a = 0; a < 3; ++a) {
    double m = kInf;
    for (int s : {-1, 1}) {
      Index3 q = c;
      q[a] += s;
      if (q[a] < 0 || q[a] >= g.dims[a]) continue;
      m = std::min(m, std::abs(ls.at(q[0], q[1], q[2])));
    }
    if (std::isfinite(m)) sum += std::pow(std::max(p - m, 0.0) / g.h, 2);
  }
  return std::sqrt(sum);
}

double restore_volume(LevelSet& ls, double target, double tolerance) {
  const double half = 0.5 * ls.spacing();
  const std::vector<double> base(ls.values().begin(), ls.values().end());
  const auto shifted_volume = [&](double c) {
    auto phi = ls.values();
    for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = base[i] + c;
    return volume(ls);
  };
  // Volume decreases as the shift grows.
  double lo = -half, hi = half;
  double c = 0.0;
  const double scale = std::max(1.0, std::abs(target));
  if (shifted_volume(lo) <= target) {
    c = lo;
  } else if (shifted_volume(hi) >= target) {
    c = hi;
  } else {
    for (int it = 0; it < 60; ++it) {
      c = 0.5 * (lo + hi);
      const double v = shifted_volume(c);
      if (std::abs(v - target) <= tolerance * scale) break;
      (v > target ? lo : hi) = c;
    }
  }
  shifted_volume(c);
  ls.clamp_to_band();
  return c;
}

}  // namespace millforge
