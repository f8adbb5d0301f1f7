#include "millforge/fem.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

namespace millforge {

using ElementMatrix = Eigen::Matrix<double, 24, 24>;
using ElementVector = Eigen::Matrix<double, 24, 1>;

void Material::validate() const {
  if (!(youngs_modulus > 0.0) || !std::isfinite(youngs_modulus))
    throw std::invalid_argument("Young's modulus must be positive");
  if (!(poisson_ratio > -1.0 && poisson_ratio < 0.5))
    throw std::invalid_argument("Poisson ratio must lie in (-1, 0.5)");
}

PatchRegion PatchRegion::box(const Vec3& lo, const Vec3& hi) {
  PatchRegion r;
  r.kind = Kind::Box;
  r.lo = lo.cwiseMin(hi);
  r.hi = lo.cwiseMax(hi);
  return r;
}

PatchRegion PatchRegion::disk(int axis, const Vec3& center, double radius) {
  if (axis < 0 || axis > 2) throw std::invalid_argument("disk axis must be 0, 1 or 2");
  PatchRegion r;
  r.kind = Kind::Disk;
  r.axis = axis;
  r.center = center;
  r.radius = radius;
  return r;
}

bool PatchRegion::contains(const Vec3& x, double tol) const {
  if (kind == Kind::Box)
    return (x.array() >= lo.array() - tol).all() && (x.array() <= hi.array() + tol).all();
  if (std::abs(x[axis] - center[axis]) > tol) return false;
  Vec3 d = x - center;
  d[axis] = 0.0;
  return d.norm() <= radius + tol;
}

std::size_t Discretization::active_count() const {
  return static_cast<std::size_t>(std::count_if(rho.begin(), rho.end(), [](double r) { return r > 0.0; }));
}

bool Discretization::node_active(int i, int j, int k) const {
  const auto& d = grid.dims;
  for (int dz = -1; dz <= 0; ++dz)
    for (int dy = -1; dy <= 0; ++dy)
      for (int dx = -1; dx <= 0; ++dx) {
        const int ci = i + dx, cj = j + dy, ck = k + dz;
        if (ci < 0 || cj < 0 || ck < 0 || ci >= d[0] - 1 || cj >= d[1] - 1 || ck >= d[2] - 1) continue;
        if (rho[grid.cell_index(ci, cj, ck)] > 0.0) return true;
      }
  return false;
}

Discretization discretize(const LevelSet& ls, double rho_min) {
  Discretization disc;
  disc.grid = ls.grid();
  disc.rho = cell_occupancy(ls);
  bool any = false;
  for (double& r : disc.rho) {
    if (r <= 0.0) {
      r = 0.0;
      continue;
    }
    r = std::max(r, rho_min);
    any = true;
  }
  if (!any) throw EmptyShapeError("no occupied cells to discretize");
  return disc;
}

ElementMatrix hex_stiffness(const Material& material, double h) {
  const double E = material.modulus_mpa(), nu = material.poisson_ratio;
  Eigen::Matrix<double, 6, 6> D = Eigen::Matrix<double, 6, 6>::Zero();
  const double c = E / ((1.0 + nu) * (1.0 - 2.0 * nu));
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) D(a, b) = c * (a == b ? 1.0 - nu : nu);
  for (int a = 3; a < 6; ++a) D(a, a) = c * (1.0 - 2.0 * nu) / 2.0;

  ElementMatrix K = ElementMatrix::Zero();
  const double gp[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
  for (int g = 0; g < 8; ++g) {
    const double q[3] = {gp[g & 1], gp[(g >> 1) & 1], gp[g >> 2]};
    Eigen::Matrix<double, 6, 24> B = Eigen::Matrix<double, 6, 24>::Zero();
    for (int n = 0; n < 8; ++n) {
      const int bit[3] = {n & 1, (n >> 1) & 1, n >> 2};
      double N1[3], dN[3];
      for (int a = 0; a < 3; ++a) {
        N1[a] = bit[a] ? q[a] : 1.0 - q[a];
        dN[a] = (bit[a] ? 1.0 : -1.0) / h;
      }
      const double gx = dN[0] * N1[1] * N1[2], gy = N1[0] * dN[1] * N1[2], gz = N1[0] * N1[1] * dN[2];
      B(0, 3 * n) = gx;
      B(1, 3 * n + 1) = gy;
      B(2, 3 * n + 2) = gz;
      B(3, 3 * n + 1) = gz;
      B(3, 3 * n + 2) = gy;
      B(4, 3 * n) = gz;
      B(4, 3 * n + 2) = gx;
      B(5, 3 * n) = gy;
      B(5, 3 * n + 1) = gx;
    }
    K += (h * h * h / 8.0) * B.transpose() * D * B;
  }
  return K;
}

namespace {

// One grid of the multigrid hierarchy. Node and cell indices are x-fastest.
struct Level {
  Index3 cells{0, 0, 0};
  Index3 nodes{0, 0, 0};
  std::vector<double> rho;
  std::vector<std::size_t> active_cells;
  std::vector<std::uint8_t> fixed;        // per node, from the load case
  std::vector<std::uint8_t> constrained;  // fixed or touching no active cell
  std::vector<double> inv_diag;           // per dof
  ElementMatrix K;                        // full-material element stiffness
  std::array<std::size_t, 8> corner{};

  std::size_t node_count() const { return static_cast<std::size_t>(nodes[0]) * nodes[1] * nodes[2]; }
  std::size_t node(int i, int j, int k) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(nodes[0]) * (j + static_cast<std::size_t>(nodes[1]) * k);
  }
  std::size_t cell_base(std::size_t c) const {
    const int i = static_cast<int>(c % cells[0]);
    const std::size_t rest = c / cells[0];
    return node(i, static_cast<int>(rest % cells[1]), static_cast<int>(rest / cells[1]));
  }

  void finish(const ElementMatrix& element) {
    K = element;
    for (int n = 0; n < 8; ++n) corner[n] = node(n & 1, (n >> 1) & 1, n >> 2);
    active_cells.clear();
    std::vector<std::uint8_t> touched(node_count(), 0);
    for (std::size_t c = 0; c < rho.size(); ++c) {
      if (rho[c] <= 0.0) continue;
      active_cells.push_back(c);
      const std::size_t base = cell_base(c);
      for (int n = 0; n < 8; ++n) touched[base + corner[n]] = 1;
    }
    constrained.assign(node_count(), 0);
    for (std::size_t n = 0; n < node_count(); ++n) constrained[n] = fixed[n] || !touched[n];
    std::vector<double> diag(3 * node_count(), 0.0);
    for (std::size_t c : active_cells) {
      const std::size_t base = cell_base(c);
      for (int n = 0; n < 8; ++n)
        for (int a = 0; a < 3; ++a) diag[3 * (base + corner[n]) + a] += rho[c] * K(3 * n + a, 3 * n + a);
    }
    inv_diag.resize(diag.size());
    for (std::size_t n = 0; n < node_count(); ++n)
      for (int a = 0; a < 3; ++a) {
        const std::size_t d = 3 * n + a;
        inv_diag[d] = constrained[n] ? 1.0 : 1.0 / diag[d];
      }
  }

  // y = K x on free dofs, identity on constrained dofs.
  void apply(const std::vector<double>& x, std::vector<double>& y) const {
    y.assign(x.size(), 0.0);
    ElementVector xe, ye;
    for (std::size_t c : active_cells) {
      const std::size_t base = cell_base(c);
      for (int n = 0; n < 8; ++n) {
        const std::size_t v = base + corner[n];
        for (int a = 0; a < 3; ++a) xe[3 * n + a] = constrained[v] ? 0.0 : x[3 * v + a];
      }
      ye.noalias() = K * xe;
      const double r = rho[c];
      for (int n = 0; n < 8; ++n) {
        const std::size_t v = base + corner[n];
        for (int a = 0; a < 3; ++a) y[3 * v + a] += r * ye[3 * n + a];
      }
    }
    for (std::size_t v = 0; v < constrained.size(); ++v)
      if (constrained[v])
        for (int a = 0; a < 3; ++a) y[3 * v + a] = x[3 * v + a];
  }
};

// Linear interpolation stencil from a coarse axis to a fine axis node.
struct Stencil {
  int count;
  int idx[2];
  double w[2];
};

Stencil stencil(int fine) {
  if (fine % 2 == 0) return {1, {fine / 2, 0}, {1.0, 0.0}};
  return {2, {(fine - 1) / 2, (fine + 1) / 2}, {0.5, 0.5}};
}

Level coarsen(const Level& f, const ElementMatrix& element) {
  Level c;
  for (int a = 0; a < 3; ++a) {
    c.cells[a] = (f.cells[a] + 1) / 2;
    c.nodes[a] = c.cells[a] + 1;
  }
  c.rho.assign(static_cast<std::size_t>(c.cells[0]) * c.cells[1] * c.cells[2], 0.0);
  for (int k = 0; k < f.cells[2]; ++k)
    for (int j = 0; j < f.cells[1]; ++j)
      for (int i = 0; i < f.cells[0]; ++i) {
        const double r = f.rho[i + static_cast<std::size_t>(f.cells[0]) * (j + static_cast<std::size_t>(f.cells[1]) * k)];
        if (r <= 0.0) continue;
        c.rho[i / 2 + static_cast<std::size_t>(c.cells[0]) * (j / 2 + static_cast<std::size_t>(c.cells[1]) * (k / 2))] +=
            r / 8.0;
      }
  // A coarse node is held when any fine node it interpolates to is held.
  c.fixed.assign(c.node_count(), 0);
  for (int k = 0; k < f.nodes[2]; ++k)
    for (int j = 0; j < f.nodes[1]; ++j)
      for (int i = 0; i < f.nodes[0]; ++i) {
        if (!f.fixed[f.node(i, j, k)]) continue;
        const Stencil si = stencil(i), sj = stencil(j), sk = stencil(k);
        for (int a = 0; a < si.count; ++a)
          for (int b = 0; b < sj.count; ++b)
            for (int d = 0; d < sk.count; ++d) c.fixed[c.node(si.idx[a], sj.idx[b], sk.idx[d])] = 1;
      }
  c.finish(element);
  return c;
}

void prolongate_add(const Level& f, const Level& c, const std::vector<double>& xc, std::vector<double>& xf) {
  for (int k = 0; k < f.nodes[2]; ++k) {
    const Stencil sk = stencil(k);
    for (int j = 0; j < f.nodes[1]; ++j) {
      const Stencil sj = stencil(j);
      for (int i = 0; i < f.nodes[0]; ++i) {
        const std::size_t v = f.node(i, j, k);
        if (f.constrained[v]) continue;
        const Stencil si = stencil(i);
        for (int a = 0; a < si.count; ++a)
          for (int b = 0; b < sj.count; ++b)
            for (int d = 0; d < sk.count; ++d) {
              const double w = si.w[a] * sj.w[b] * sk.w[d];
              const std::size_t u = c.node(si.idx[a], sj.idx[b], sk.idx[d]);
              for (int e = 0; e < 3; ++e) xf[3 * v + e] += w * xc[3 * u + e];
            }
      }
    }
  }
}

void restrict_to(const Level& f, const Level& c, const std::vector<double>& rf, std::vector<double>& rc) {
  rc.assign(3 * c.node_count(), 0.0);
  for (int k = 0; k < f.nodes[2]; ++k) {
    const Stencil sk = stencil(k);
    for (int j = 0; j < f.nodes[1]; ++j) {
      const Stencil sj = stencil(j);
      for (int i = 0; i < f.nodes[0]; ++i) {
        const std::size_t v = f.node(i, j, k);
        if (f.constrained[v]) continue;
        const Stencil si = stencil(i);
        for (int a = 0; a < si.count; ++a)
          for (int b = 0; b < sj.count; ++b)
            for (int d = 0; d < sk.count; ++d) {
              const double w = si.w[a] * sj.w[b] * sk.w[d];
              const std::size_t u = c.node(si.idx[a], sj.idx[b], sk.idx[d]);
              for (int e = 0; e < 3; ++e) rc[3 * u + e] += w * rf[3 * v + e];
            }
      }
    }
  }
  for (std::size_t u = 0; u < c.node_count(); ++u)
    if (c.constrained[u])
      for (int e = 0; e < 3; ++e) rc[3 * u + e] = 0.0;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

class Hierarchy {
public:
  Hierarchy(Level fine, const Material& material, double h, bool multigrid) {
    levels_.push_back(std::move(fine));
    if (!multigrid) return;
    double hl = h;
    while (3 * levels_.back().node_count() > kCoarseDofs &&
           std::max({levels_.back().cells[0], levels_.back().cells[1], levels_.back().cells[2]}) > 1) {
      hl *= 2.0;
      levels_.push_back(coarsen(levels_.back(), hex_stiffness(material, hl)));
    }
    factor_coarsest();
  }

  const Level& fine() const { return levels_.front(); }

  void precondition(const std::vector<double>& r, std::vector<double>& z) const {
    if (levels_.size() == 1) {
      z.resize(r.size());
      for (std::size_t i = 0; i < r.size(); ++i) z[i] = levels_[0].inv_diag[i] * r[i];
      return;
    }
    vcycle(0, r, z);
  }

private:
  static constexpr std::size_t kCoarseDofs = 1000;
  static constexpr double kOmega = 0.6;
  static constexpr int kSmooth = 2;

  void smooth(const Level& L, const std::vector<double>& b, std::vector<double>& x) const {
    std::vector<double> Ax;
    for (int s = 0; s < kSmooth; ++s) {
      L.apply(x, Ax);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += kOmega * L.inv_diag[i] * (b[i] - Ax[i]);
    }
  }

  void vcycle(std::size_t l, const std::vector<double>& b, std::vector<double>& x) const {
    const Level& L = levels_[l];
    if (l + 1 == levels_.size()) {
      solve_coarsest(b, x);
      return;
    }
    x.assign(b.size(), 0.0);
    smooth(L, b, x);
    std::vector<double> Ax, rc, xc;
    L.apply(x, Ax);
    for (std::size_t i = 0; i < x.size(); ++i) Ax[i] = b[i] - Ax[i];
    restrict_to(L, levels_[l + 1], Ax, rc);
    vcycle(l + 1, rc, xc);
    prolongate_add(L, levels_[l + 1], xc, x);
    smooth(L, b, x);
  }

  void factor_coarsest() {
    const Level& L = levels_.back();
    const std::size_t n = 3 * L.node_count();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t c : L.active_cells) {
      const std::size_t base = L.cell_base(c);
      for (int p = 0; p < 8; ++p) {
        const std::size_t vp = base + L.corner[p];
        if (L.constrained[vp]) continue;
        for (int q = 0; q < 8; ++q) {
          const std::size_t vq = base + L.corner[q];
          if (L.constrained[vq]) continue;
          A.block<3, 3>(3 * vp, 3 * vq) += L.rho[c] * L.K.block<3, 3>(3 * p, 3 * q);
        }
      }
    }
    for (std::size_t v = 0; v < L.node_count(); ++v)
      if (L.constrained[v])
        for (int e = 0; e < 3; ++e) A(3 * v + e, 3 * v + e) = 1.0;
    coarse_.compute(A);
  }

  void solve_coarsest(const std::vector<double>& b, std::vector<double>& x) const {
    const Eigen::Map<const Eigen::VectorXd> bv(b.data(), static_cast<Eigen::Index>(b.size()));
    const Eigen::VectorXd xv = coarse_.solve(bv);
    x.assign(xv.data(), xv.data() + xv.size());
    const Level& L = levels_.back();
    for (std::size_t v = 0; v < L.node_count(); ++v)
      if (L.constrained[v] || !std::isfinite(x[3 * v]))
        for (int e = 0; e < 3; ++e) x[3 * v + e] = 0.0;
  }

  std::vector<Level> levels_;
  Eigen::LDLT<Eigen::MatrixXd> coarse_;
};

std::vector<std::uint8_t> patch_nodes(const Discretization& disc, const PatchRegion& region, const char* what) {
  const GridSpec& g = disc.grid;
  std::vector<std::uint8_t> mask(g.node_count(), 0);
  bool any = false;
  const double tol = 0.5 * g.h;
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        if (!region.contains(g.position(i, j, k), tol) || !disc.node_active(i, j, k)) continue;
        mask[g.index(i, j, k)] = 1;
        any = true;
      }
  if (!any) throw std::invalid_argument(std::string(what) + " patch selects no node of the discretized shape");
  return mask;
}

std::vector<std::uint8_t> fixed_nodes(const Discretization& disc, const LoadCase& lc) {
  std::vector<std::uint8_t> fixed(disc.grid.node_count(), 0);
  for (const PatchRegion& region : lc.fixed) {
    const auto m = patch_nodes(disc, region, "fixed");
    for (std::size_t i = 0; i < m.size(); ++i) fixed[i] |= m[i];
  }
  return fixed;
}

// Nodal weights proportional to tributary area: each grid face whose four
// nodes all lie on the patch contributes a quarter to every corner.
std::vector<double> patch_weights(const GridSpec& g, const std::vector<std::uint8_t>& mask) {
  std::vector<double> w(mask.size(), 0.0);
  bool any = false;
  for (int normal = 0; normal < 3; ++normal) {
    const int u = (normal + 1) % 3, v = (normal + 2) % 3;
    for (int k = 0; k < g.dims[2]; ++k)
      for (int j = 0; j < g.dims[1]; ++j)
        for (int i = 0; i < g.dims[0]; ++i) {
          Index3 c{i, j, k};
          if (c[u] + 1 >= g.dims[u] || c[v] + 1 >= g.dims[v]) continue;
          std::size_t corners[4];
          bool on = true;
          for (int q = 0; q < 4 && on; ++q) {
            Index3 n = c;
            n[u] += q & 1;
            n[v] += q >> 1;
            corners[q] = g.index(n[0], n[1], n[2]);
            on = mask[corners[q]] != 0;
          }
          if (!on) continue;
          any = true;
          for (std::size_t n : corners) w[n] += 0.25;
        }
  }
  if (!any)
    for (std::size_t n = 0; n < mask.size(); ++n) w[n] = mask[n] ? 1.0 : 0.0;
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= total;
  return w;
}

std::vector<double> load_vector(const Discretization& disc, const LoadCase& lc) {
  std::vector<double> f(3 * disc.grid.node_count(), 0.0);
  for (const Traction& t : lc.tractions) {
    const auto w = patch_weights(disc.grid, patch_nodes(disc, t.region, "traction"));
    for (std::size_t v = 0; v < w.size(); ++v)
      if (w[v] > 0.0)
        for (int a = 0; a < 3; ++a) f[3 * v + a] += t.force[a] * w[v];
  }
  return f;
}

Level fine_level(const Discretization& disc, std::vector<std::uint8_t> fixed, const Material& material) {
  Level L;
  for (int a = 0; a < 3; ++a) {
    L.nodes[a] = disc.grid.dims[a];
    L.cells[a] = disc.grid.dims[a] - 1;
  }
  L.rho = disc.rho;
  L.fixed = std::move(fixed);
  L.finish(hex_stiffness(material, disc.grid.h));
  return L;
}

// Face-connected groups of active cells.
std::vector<std::vector<std::size_t>> cell_components(const Discretization& disc) {
  const GridSpec& g = disc.grid;
  const Index3 cd{g.dims[0] - 1, g.dims[1] - 1, g.dims[2] - 1};
  std::vector<int> label(disc.rho.size(), -1);
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < disc.rho.size(); ++seed) {
    if (disc.rho[seed] <= 0.0 || label[seed] >= 0) continue;
    const int id = static_cast<int>(groups.size());
    groups.emplace_back();
    label[seed] = id;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t c = stack.back();
      stack.pop_back();
      groups.back().push_back(c);
      const Index3 ci = g.cell_unindex(c);
      for (int a = 0; a < 3; ++a)
        for (int s = -1; s <= 1; s += 2) {
          Index3 q = ci;
          q[a] += s;
          if (q[a] < 0 || q[a] >= cd[a]) continue;
          const std::size_t nc = g.cell_index(q[0], q[1], q[2]);
          if (disc.rho[nc] <= 0.0 || label[nc] >= 0) continue;
          label[nc] = id;
          stack.push_back(nc);
        }
    }
  }
  return groups;
}

void check_anchored(const Discretization& disc, const std::vector<LoadCase>& cases) {
  const auto floating = floating_components(disc, cases);
  if (floating.empty()) return;
  std::ostringstream msg;
  msg << floating.size() << " element group(s) not held by any fixed patch; first has "
      << floating.front().cells.size() << " cells in [" << floating.front().lo.transpose() << "] - ["
      << floating.front().hi.transpose() << "]";
  throw FloatingComponentError(msg.str());
}

}  // namespace

std::vector<Component> floating_components(const Discretization& disc, const std::vector<LoadCase>& cases) {
  const GridSpec& g = disc.grid;
  std::vector<std::vector<std::uint8_t>> fixed;
  for (const LoadCase& lc : cases) fixed.push_back(fixed_nodes(disc, lc));
  std::vector<Component> out;
  for (auto& cells : cell_components(disc)) {
    bool anchored_all = !cases.empty();
    for (const auto& mask : fixed) {
      bool anchored = false;
      for (std::size_t c : cells) {
        const Index3 ci = g.cell_unindex(c);
        for (int n = 0; n < 8 && !anchored; ++n)
          anchored = mask[g.index(ci[0] + (n & 1), ci[1] + ((n >> 1) & 1), ci[2] + (n >> 2))] != 0;
        if (anchored) break;
      }
      anchored_all = anchored_all && anchored;
    }
    if (anchored_all) continue;
    Component comp;
    comp.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    comp.hi = -comp.lo;
    for (std::size_t c : cells) {
      const Vec3 x = g.cell_center(c);
      comp.lo = comp.lo.cwiseMin(x - Vec3::Constant(0.5 * g.h));
      comp.hi = comp.hi.cwiseMax(x + Vec3::Constant(0.5 * g.h));
    }
    comp.cells = std::move(cells);
    out.push_back(std::move(comp));
  }
  return out;
}

std::size_t remove_floating(Discretization& disc, const std::vector<LoadCase>& cases) {
  std::size_t removed = 0;
  for (const Component& comp : floating_components(disc, cases))
    for (std::size_t c : comp.cells) {
      disc.rho[c] = 0.0;
      ++removed;
    }
  return removed;
}

double ElasticState::mean_compliance() const {
  if (cases.empty()) return 0.0;
  double sum = 0.0;
  for (const CaseSolution& c : cases) sum += c.compliance;
  return sum / static_cast<double>(cases.size());
}

ElasticState solve(const Discretization& disc, const Material& material, const std::vector<LoadCase>& cases,
                   const FemOptions& options, const ElasticState* warm_start) {
  material.validate();
  if (cases.empty()) throw std::invalid_argument("at least one load case is required");
  if (disc.rho.size() != disc.grid.cell_count()) throw std::invalid_argument("density field does not match grid");
  if (disc.active_count() == 0) throw EmptyShapeError("no active elements");
  check_anchored(disc, cases);

  const GridSpec& g = disc.grid;
  const std::size_t ndof = 3 * g.node_count();
  const ElementMatrix Ke = hex_stiffness(material, g.h);
  const bool warm = warm_start && warm_start->disc.grid == g && warm_start->cases.size() == cases.size();

  ElasticState state;
  state.disc = disc;
  state.material = material;
  state.energy_density.assign(disc.rho.size(), 0.0);

  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const Hierarchy mg(fine_level(disc, fixed_nodes(disc, cases[ci]), material), material, g.h, options.multigrid);
    const Level& L = mg.fine();
    std::vector<double> b = load_vector(disc, cases[ci]);
    for (std::size_t v = 0; v < L.node_count(); ++v)
      if (L.constrained[v])
        for (int a = 0; a < 3; ++a) b[3 * v + a] = 0.0;

    CaseSolution sol;
    std::vector<double>& x = sol.u;
    x.assign(ndof, 0.0);
    if (warm)
      for (std::size_t v = 0; v < L.node_count(); ++v)
        if (!L.constrained[v])
          for (int a = 0; a < 3; ++a) x[3 * v + a] = warm_start->cases[ci].u[3 * v + a];

    const double bnorm = std::sqrt(dot(b, b));
    if (bnorm > 0.0) {
      std::vector<double> r(ndof), z, p, Ap;
      L.apply(x, Ap);
      for (std::size_t i = 0; i < ndof; ++i) r[i] = b[i] - Ap[i];
      double rnorm = std::sqrt(dot(r, r));
      if (rnorm > options.tolerance * bnorm) {
        mg.precondition(r, z);
        p = z;
        double rz = dot(r, z);
        int it = 0;
        while (it < options.max_iterations) {
          ++it;
          L.apply(p, Ap);
          const double alpha = rz / dot(p, Ap);
          for (std::size_t i = 0; i < ndof; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * Ap[i];
          }
          rnorm = std::sqrt(dot(r, r));
          if (rnorm <= options.tolerance * bnorm) break;
          mg.precondition(r, z);
          const double rz_next = dot(r, z);
          const double beta = rz_next / rz;
          rz = rz_next;
          for (std::size_t i = 0; i < ndof; ++i) p[i] = z[i] + beta * p[i];
        }
        sol.iterations = it;
        if (rnorm > options.tolerance * bnorm) {
          std::ostringstream msg;
          msg << "elastic solve did not converge: relative residual " << rnorm / bnorm << " after " << it
              << " iterations";
          throw std::runtime_error(msg.str());
        }
      }
      sol.residual = rnorm / bnorm;
    } else {
      std::fill(x.begin(), x.end(), 0.0);
    }

    sol.compliance = dot(b, x);
    double energy = 0.0;
    ElementVector ue;
    for (std::size_t c : L.active_cells) {
      const std::size_t base = L.cell_base(c);
      for (int n = 0; n < 8; ++n)
        for (int a = 0; a < 3; ++a) ue[3 * n + a] = x[3 * (base + L.corner[n]) + a];
      const double e = 0.5 * ue.dot(Ke * ue);
      energy += disc.rho[c] * e;
      state.energy_density[c] += e / (g.h * g.h * g.h) / static_cast<double>(cases.size());
    }
    sol.strain_energy = energy;
    state.cases.push_back(std::move(sol));
  }
  return state;
}

std::vector<double> shape_gradient_compliance(const ElasticState& state, std::span<const SurfaceSample> samples) {
  const Discretization& disc = state.disc;
  const GridSpec& g = disc.grid;
  std::vector<double> w(samples.size(), 0.0);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    // The element holding the material side of the boundary point.
    Vec3 t;
    const Index3 cell = g.locate(samples[s].position - 1e-3 * g.h * samples[s].normal, t);
    const std::size_t own = g.cell_index(cell[0], cell[1], cell[2]);
    if (disc.rho[own] > 0.0) {
      w[s] = state.energy_density[own];
      continue;
    }
    const Vec3 u = g.to_index(samples[s].position);
    Index3 node;
    for (int a = 0; a < 3; ++a) node[a] = std::clamp(static_cast<int>(std::lround(u[a])), 0, g.dims[a] - 1);
    double num = 0.0, den = 0.0;
    for (int dz = -1; dz <= 0; ++dz)
      for (int dy = -1; dy <= 0; ++dy)
        for (int dx = -1; dx <= 0; ++dx) {
          const int ci = node[0] + dx, cj = node[1] + dy, ck = node[2] + dz;
          if (ci < 0 || cj < 0 || ck < 0 || ci >= g.dims[0] - 1 || cj >= g.dims[1] - 1 || ck >= g.dims[2] - 1)
            continue;
          const std::size_t c = g.cell_index(ci, cj, ck);
          num += disc.rho[c] * state.energy_density[c];
          den += disc.rho[c];
        }
    w[s] = den > 0.0 ? num / den : 0.0;
  }
  return w;
}

std::vector<double> apply_stiffness(const Discretization& disc, const Material& material, std::span<const double> u) {
  const GridSpec& g = disc.grid;
  if (u.size() != 3 * g.node_count()) throw std::invalid_argument("displacement size does not match grid");
  const ElementMatrix Ke = hex_stiffness(material, g.h);
  std::vector<double> y(u.size(), 0.0);
  ElementVector ue;
  for (std::size_t c = 0; c < disc.rho.size(); ++c) {
    if (disc.rho[c] <= 0.0) continue;
    const Index3 ci = g.cell_unindex(c);
    std::size_t nodes[8];
    for (int n = 0; n < 8; ++n) nodes[n] = g.index(ci[0] + (n & 1), ci[1] + ((n >> 1) & 1), ci[2] + (n >> 2));
    for (int n = 0; n < 8; ++n)
      for (int a = 0; a < 3; ++a) ue[3 * n + a] = u[3 * nodes[n] + a];
    const ElementVector ye = disc.rho[c] * (Ke * ue);
    for (int n = 0; n < 8; ++n)
      for (int a = 0; a < 3; ++a) y[3 * nodes[n] + a] += ye[3 * n + a];
  }
  return y;
}

Eigen::MatrixXd dense_stiffness(const Discretization& disc, const Material& material) {
  const GridSpec& g = disc.grid;
  const auto n = static_cast<Eigen::Index>(3 * g.node_count());
  const ElementMatrix Ke = hex_stiffness(material, g.h);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t c = 0; c < disc.rho.size(); ++c) {
    if (disc.rho[c] <= 0.0) continue;
    const Index3 ci = g.cell_unindex(c);
    std::size_t nodes[8];
    for (int q = 0; q < 8; ++q) nodes[q] = g.index(ci[0] + (q & 1), ci[1] + ((q >> 1) & 1), ci[2] + (q >> 2));
    for (int p = 0; p < 8; ++p)
      for (int q = 0; q < 8; ++q)
        K.block<3, 3>(3 * nodes[p], 3 * nodes[q]) += disc.rho[c] * Ke.block<3, 3>(3 * p, 3 * q);
  }
  return K;
}

}  // namespace millforge
