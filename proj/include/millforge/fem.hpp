#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "millforge/levelset.hpp"

// Linear elasticity on the level-set grid: every grid cell is a trilinear
// hexahedron whose stiffness is scaled by its occupied volume fraction.
// Units are mm, N and MPa; Material takes Young's modulus in Pa.
namespace millforge {

struct Material {
  double youngs_modulus = 1e9;  // Pa
  double poisson_ratio = 0.3;

  void validate() const;
  double modulus_mpa() const { return youngs_modulus * 1e-6; }
};

/// Surface patch selector: an axis-aligned box, or a disk lying in a
/// coordinate plane. Membership is tested with a tolerance.
struct PatchRegion {
  enum class Kind { Box, Disk };
  Kind kind = Kind::Box;
  Vec3 lo = Vec3::Zero(), hi = Vec3::Zero();  // box
  int axis = 2;                               // disk normal axis
  Vec3 center = Vec3::Zero();
  double radius = 0.0;

  static PatchRegion box(const Vec3& lo, const Vec3& hi);
  static PatchRegion disk(int axis, const Vec3& center, double radius);
  bool contains(const Vec3& x, double tol) const;
};

/// Total force (N) spread over the grid nodes of a patch by tributary area.
struct Traction {
  PatchRegion region;
  Vec3 force = Vec3::Zero();
};

struct LoadCase {
  std::string name;
  std::vector<Traction> tractions;
  std::vector<PatchRegion> fixed;  // zero displacement
};

/// A face-connected group of elements that no fixed patch holds in place.
class FloatingComponentError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kMinDensity = 1e-3;

/// Per-cell stiffness scale: 0 for void cells, max(fraction, rho_min) for
/// cut cells, 1 for interior cells.
struct Discretization {
  GridSpec grid;
  std::vector<double> rho;

  std::size_t active_count() const;
  /// True when the node belongs to at least one active cell.
  bool node_active(int i, int j, int k) const;
};

/// Throws EmptyShapeError when no cell is occupied.
Discretization discretize(const LevelSet& ls, double rho_min = kMinDensity);

struct FemOptions {
  double tolerance = 1e-6;  // relative residual
  int max_iterations = 5000;
  bool multigrid = true;  // false: Jacobi-preconditioned CG
};

struct CaseSolution {
  std::vector<double> u;  // 3 per grid node, x-fastest nodes, mm
  double compliance = 0.0;     // f.u, N mm
  double strain_energy = 0.0;  // 0.5 u.K.u
  int iterations = 0;
  double residual = 0.0;  // final relative residual
};

struct ElasticState {
  Discretization disc;
  Material material;
  std::vector<CaseSolution> cases;
  /// Case-averaged strain energy density 0.5 sigma:e per cell for full
  /// material (independent of rho), N/mm^2.
  std::vector<double> energy_density;

  double mean_compliance() const;
};

/// One solve per load case. `warm_start` seeds displacements when its grid matches.
/// Throws FloatingComponentError when an element group is not anchored,
/// std::invalid_argument for patches that select no active node.
ElasticState solve(const Discretization& disc, const Material& material, const std::vector<LoadCase>& cases,
                   const FemOptions& options = {}, const ElasticState* warm_start = nullptr);

/// Strain energy density w (case average) at each sample, taken from the
/// element containing the sample (rho-weighted mean of the cells around the
/// nearest node when that element is void). This is the
/// negative compliance shape gradient up to the factor 2 of dC = -2 w dV.
std::vector<double> shape_gradient_compliance(const ElasticState& state, std::span<const SurfaceSample> samples);

struct Component {
  std::vector<std::size_t> cells;
  Vec3 lo = Vec3::Zero(), hi = Vec3::Zero();
};

/// Face-connected groups of active cells that lack a fixed node in some case.
std::vector<Component> floating_components(const Discretization& disc, const std::vector<LoadCase>& cases);
/// Sets rho = 0 on floating groups; returns the number of cells removed.
std::size_t remove_floating(Discretization& disc, const std::vector<LoadCase>& cases);

/// 24x24 stiffness of a cube element of edge h; dofs ordered node-major
/// (x,y,z per node), nodes ordered x-fastest over the cube corners.
Eigen::Matrix<double, 24, 24> hex_stiffness(const Material& material, double h);

/// Unconstrained K u over all active cells.
std::vector<double> apply_stiffness(const Discretization& disc, const Material& material, std::span<const double> u);

/// Dense unconstrained stiffness (3 dofs per grid node). Small grids only.
Eigen::MatrixXd dense_stiffness(const Discretization& disc, const Material& material);

}  // namespace millforge
