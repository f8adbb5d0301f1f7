#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "millforge/fem.hpp"
#include "millforge/levelset.hpp"
#include "millforge/milling.hpp"

// Volume-constrained compliance minimization by level-set advection with an
// augmented Lagrangian, optionally filtered for millability.

namespace millforge {

enum class UpdateAlgorithm { Strict, Relaxed };

struct Problem {
  LevelSet domain;
  std::optional<LevelSet> preserved;  // forced to stay part of the shape
  Material material;
  std::vector<LoadCase> load_cases;
  double volume_fraction = 0.3;  // target, relative to the domain volume
  ToolModel tool;
  MillingMode mode = MillingMode::Off;
  std::vector<Vec3> directions;  // 3-axis only
  MillingOptions milling;
  std::vector<MirrorPlane> symmetry;
  UpdateAlgorithm algorithm = UpdateAlgorithm::Strict;
  double alpha = 0.25;  // relaxed growth factor

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
  /// Narrow-band half width used for the evolving shape.
  double band_width() const;
};

struct OptimizerSettings {
  int max_iterations = 200;
  int outer_every = 10;  // inner iterations between multiplier updates
  double initial_penalty = 10.0;
  double max_penalty = 1e6;
  int max_halvings = 8;
  int window = 5;  // iterations over which the objective change is measured
  double objective_tolerance = 0.01;
  double volume_tolerance = 0.01;
  int max_stalls = 3;
  double preserved_margin = 1.0;  // speed is zeroed within this many h of a preserved region
  FemOptions fem;
  std::optional<LevelSet> initial_shape;  // defaults to the design domain
  bool close_at_end = true;
};

struct AugLagState {
  double lambda = 0.0;
  double mu = 10.0;
  double g_at_last_update = 0.0;  // g at the previous update (or the start)
  bool has_reference = false;

  /// L = c + (mu/2) max(0, lambda/mu + g)^2 - lambda^2/(2 mu).
  double value(double c_normalized, double g) const;
  /// Shape derivative of the constraint part per unit boundary motion, times vol(domain).
  double volume_weight(double g) const { return std::max(0.0, lambda + mu * g); }
};

/// lambda <- max(0, lambda + mu g); mu doubles when |g| did not halve since
/// the previous update (capped).
void outer_update(AugLagState& state, double g, double max_penalty = 1e6);

/// Boundary speed from the descent speed v and the filter eta.
/// Off: v unchanged. Strict: eta v, with eta forced to 0 where v > 0.
/// Relaxed: alpha v_max where eta = 0 (alpha max|v| when no sample wants to
/// grow), eta v elsewhere.
std::vector<double> filtered_speed(MillingMode mode, UpdateAlgorithm algorithm, std::span<const double> v,
                                   std::span<const double> eta, double alpha);

struct Evaluation {
  ElasticState fem;
  double compliance = 0.0;  // case mean, N mm
  double volume = 0.0;
  double g = 0.0;  // volume fraction minus target
  double lagrangian = 0.0;
  std::size_t floating_cells = 0;
};

struct IterationRecord {
  int iteration = 0;
  double lagrangian = 0.0;  // at the start of the iteration
  double compliance = 0.0;
  double volume_fraction = 0.0;
  double lambda = 0.0;
  double mu = 0.0;
  double eps = 0.0;  // accepted advection time, 0 on a stall
  double max_speed = 0.0;
  double frac_eta_zero = 0.0;
  double trial_lagrangian = 0.0;  // L of the accepted (or last tried) shape, same multipliers
  int halvings = 0;
  bool accepted = false;
  bool outer_update = false;
  bool strict_fallback = false;  // relaxed step rejected, shrink-only step tried instead
  std::size_t samples = 0;
  double seconds = 0.0;
};

struct StepView {
  const IterationRecord& record;
  const LevelSet& before;  // shape the filter was computed on
  const LevelSet& after;   // shape after the step
  std::span<const SurfaceSample> samples;
  const FilterField& filter;
  std::span<const double> speed;  // per sample, after filtering
};

struct RunResult {
  LevelSet shape;       // after the final closing
  LevelSet open_shape;  // before it
  std::vector<IterationRecord> history;
  double compliance = 0.0;  // of the closed shape
  double volume_fraction = 0.0;
  double open_compliance = 0.0;
  double open_volume_fraction = 0.0;
  double initial_compliance = 0.0;
  int iterations = 0;
  bool converged = false;
  bool infeasible = false;  // stalled without meeting the volume target
  double seconds = 0.0;
};

class Optimizer {
public:
  Optimizer(Problem problem, OptimizerSettings settings = {});

  const Problem& problem() const { return problem_; }
  const LevelSet& shape() const { return shape_; }
  const AugLagState& multipliers() const { return state_; }
  AugLagState& multipliers() { return state_; }
  const Evaluation& current() const { return current_; }
  double reference_compliance() const { return c0_; }
  double domain_volume() const { return domain_volume_; }

  /// FEM solve and augmented Lagrangian of a shape under the current multipliers.
  Evaluation evaluate(const LevelSet& shape, const ElasticState* warm = nullptr) const;

  /// Per-sample shape derivative dL (positive: growth raises L).
  std::vector<double> lagrangian_gradient(std::span<const SurfaceSample> samples) const;

  /// Advect by the extended speed for time eps and apply the domain, preserved
  /// regions and symmetry, then redistance.
  LevelSet trial_shape(std::span<const double> node_speed, double eps) const;

  struct LineSearchResult {
    double eps = 0.0;
    int halvings = 0;
    bool accepted = false;
    std::optional<LevelSet> shape;
    std::optional<Evaluation> evaluation;
    double lagrangian = 0.0;
  };
  /// eps0 = h / (2 max|speed|), halved until L decreases.
  LineSearchResult line_search(std::span<const double> node_speed, double max_speed) const;

  /// One inner iteration. Returns false once the boundary no longer moves.
  bool step(const std::function<void(const StepView&)>& observer = {});

  /// Full optimization followed by a closing with the bit radius.
  RunResult run(const std::function<void(const StepView&)>& observer = {});

  /// Replaces the evolving shape (for example to restart from a checkpoint).
  void reset_shape(const LevelSet& shape);

private:
  FilterField filter(const LevelSet& shape, std::span<const SurfaceSample> samples);
  LevelSet constrain(LevelSet shape) const;

  Problem problem_;
  OptimizerSettings settings_;
  double domain_volume_ = 0.0;
  double c0_ = 0.0;
  AugLagState state_;
  LevelSet shape_;
  Evaluation current_;
  std::optional<TemperatureField> temperature_;
  std::vector<IterationRecord> history_;
  int iteration_ = 0;
  int since_outer_ = 0;
  int stalls_ = 0;
};

}  // namespace millforge
