#include "millforge/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace millforge {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

void Problem::validate() const {
  if (domain.empty()) throw std::invalid_argument("design domain is empty");
  if (!(volume_fraction > 0.0 && volume_fraction < 1.0))
    throw std::invalid_argument("volume fraction must lie in (0, 1)");
  material.validate();
  tool.validate();
  if (load_cases.empty()) throw std::invalid_argument("at least one load case is required");
  if (algorithm == UpdateAlgorithm::Relaxed && !(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("relaxed alpha must lie in (0, 1]");
  if (mode == MillingMode::ThreeAxis && directions.empty())
    throw std::invalid_argument("3-axis milling needs at least one direction");
  if (preserved) {
    if (!(preserved->grid() == domain.grid())) throw std::invalid_argument("preserved regions use a different grid");
    const auto p = preserved->values();
    const auto d = domain.values();
    const double h = domain.spacing();
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p[i] < -h && d[i] > h) throw std::invalid_argument("preserved regions leave the design domain");
  }
  for (const auto& plane : symmetry)
    if (plane.axis < 0 || plane.axis > 2) throw std::invalid_argument("symmetry axis must be 0, 1 or 2");
}

double Problem::band_width() const {
  const double h = domain.spacing();
  const double reach = mode == MillingMode::Off ? tool.bit_radius : tool.head_radius;
  return std::max(4.0 * h, reach + 2.0 * h);
}

double AugLagState::value(double c_normalized, double g) const {
  const double t = std::max(0.0, lambda / mu + g);
  return c_normalized + 0.5 * mu * t * t - lambda * lambda / (2.0 * mu);
}

void outer_update(AugLagState& state, double g, double max_penalty) {
  if (state.has_reference && std::abs(g) > 0.5 * std::abs(state.g_at_last_update))
    state.mu = std::min(2.0 * state.mu, max_penalty);
  state.lambda = std::max(0.0, state.lambda + state.mu * g);
  state.g_at_last_update = g;
  state.has_reference = true;
}

std::vector<double> filtered_speed(MillingMode mode, UpdateAlgorithm algorithm, std::span<const double> v,
                                   std::span<const double> eta, double alpha) {
  if (v.size() != eta.size()) throw std::invalid_argument("speed and filter sizes differ");
  std::vector<double> out(v.begin(), v.end());
  if (mode == MillingMode::Off) return out;
  if (algorithm == UpdateAlgorithm::Strict) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? 0.0 : eta[i] * v[i];
    return out;
  }
  double vmax = -std::numeric_limits<double>::infinity(), vabs = 0.0;
  for (double x : v) {
    vmax = std::max(vmax, x);
    vabs = std::max(vabs, std::abs(x));
  }
  const double grow = alpha * (vmax > 0.0 ? vmax : vabs);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = eta[i] == 0.0 ? grow : eta[i] * v[i];
  return out;
}

Optimizer::Optimizer(Problem problem, OptimizerSettings settings)
    : problem_(std::move(problem)), settings_(std::move(settings)) {
  problem_.validate();
  if (settings_.max_iterations < 0 || settings_.outer_every < 1 || settings_.window < 1 ||
      settings_.max_halvings < 0 || !(settings_.initial_penalty > 0.0))
    throw std::invalid_argument("invalid optimizer settings");

  const double band = problem_.band_width();
  problem_.domain.set_band_width(band);
  redistance_in_place(problem_.domain);
  if (problem_.preserved) {
    problem_.preserved->set_band_width(band);
    redistance_in_place(*problem_.preserved);
  }
  domain_volume_ = volume(problem_.domain);
  state_.mu = settings_.initial_penalty;

  LevelSet start = settings_.initial_shape ? *settings_.initial_shape : problem_.domain;
  if (!(start.grid() == problem_.domain.grid())) throw std::invalid_argument("initial shape uses a different grid");
  start.set_band_width(band);
  shape_ = constrain(std::move(start));

  // The reference compliance is that of the starting shape; its value only
  // scales the objective.
  c0_ = 1.0;
  current_ = evaluate(shape_);
  c0_ = current_.compliance;
  if (!(c0_ > 0.0)) throw std::runtime_error("starting shape carries no load");
  current_.lagrangian = state_.value(current_.compliance / c0_, current_.g);
  state_.g_at_last_update = current_.g;
  state_.has_reference = true;
}

LevelSet Optimizer::constrain(LevelSet shape) const {
  shape = intersect(shape, problem_.domain);
  if (problem_.preserved) shape = unite(shape, *problem_.preserved);
  for (const auto& plane : problem_.symmetry) shape = mirror(shape, plane);
  const double target = volume(shape);
  redistance_in_place(shape);
  restore_volume(shape, target, 1e-6);
  shape = intersect(shape, problem_.domain);
  if (problem_.preserved) shape = unite(shape, *problem_.preserved);
  return shape;
}

void Optimizer::reset_shape(const LevelSet& shape) {
  if (!(shape.grid() == problem_.domain.grid())) throw std::invalid_argument("shape uses a different grid");
  LevelSet s = shape;
  s.set_band_width(problem_.band_width());
  shape_ = constrain(std::move(s));
  current_ = evaluate(shape_);
  temperature_.reset();
}

Evaluation Optimizer::evaluate(const LevelSet& shape, const ElasticState* warm) const {
  Evaluation e;
  Discretization disc = discretize(shape);
  e.floating_cells = remove_floating(disc, problem_.load_cases);
  e.fem = solve(disc, problem_.material, problem_.load_cases, settings_.fem, warm);
  e.compliance = e.fem.mean_compliance();
  e.volume = volume(shape);
  e.g = e.volume / domain_volume_ - problem_.volume_fraction;
  e.lagrangian = state_.value(e.compliance / c0_, e.g);
  return e;
}

std::vector<double> Optimizer::lagrangian_gradient(std::span<const SurfaceSample> samples) const {
  const std::vector<double> w = shape_gradient_compliance(current_.fem, samples);
  const double vol_term = state_.volume_weight(current_.g) / domain_volume_;
  std::vector<double> dl(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) dl[i] = -2.0 * w[i] / c0_ + vol_term;
  return dl;
}

LevelSet Optimizer::trial_shape(std::span<const double> node_speed, double eps) const {
  return constrain(advect(shape_, node_speed, eps));
}

Optimizer::LineSearchResult Optimizer::line_search(std::span<const double> node_speed, double max_speed) const {
  LineSearchResult r;
  if (!(max_speed > 0.0)) return r;
  const double eps0 = 0.5 * shape_.spacing() / max_speed;
  r.lagrangian = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= settings_.max_halvings; ++k) {
    const double eps = std::ldexp(eps0, -k);
    r.eps = eps;
    r.halvings = k;
    LevelSet trial;
    Evaluation ev;
    try {
      trial = trial_shape(node_speed, eps);
      ev = evaluate(trial, &current_.fem);
    } catch (const EmptyShapeError&) {
      continue;
    } catch (const FloatingComponentError&) {
      continue;
    } catch (const std::invalid_argument&) {
      continue;  // a load or support patch lost its material
    }
    r.lagrangian = ev.lagrangian;
    if (ev.lagrangian < current_.lagrangian) {
      r.accepted = true;
      r.shape = std::move(trial);
      r.evaluation = std::move(ev);
      return r;
    }
  }
  return r;
}

FilterField Optimizer::filter(const LevelSet& shape, std::span<const SurfaceSample> samples) {
  const auto& p = problem_;
  if (p.mode == MillingMode::HeatSearch) {
    temperature_ = milling_temperature(shape, p.tool, temperature_ ? &*temperature_ : nullptr);
    return compute_filter(p.mode, shape, samples, p.tool, nullptr, &*temperature_, p.milling);
  }
  if (p.mode == MillingMode::ThreeAxis) {
    const DirectionSet dirs = DirectionSet::normalized(p.directions);
    return compute_filter(p.mode, shape, samples, p.tool, &dirs, nullptr, p.milling);
  }
  return compute_filter(p.mode, shape, samples, p.tool, nullptr, nullptr, p.milling);
}

bool Optimizer::step(const std::function<void(const StepView&)>& observer) {
  const auto t0 = Clock::now();
  IterationRecord rec;
  rec.iteration = iteration_;
  rec.lagrangian = current_.lagrangian;
  rec.compliance = current_.compliance;
  rec.volume_fraction = current_.volume / domain_volume_;
  rec.lambda = state_.lambda;
  rec.mu = state_.mu;

  const std::vector<SurfaceSample> samples = sample_boundary(shape_);
  rec.samples = samples.size();
  std::vector<double> v = lagrangian_gradient(samples);
  for (double& x : v) x = -x;
  const FilterField field = filter(shape_, samples);
  const double margin = settings_.preserved_margin * shape_.spacing();
  auto speed_for = [&](UpdateAlgorithm algorithm) {
    std::vector<double> out = filtered_speed(problem_.mode, algorithm, v, field.eta, problem_.alpha);
    if (problem_.preserved)
      for (std::size_t i = 0; i < samples.size(); ++i)
        if (problem_.preserved->interpolate(samples[i].position) < margin) out[i] = 0.0;
    return out;
  };
  std::vector<double> speed = speed_for(problem_.algorithm);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (field.eta[i] == 0.0) ++zeros;
  rec.frac_eta_zero = samples.empty() ? 0.0 : static_cast<double>(zeros) / static_cast<double>(samples.size());

  auto try_speed = [&](const std::vector<double>& sp) {
    double vmax = 0.0;
    for (double x : sp) vmax = std::max(vmax, std::abs(x));
    rec.max_speed = vmax;
    if (!(vmax > 0.0)) {
      rec.trial_lagrangian = current_.lagrangian;
      return false;
    }
    LineSearchResult ls = line_search(extend_normal(shape_, samples, sp), vmax);
    rec.halvings = ls.halvings;
    rec.trial_lagrangian = ls.lagrangian;
    if (!ls.accepted) return false;
    rec.accepted = true;
    rec.eps = ls.eps;
    shape_ = std::move(*ls.shape);
    current_ = std::move(*ls.evaluation);
    return true;
  };

  LevelSet before = shape_;
  bool moved = try_speed(speed);
  // Forced growth can outweigh the descent part of a relaxed step; the
  // shrink-only update is always a descent direction.
  if (!moved && problem_.algorithm == UpdateAlgorithm::Relaxed && problem_.mode != MillingMode::Off) {
    rec.strict_fallback = true;
    speed = speed_for(UpdateAlgorithm::Strict);
    moved = try_speed(speed);
  }
  rec.seconds = seconds_since(t0);
  history_.push_back(rec);
  ++iteration_;
  if (observer) observer(StepView{history_.back(), before, shape_, samples, field, speed});
  return moved;
}

RunResult Optimizer::run(const std::function<void(const StepView&)>& observer) {
  const auto t0 = Clock::now();
  RunResult result;
  result.initial_compliance = c0_;
  const double tol_g = settings_.volume_tolerance;

  auto objective_settled = [&] {
    const int n = static_cast<int>(history_.size());
    if (n <= settings_.window) return false;
    const double now = current_.lagrangian;
    const double then = history_[n - settings_.window].lagrangian;
    return std::abs(now - then) <= settings_.objective_tolerance * std::abs(now);
  };

  while (iteration_ < settings_.max_iterations) {
    const bool moved = step(observer);
    const IterationRecord& rec = history_.back();
    const bool feasible = std::abs(current_.g) <= tol_g;
    if (feasible && (!moved || objective_settled())) {
      result.converged = true;
      break;
    }
    if (!rec.accepted) {
      if (++stalls_ >= settings_.max_stalls) {
        result.infeasible = current_.g > tol_g;
        break;
      }
      // A stall under the current multipliers: move them instead of waiting.
      since_outer_ = settings_.outer_every;
    } else {
      stalls_ = 0;
    }
    if (++since_outer_ >= settings_.outer_every) {
      outer_update(state_, current_.g, settings_.max_penalty);
      current_.lagrangian = state_.value(current_.compliance / c0_, current_.g);
      history_.back().outer_update = true;
      since_outer_ = 0;
    }
  }

  result.open_shape = shape_;
  result.open_compliance = current_.compliance;
  result.open_volume_fraction = current_.volume / domain_volume_;
  if (settings_.close_at_end) {
    result.shape = constrain(close(shape_, problem_.tool.bit_radius));
    const Evaluation closed = evaluate(result.shape, &current_.fem);
    result.compliance = closed.compliance;
    result.volume_fraction = closed.volume / domain_volume_;
  } else {
    result.shape = shape_;
    result.compliance = result.open_compliance;
    result.volume_fraction = result.open_volume_fraction;
  }
  result.history = history_;
  result.iterations = iteration_;
  result.seconds = seconds_since(t0);
  return result;
}

}  // namespace millforge
