// Constraint layer for MPPI: each candidate plan receives the joint probability
// that every modelled constraint holds, and that probability multiplies the
// exponentiated-cost weight. Samples are never dropped; an unlikely-feasible
// sample simply ends up with a vanishing normalized weight.
#pragma once

#include "bcmppi/mppi.hpp"
#include "bcmppi/surrogate.hpp"

#include <algorithm>
#include <span>
#include <stdexcept>
#include <vector>

namespace bcmppi {

/// Product of the per-constraint feasibility probabilities.
inline double feasibility_factor(std::span<const SurrogatePrediction> predictions) {
  if (predictions.empty()) throw std::invalid_argument("feasibility_factor: no predictions");
  double w = 1.0;
  for (const auto& p : predictions) w *= p.feasibility_probability;
  return w;
}

struct FeasibilityReport {
  std::vector<double> per_sample_probability;
  double mean_probability = 1.0;
  double min_probability = 1.0;

  static FeasibilityReport from(std::span<const RolloutEvaluation> evals) {
    FeasibilityReport r;
    r.per_sample_probability.reserve(evals.size());
    double sum = 0.0;
    for (const auto& e : evals) {
      r.per_sample_probability.push_back(e.feasibility);
      sum += e.feasibility;
      r.min_probability = std::min(r.min_probability, e.feasibility);
    }
    if (!evals.empty()) r.mean_probability = sum / static_cast<double>(evals.size());
    return r;
  }
};

/// Feasibility hook backed by one or more surrogates (one per modelled constraint).
/// The ensembles must outlive the returned function.
inline FeasibilityFn surrogate_feasibility(std::vector<const SurrogateEnsemble*> ensembles) {
  if (ensembles.empty()) throw std::invalid_argument("surrogate_feasibility: no surrogate");
  for (const auto* e : ensembles) {
    if (e == nullptr || !e->loaded()) throw std::logic_error("surrogate model is not loaded");
  }
  return [ensembles = std::move(ensembles)](const State& measured, const ControlPlan& plan) {
    const FeatureVector f = features_from_rollout(measured, plan);
    std::vector<SurrogatePrediction> preds;
    preds.reserve(ensembles.size());
    for (const auto* e : ensembles) preds.push_back(predict(*e, f));
    return feasibility_factor(preds);
  };
}

struct BcStepResult {
  StepResult step;
  FeasibilityReport feasibility;
};

/// One BC-MPPI replanning step. `feasibility` is usually surrogate_feasibility(...);
/// tests substitute stubs.
inline BcStepResult bc_controller_step(MppiController& controller, const State& measured, double clock,
                                       const FeasibilityFn& feasibility,
                                       std::span<const Obstacle> obstacles = {}) {
  if (!feasibility) throw std::invalid_argument("bc_controller_step: missing feasibility model");
  if (controller.config().horizon != kSurrogateHorizon) throw HorizonMismatchError(controller.config().horizon);
  StepOptions opts;
  opts.obstacles = obstacles;
  opts.feasibility = [&feasibility](const State& s, const ControlPlan& p) {
    return std::clamp(feasibility(s, p), 0.0, 1.0);
  };
  BcStepResult out;
  out.step = controller.step(measured, clock, opts);
  out.feasibility = FeasibilityReport::from(out.step.diagnostics);
  return out;
}

inline BcStepResult bc_controller_step(MppiController& controller, const State& measured, double clock,
                                       const SurrogateEnsemble& ensemble,
                                       std::span<const Obstacle> obstacles = {}) {
  return bc_controller_step(controller, measured, clock, surrogate_feasibility({&ensemble}), obstacles);
}

}  // namespace bcmppi
