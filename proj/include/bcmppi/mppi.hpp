// Classic MPPI: Gaussian perturbations around a nominal zero-order-hold thrust plan,
// exponentiated-cost importance weights, weighted update and receding-horizon execution.
//
// The optional per-sample feasibility factor is the hook used by the constraint layer:
// the modulated weight of sample k is exp(-(J_k - rho) / lambda) * w_k.
#pragma once

#include "bcmppi/constraints.hpp"
#include "bcmppi/dynamics.hpp"
#include "bcmppi/parallel.hpp"
#include "bcmppi/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcmppi {

using PlanMatrix = Eigen::Matrix<double, Eigen::Dynamic, kNumRotors, Eigen::RowMajor>;

struct ControlPlan {
  PlanMatrix theta;  // horizon x 4 rotor thrusts, one row per step
  double dt = 0.02;

  int horizon() const { return static_cast<int>(theta.rows()); }

  ControlInput input(int i) const { return {theta.row(i).transpose()}; }

  static ControlPlan hover(int horizon, double dt, const QuadrotorParams& params) {
    return {PlanMatrix::Constant(horizon, kNumRotors, params.hover_thrust()), dt};
  }

  ControlPlan clamped(double u_max) const {
    return {theta.cwiseMax(0.0).cwiseMin(u_max), dt};
  }

  /// Drops the first row and repeats the last one.
  ControlPlan shifted() const {
    ControlPlan p = *this;
    const int n = horizon();
    if (n > 1) {
      p.theta.topRows(n - 1) = theta.bottomRows(n - 1);
      p.theta.row(n - 1) = theta.row(n - 1);
    }
    return p;
  }
};

enum class BaselineRule { kMinCost };

struct MppiConfig {
  int num_samples = 300;
  double temperature = 1.0;
  Eigen::Vector4d sigma = Eigen::Vector4d::Constant(1.0);
  int horizon = 25;
  double dt = 0.02;
  BaselineRule baseline_rule = BaselineRule::kMinCost;
  std::uint64_t seed = 0;
  std::optional<double> rejection_epsilon;  // default 1e-6 / K

  double effective_rejection_epsilon() const {
    return rejection_epsilon.value_or(1e-6 / static_cast<double>(num_samples));
  }

  void validate() const {
    if (num_samples < 1) throw std::invalid_argument("mppi: num_samples must be >= 1");
    if (!(temperature > 0)) throw std::invalid_argument("mppi: temperature must be > 0");
    if (!(sigma.array() >= 0).all()) throw std::invalid_argument("mppi: sigma must be >= 0");
    if (horizon < 1) throw std::invalid_argument("mppi: horizon must be >= 1");
    if (!(dt > 0)) throw std::invalid_argument("mppi: dt must be > 0");
    const double eps = effective_rejection_epsilon();
    if (!(eps >= 0 && eps < 1.0 / num_samples)) {
      throw std::invalid_argument("mppi: rejection_epsilon must lie in [0, 1/K)");
    }
  }
};

struct CostSpec {
  double position_weight = 2.0;
  double velocity_weight = 0.05;
  double control_weight = 1e-4;
  double terminal_position_weight = 10.0;
  // Attitude stabilization terms; the tracking terms alone leave yaw unobserved.
  double angular_velocity_weight = 0.05;  // s^2/rad^2
  double attitude_weight = 1.0;           // on |q_xyz|^2, i.e. sin^2 of half the rotation angle
  Vec3 target = Vec3::Zero();

  void validate() const {
    if (position_weight < 0 || velocity_weight < 0 || control_weight < 0 ||
        terminal_position_weight < 0 || angular_velocity_weight < 0 || attitude_weight < 0) {
      throw std::invalid_argument("cost weights must be non-negative");
    }
  }
};

struct RolloutEvaluation {
  double cost = 0.0;
  double raw_weight = 0.0;        // mu
  double feasibility = 1.0;       // w(theta)
  double modulated_weight = 0.0;  // mu * w
  double normalized_weight = 0.0;  // omega
  bool violated = false;           // ground-truth L1 margin check over the rollout
  bool rejected = false;           // omega below the rejection threshold

  bool operator==(const RolloutEvaluation&) const = default;
};

class NoViableSampleError : public std::runtime_error {
 public:
  NoViableSampleError() : std::runtime_error("no viable sample: every rollout cost is infinite") {}
};

inline std::vector<PlanMatrix> sample_perturbations(const MppiConfig& config,
                                                    const RandomStream& stream) {
  std::vector<PlanMatrix> out(static_cast<std::size_t>(config.num_samples));
  for (int k = 0; k < config.num_samples; ++k) {
    auto rng = stream.child(static_cast<std::uint64_t>(k)).engine();
    std::normal_distribution<double> normal(0.0, 1.0);
    PlanMatrix d(config.horizon, kNumRotors);
    for (int i = 0; i < config.horizon; ++i) {
      for (int r = 0; r < kNumRotors; ++r) d(i, r) = config.sigma(r) * normal(rng);
    }
    out[static_cast<std::size_t>(k)] = std::move(d);
  }
  return out;
}

/// Optional obstacle coupling of the rollout cost (MPPI-penalty baseline).
struct RolloutPenalty {
  std::span<const Obstacle> obstacles;
  bool step_penalty = false;    // add penalty_term(worst margin) per step
  double shaping_weight = 0.0;  // add shaping_weight * max(0, -D) per step
};

struct RolloutResult {
  double cost = 0.0;
  std::vector<State> trajectory;  // x_0 .. x_N, truncated on divergence
  bool diverged = false;
};

/// J = terminal * |p_N - target|^2 + sum_{i<N} (position |p_i - target|^2 + velocity |v_i|^2
///     + control |u_i|^2 + angular_velocity |w_i|^2 + attitude |q_xyz,i|^2). Obstacles (when penalized) are evaluated at clock + i * dt for
/// the states x_1 .. x_N. A diverged rollout gets J = +inf.
inline RolloutResult rollout_cost(const State& initial, const ControlPlan& plan,
                                  const CostSpec& cost, const QuadrotorParams& params,
                                  double clock, const RolloutPenalty& penalty = {}) {
  RolloutResult r;
  const int n = plan.horizon();
  r.trajectory.reserve(static_cast<std::size_t>(n) + 1);
  r.trajectory.push_back(initial);
  double j = 0.0;
  State x = initial;
  const bool coupled = !penalty.obstacles.empty() && (penalty.step_penalty || penalty.shaping_weight > 0);
  try {
    for (int i = 0; i < n; ++i) {
      const ControlInput u = plan.input(i).clamped(params.u_max);
      j += cost.position_weight * (x.position - cost.target).squaredNorm() +
           cost.velocity_weight * x.linear_velocity.squaredNorm() +
           cost.control_weight * u.rotor_thrusts.squaredNorm() +
           cost.angular_velocity_weight * x.angular_velocity.squaredNorm() +
           cost.attitude_weight * x.attitude.vec().squaredNorm();
      x = step(x, u, plan.dt, params);
      r.trajectory.push_back(x);
      if (coupled) {
        const double d = worst_margin(x.position, penalty.obstacles, clock + (i + 1) * plan.dt);
        if (penalty.step_penalty) j += penalty_term(d);
        if (penalty.shaping_weight > 0) j += penalty.shaping_weight * std::max(0.0, -d);
      }
    }
  } catch (const DivergedStateError&) {
    r.cost = std::numeric_limits<double>::infinity();
    r.diverged = true;
    return r;
  }
  j += cost.terminal_position_weight * (x.position - cost.target).squaredNorm();
  r.cost = j;
  return r;
}

struct WeightResult {
  std::vector<RolloutEvaluation> evaluations;
  bool all_infeasible = false;  // sum of modulated weights was zero; fell back to raw weights
};

inline WeightResult compute_weights(std::span<const double> costs, double lambda,
                                    std::span<const double> feasibility,
                                    double rejection_epsilon = 0.0) {
  if (costs.size() != feasibility.size()) {
    throw std::invalid_argument("compute_weights: feasibility list length differs from costs");
  }
  if (!(lambda > 0)) throw std::invalid_argument("compute_weights: lambda must be > 0");
  double rho = std::numeric_limits<double>::infinity();
  for (double c : costs) {
    if (std::isfinite(c)) rho = std::min(rho, c);
  }
  if (!std::isfinite(rho)) throw NoViableSampleError();

  WeightResult out;
  out.evaluations.resize(costs.size());
  double sum_mu = 0.0;
  double sum_mod = 0.0;
  for (std::size_t k = 0; k < costs.size(); ++k) {
    auto& e = out.evaluations[k];
    e.cost = costs[k];
    e.feasibility = feasibility[k];
    e.raw_weight = std::isfinite(costs[k]) ? std::exp(-(costs[k] - rho) / lambda) : 0.0;
    e.modulated_weight = e.raw_weight * e.feasibility;
    sum_mu += e.raw_weight;
    sum_mod += e.modulated_weight;
  }
  if (sum_mod > 0.0) {
    for (auto& e : out.evaluations) e.normalized_weight = e.modulated_weight / sum_mod;
  } else {
    out.all_infeasible = true;
    for (auto& e : out.evaluations) e.normalized_weight = e.raw_weight / sum_mu;
  }
  for (auto& e : out.evaluations) e.rejected = e.normalized_weight < rejection_epsilon;
  return out;
}

/// theta* = theta_bar + sum_k omega_k * delta_k, summed in sample order, then clamped.
inline ControlPlan update_plan(const ControlPlan& nominal, std::span<const PlanMatrix> perturbations,
                               std::span<const RolloutEvaluation> evaluations, double u_max) {
  if (perturbations.size() != evaluations.size()) {
    throw std::invalid_argument("update_plan: perturbation and evaluation counts differ");
  }
  PlanMatrix delta = PlanMatrix::Zero(nominal.theta.rows(), kNumRotors);
  for (std::size_t k = 0; k < perturbations.size(); ++k) {
    const double w = evaluations[k].normalized_weight;
    if (w != 0.0) delta += w * perturbations[k];
  }
  ControlPlan out{nominal.theta + delta, nominal.dt};
  return out.clamped(u_max);
}

/// Probability-of-feasibility hook, evaluated on (measured state, clamped candidate plan).
using FeasibilityFn = std::function<double(const State&, const ControlPlan&)>;

struct StepOptions {
  std::span<const Obstacle> obstacles;  // ground truth, used for diagnostics and penalties
  bool step_penalty = false;
  double shaping_weight = 0.0;
  FeasibilityFn feasibility;  // empty -> all ones
};

struct StepResult {
  ControlInput applied;
  std::vector<RolloutEvaluation> diagnostics;
  bool all_infeasible = false;
  bool no_viable_sample = false;
};

class MppiController {
 public:
  MppiController(MppiConfig config, CostSpec cost, QuadrotorParams params, int workers = 1)
      : config_(std::move(config)),
        cost_(std::move(cost)),
        params_(std::move(params)),
        workers_(workers),
        nominal_(ControlPlan::hover(config_.horizon, config_.dt, params_)),
        last_input_(ControlInput::hover(params_)) {
    config_.validate();
    cost_.validate();
    params_.validate();
  }

  const MppiConfig& config() const { return config_; }
  const CostSpec& cost() const { return cost_; }
  const QuadrotorParams& params() const { return params_; }
  const ControlPlan& nominal() const { return nominal_; }
  std::uint64_t steps_taken() const { return step_index_; }
  void set_nominal(ControlPlan plan) { nominal_ = std::move(plan); }
  void set_target(const Vec3& target) { cost_.target = target; }
  void set_workers(int w) { workers_ = w; }

  /// Perturbations of the most recent step (kept for inspection and tests).
  const std::vector<PlanMatrix>& last_perturbations() const { return perturbations_; }

  StepResult step(const State& measured, double clock, const StepOptions& opts = {}) {
    const auto k_count = static_cast<std::size_t>(config_.num_samples);
    const RandomStream stream = RandomStream(config_.seed).child(step_index_);
    ++step_index_;
    perturbations_ = sample_perturbations(config_, stream);

    std::vector<double> costs(k_count);
    std::vector<double> feas(k_count, 1.0);
    std::vector<char> violated(k_count, 0);
    const RolloutPenalty penalty{opts.obstacles, opts.step_penalty, opts.shaping_weight};

    parallel_for(k_count, workers_, [&](std::size_t k) {
      const ControlPlan candidate =
          ControlPlan{nominal_.theta + perturbations_[k], nominal_.dt}.clamped(params_.u_max);
      RolloutResult r = rollout_cost(measured, candidate, cost_, params_, clock, penalty);
      costs[k] = r.cost;
      if (!opts.obstacles.empty() && r.trajectory.size() > 1) {
        const std::span<const State> tail(r.trajectory.data() + 1, r.trajectory.size() - 1);
        violated[k] = evaluate_trajectory(tail, opts.obstacles, clock + nominal_.dt, nominal_.dt).violated ||
                      r.diverged;
      }
      if (opts.feasibility) feas[k] = opts.feasibility(measured, candidate);
    });

    StepResult out;
    WeightResult w;
    try {
      w = compute_weights(costs, config_.temperature, feas, config_.effective_rejection_epsilon());
    } catch (const NoViableSampleError&) {
      out.no_viable_sample = true;
      out.applied = last_input_;
      out.diagnostics.resize(k_count);
      for (std::size_t k = 0; k < k_count; ++k) {
        out.diagnostics[k].cost = costs[k];
        out.diagnostics[k].feasibility = feas[k];
        out.diagnostics[k].violated = violated[k] != 0;
        out.diagnostics[k].rejected = true;
      }
      return out;
    }
    for (std::size_t k = 0; k < k_count; ++k) w.evaluations[k].violated = violated[k] != 0;

    const ControlPlan optimal = update_plan(nominal_, perturbations_, w.evaluations, params_.u_max);
    out.applied = optimal.input(0);
    out.diagnostics = std::move(w.evaluations);
    out.all_infeasible = w.all_infeasible;
    last_input_ = out.applied;
    nominal_ = optimal.shifted();
    return out;
  }

 private:
  MppiConfig config_;
  CostSpec cost_;
  QuadrotorParams params_;
  int workers_;
  ControlPlan nominal_;
  ControlInput last_input_;
  std::uint64_t step_index_ = 0;
  std::vector<PlanMatrix> perturbations_;
};

/// Classic MPPI replanning step: sample, roll out, weight, update, apply the first input.
inline StepResult receding_horizon_step(MppiController& controller, const State& measured,
                                        double clock, std::span<const Obstacle> obstacles = {}) {
  StepOptions opts;
  opts.obstacles = obstacles;
  return controller.step(measured, clock, opts);
}

}  // namespace bcmppi
