// Closed-loop episodes, surrogate training data, and multi-seed sweeps.
#pragma once

#include "bcmppi/bc_weighting.hpp"
#include "bcmppi/constraints.hpp"
#include "bcmppi/dynamics.hpp"
#include "bcmppi/mppi.hpp"
#include "bcmppi/random.hpp"
#include "bcmppi/scenario.hpp"
#include "bcmppi/surrogate.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace bcmppi {

enum class ControllerKind { kClassicMppi, kMppiPenalty, kBcMppi };

inline const char* to_string(ControllerKind c) {
  switch (c) {
    case ControllerKind::kClassicMppi: return "classic_mppi";
    case ControllerKind::kMppiPenalty: return "mppi_penalty";
    case ControllerKind::kBcMppi: return "bc_mppi";
  }
  return "?";
}

inline ControllerKind controller_from_string(const std::string& s) {
  if (s == "classic_mppi") return ControllerKind::kClassicMppi;
  if (s == "mppi_penalty") return ControllerKind::kMppiPenalty;
  if (s == "bc_mppi") return ControllerKind::kBcMppi;
  throw std::invalid_argument("unknown controller '" + s + "'");
}

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EpisodeConfig {
  Scenario scenario;
  ControllerKind controller = ControllerKind::kClassicMppi;
  MppiConfig mppi;
  CostSpec cost;  // target is taken from the scenario
  QuadrotorParams params;
  double duration = 15.0;
  std::uint64_t seed = 0;
  double penalty_shaping_weight = 0.0;  // mppi_penalty only: extra weight * max(0, -D) per step
  double target_tolerance = 0.15;
  int workers = 1;
  FeasibilityFn feasibility;  // required for bc_mppi
  bool keep_diagnostics = false;

  int num_steps() const { return static_cast<int>(std::floor(duration / mppi.dt + 1e-9)); }

  void validate() const {
    try {
      scenario.validate();
      mppi.validate();
      cost.validate();
      params.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (!(duration > 0) || duration < mppi.dt) {
      throw ConfigError("episode duration must be at least one control step (" + std::to_string(mppi.dt) + " s)");
    }
    if (controller == ControllerKind::kBcMppi) {
      if (!feasibility) throw ConfigError("bc_mppi needs a surrogate model");
      if (mppi.horizon != kSurrogateHorizon) throw ConfigError("bc_mppi needs a 25-step horizon");
    }
    if (penalty_shaping_weight < 0) throw ConfigError("penalty shaping weight must be non-negative");
    if (!(target_tolerance > 0)) throw ConfigError("target tolerance must be positive");
  }
};

struct EpisodeMetrics {
  double sim_runtime = 0.0;        // wall seconds
  double control_frequency = 0.0;  // replanning steps per wall second
  double avg_obstacle_distance = 0.0;
  double final_target_distance = 0.0;
  double mean_target_distance = 0.0;
  int collision_events = 0;
  double rejection_rate = 0.0;
  bool reached_target = false;
  double mean_feasibility = 1.0;
  double min_feasibility = 1.0;
  int steps = 0;
  int all_infeasible_steps = 0;
  int no_viable_steps = 0;
  bool failed = false;
  std::string failure;

  /// Everything except the wall-clock fields.
  bool same_outcome(const EpisodeMetrics& o) const {
    return avg_obstacle_distance == o.avg_obstacle_distance && final_target_distance == o.final_target_distance &&
           mean_target_distance == o.mean_target_distance && collision_events == o.collision_events &&
           rejection_rate == o.rejection_rate && reached_target == o.reached_target &&
           mean_feasibility == o.mean_feasibility && min_feasibility == o.min_feasibility && steps == o.steps &&
           all_infeasible_steps == o.all_infeasible_steps && no_viable_steps == o.no_viable_steps &&
           failed == o.failed && failure == o.failure;
  }
};

struct TraceEntry {
  double clock = 0.0;  // time at which `state` is reached
  State state;
  ControlInput input;  // input applied over the preceding step

  bool operator==(const TraceEntry& o) const {
    return clock == o.clock && state == o.state && input.rotor_thrusts == o.input.rotor_thrusts;
  }
};

struct EpisodeResult {
  EpisodeMetrics metrics;
  std::vector<TraceEntry> trace;
  std::vector<std::vector<RolloutEvaluation>> diagnostics;  // per step, when requested
};

/// Collision events: per obstacle, each maximal run of consecutive trace states with
/// Euclidean distance below the inflated radius counts once.
inline int count_collision_events(std::span<const TraceEntry> trace, std::span<const Obstacle> obstacles) {
  int events = 0;
  std::vector<bool> inside(obstacles.size(), false);
  for (const auto& e : trace) {
    const Clearance c = euclidean_clearance(e.state.position, obstacles, e.clock);
    for (std::size_t j = 0; j < obstacles.size(); ++j) {
      if (c.inside[j] && !inside[j]) ++events;
      inside[j] = c.inside[j];
    }
  }
  return events;
}

inline EpisodeResult run_episode(const EpisodeConfig& config) {
  config.validate();
  const auto wall_start = std::chrono::steady_clock::now();

  MppiConfig mppi = config.mppi;
  mppi.seed = config.seed;
  CostSpec cost = config.cost;
  cost.target = config.scenario.target;
  MppiController controller(mppi, cost, config.params, config.workers);

  const std::span<const Obstacle> obstacles(config.scenario.obstacles);
  StepOptions opts;
  opts.obstacles = obstacles;
  if (config.controller == ControllerKind::kMppiPenalty) {
    opts.step_penalty = true;
    opts.shaping_weight = config.penalty_shaping_weight;
  }
  if (config.controller == ControllerKind::kBcMppi) {
    opts.feasibility = [&f = config.feasibility](const State& s, const ControlPlan& p) {
      return std::clamp(f(s, p), 0.0, 1.0);
    };
  }

  EpisodeResult result;
  EpisodeMetrics& m = result.metrics;
  const int n_steps = config.num_steps();
  const double dt = mppi.dt;
  result.trace.reserve(static_cast<std::size_t>(n_steps));

  State state = State::hover_at(config.scenario.start);
  std::size_t rejected = 0;
  std::size_t evaluated = 0;
  double feas_sum = 0.0;
  std::size_t feas_count = 0;
  double obstacle_distance_sum = 0.0;
  double target_distance_sum = 0.0;
  std::vector<bool> inside(obstacles.size(), false);

  for (int i = 0; i < n_steps; ++i) {
    const double clock = i * dt;
    StepResult sr = controller.step(state, clock, opts);
    for (const auto& e : sr.diagnostics) {
      rejected += e.rejected ? 1 : 0;
      feas_sum += e.feasibility;
      m.min_feasibility = std::min(m.min_feasibility, e.feasibility);
    }
    evaluated += sr.diagnostics.size();
    feas_count += sr.diagnostics.size();
    m.all_infeasible_steps += sr.all_infeasible ? 1 : 0;
    m.no_viable_steps += sr.no_viable_sample ? 1 : 0;
    if (config.keep_diagnostics) result.diagnostics.push_back(std::move(sr.diagnostics));

    try {
      state = step(state, sr.applied, dt, config.params);
    } catch (const DivergedStateError& e) {
      m.failed = true;
      m.failure = e.what();
      break;
    }
    const double now = (i + 1) * dt;
    result.trace.push_back({now, state, sr.applied.clamped(config.params.u_max)});
    ++m.steps;

    const double target_distance = (state.position - config.scenario.target).norm();
    target_distance_sum += target_distance;
    if (target_distance <= config.target_tolerance) m.reached_target = true;
    if (!obstacles.empty()) {
      const Clearance c = euclidean_clearance(state.position, obstacles, now);
      obstacle_distance_sum += c.min_center_distance;
      for (std::size_t j = 0; j < obstacles.size(); ++j) {
        if (c.inside[j] && !inside[j]) ++m.collision_events;
        inside[j] = c.inside[j];
      }
    }
  }

  if (m.steps > 0) {
    m.mean_target_distance = target_distance_sum / m.steps;
    m.avg_obstacle_distance = obstacles.empty() ? 0.0 : obstacle_distance_sum / m.steps;
    m.final_target_distance = (result.trace.back().state.position - config.scenario.target).norm();
  } else {
    m.final_target_distance = (config.scenario.start - config.scenario.target).norm();
    m.mean_target_distance = m.final_target_distance;
  }
  if (evaluated > 0) m.rejection_rate = static_cast<double>(rejected) / static_cast<double>(evaluated);
  if (feas_count > 0) m.mean_feasibility = feas_sum / static_cast<double>(feas_count);

  m.sim_runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  m.control_frequency = m.sim_runtime > 0 ? controller.steps_taken() / m.sim_runtime : 0.0;
  return result;
}

// ---------------------------------------------------------------- dataset generation

struct DatasetConfig {
  std::size_t n_rollouts = 1000;
  std::array<double, 3> mix{2.0, 2.0, 1.0};  // circular : diagonal : sinusoidal
  Vec3 position_low{-0.5, -1.5, 1.0};
  Vec3 position_high{4.5, 1.5, 3.0};
  Vec3 velocity_half_width{3.0, 1.5, 1.0};
  double attitude_half_angle = 0.3;   // rad, per axis
  double angular_rate_half_width = 1.0;  // rad/s, per axis
  double plan_bias_sigma = 0.3;  // N, per-rotor offset held over the whole plan
  double plan_step_sigma = 1.0;  // N, independent per step and rotor
  double clock_max = 15.0;       // obstacle clock drawn from [0, clock_max]
  LabelConvention label_convention = LabelConvention::kMargin;

  void validate() const {
    if (n_rollouts < 1) throw ConfigError("dataset: n_rollouts must be >= 1");
    for (double r : mix) {
      if (!(r > 0) || !std::isfinite(r)) throw ConfigError("dataset: mix ratios must be positive");
    }
    if ((position_high.array() < position_low.array()).any()) throw ConfigError("dataset: empty position box");
    if (plan_bias_sigma < 0 || plan_step_sigma < 0 || clock_max < 0 || attitude_half_angle < 0 ||
        angular_rate_half_width < 0 || (velocity_half_width.array() < 0).any()) {
      throw ConfigError("dataset: spreads must be non-negative");
    }
  }
};

inline constexpr std::array<MotionType, 3> kDatasetMotions{MotionType::kCircular, MotionType::kDiagonal,
                                                           MotionType::kSinusoidal};

/// Largest-remainder apportionment of n rows to the ratio (ties go to the earlier entry).
inline std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& mix) {
  const double total = mix[0] + mix[1] + mix[2];
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * mix[i] / total;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (remainder[i] > remainder[best]) best = i;
    }
    ++counts[best];
    remainder[best] = -1.0;
    ++assigned;
  }
  return counts;
}

struct GeneratedDataset {
  Dataset data;
  std::array<std::size_t, 3> motion_counts{};  // circular, diagonal, sinusoidal
  double label_mean = 0.0;
  double label_min = 0.0;
  double label_max = 0.0;
  double violating_fraction = 0.0;
};

/// Quaternion from a rotation vector (axis * angle).
inline Eigen::Quaterniond quaternion_from_rotation_vector(const Vec3& rv) {
  const double angle = rv.norm();
  if (angle == 0.0) return Eigen::Quaterniond::Identity();
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, rv / angle));
}

inline GeneratedDataset generate_dataset(const DatasetConfig& cfg, const Scenario& tmpl,
                                         const QuadrotorParams& params, double dt, std::uint64_t seed) {
  cfg.validate();
  const RandomStream root(seed);
  const auto counts = apportion(cfg.n_rollouts, cfg.mix);
  const std::size_t n = cfg.n_rollouts;

  Eigen::MatrixXd features(static_cast<Eigen::Index>(n), kFeatureDim);
  Eigen::VectorXd targets(static_cast<Eigen::Index>(n));
  std::size_t violating = 0;

  std::size_t row = 0;
  for (int type = 0; type < 3; ++type) {
    for (std::size_t c = 0; c < counts[type]; ++c, ++row) {
      for (std::uint64_t attempt = 0;; ++attempt) {
        if (attempt > 100) throw std::runtime_error("dataset: every resampled rollout diverged");
        auto rng = root.child(row).child(attempt).engine();
        std::normal_distribution<double> normal(0.0, 1.0);

        std::vector<Obstacle> obstacles = tmpl.obstacles;
        for (auto& o : obstacles) {
          o.motion = kDatasetMotions[type];
          o.phase = uniform(rng, 0.0, 2.0 * M_PI);
        }
        const double clock = uniform(rng, 0.0, cfg.clock_max);

        State s;
        for (int a = 0; a < 3; ++a) s.position(a) = uniform(rng, cfg.position_low(a), cfg.position_high(a));
        Vec3 rv;
        for (int a = 0; a < 3; ++a) rv(a) = uniform(rng, -cfg.attitude_half_angle, cfg.attitude_half_angle);
        s.attitude = quaternion_from_rotation_vector(rv);
        for (int a = 0; a < 3; ++a) {
          s.linear_velocity(a) = uniform(rng, -cfg.velocity_half_width(a), cfg.velocity_half_width(a));
          s.angular_velocity(a) = uniform(rng, -cfg.angular_rate_half_width, cfg.angular_rate_half_width);
        }

        ControlPlan plan = ControlPlan::hover(kSurrogateHorizon, dt, params);
        Thrusts bias;
        for (int r = 0; r < kNumRotors; ++r) bias(r) = cfg.plan_bias_sigma * normal(rng);
        for (int i = 0; i < kSurrogateHorizon; ++i) {
          for (int r = 0; r < kNumRotors; ++r) plan.theta(i, r) += bias(r) + cfg.plan_step_sigma * normal(rng);
        }
        plan = plan.clamped(params.u_max);

        std::vector<State> traj;
        traj.reserve(kSurrogateHorizon);
        try {
          State x = s;
          for (int i = 0; i < kSurrogateHorizon; ++i) {
            x = step(x, plan.input(i), dt, params);
            traj.push_back(x);
          }
        } catch (const DivergedStateError&) {
          continue;
        }
        const ConstraintVerdict v = evaluate_trajectory(traj, obstacles, clock + dt, dt);
        const double label = cfg.label_convention == LabelConvention::kMargin ? -v.min_margin : v.mean_penalty;
        features.row(static_cast<Eigen::Index>(row)) = features_from_rollout(s, plan).transpose();
        targets(static_cast<Eigen::Index>(row)) = label;
        violating += v.violated ? 1 : 0;
        break;
      }
    }
  }

  const auto order = seeded_permutation(n, root.child(~std::uint64_t{0}));
  GeneratedDataset out;
  out.data.features.resize(static_cast<Eigen::Index>(n), kFeatureDim);
  out.data.targets.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    out.data.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(order[i]));
    out.data.targets(static_cast<Eigen::Index>(i)) = targets(static_cast<Eigen::Index>(order[i]));
  }
  out.motion_counts = counts;
  out.label_mean = targets.mean();
  out.label_min = targets.minCoeff();
  out.label_max = targets.maxCoeff();
  out.violating_fraction = static_cast<double>(violating) / static_cast<double>(n);
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_dataset_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file " + path);
  for (int c = 0; c < kFeatureDim; ++c) out << 'f' << c << ',';
  out << "target\n";
  for (Eigen::Index r = 0; r < d.features.rows(); ++r) {
    for (int c = 0; c < kFeatureDim; ++c) out << format_double(d.features(r, c)) << ',';
    out << format_double(d.targets(r)) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing dataset file " + path);
}

class SchemaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file " + path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("dataset " + path + " is empty");
  constexpr std::size_t kWidth = kFeatureDim + 1;
  const auto header = split_csv_line(line);
  if (header.size() != kWidth) {
    throw SchemaError("dataset " + path + " has " + std::to_string(header.size()) + " columns, expected " +
                      std::to_string(kWidth));
  }
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != kWidth) {
      throw SchemaError("dataset " + path + " line " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " columns, expected " + std::to_string(kWidth));
    }
    std::vector<double> values(kWidth);
    for (std::size_t c = 0; c < kWidth; ++c) {
      try {
        values[c] = std::stod(cells[c]);
      } catch (const std::exception&) {
        throw SchemaError("dataset " + path + " line " + std::to_string(line_no) + ": bad number '" + cells[c] + "'");
      }
    }
    rows.push_back(std::move(values));
  }
  Dataset d;
  d.features.resize(static_cast<Eigen::Index>(rows.size()), kFeatureDim);
  d.targets.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int c = 0; c < kFeatureDim; ++c) d.features(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
    d.targets(static_cast<Eigen::Index>(r)) = rows[r][kFeatureDim];
  }
  return d;
}

// ---------------------------------------------------------------- sweeps

struct SweepRow {
  ControllerKind controller = ControllerKind::kClassicMppi;
  int num_samples = 0;
  std::uint64_t seed = 0;
  std::string scenario;
  int obstacle_count = 0;
  EpisodeMetrics metrics;
};

inline constexpr std::array<const char*, 9> kAggregatedMetrics{
    "sim_runtime",     "control_frequency", "avg_obstacle_distance", "final_target_distance", "mean_target_distance",
    "collision_events", "rejection_rate",   "reached_target",        "mean_feasibility"};

inline double metric_value(const EpisodeMetrics& m, const std::string& name) {
  if (name == "sim_runtime") return m.sim_runtime;
  if (name == "control_frequency") return m.control_frequency;
  if (name == "avg_obstacle_distance") return m.avg_obstacle_distance;
  if (name == "final_target_distance") return m.final_target_distance;
  if (name == "mean_target_distance") return m.mean_target_distance;
  if (name == "collision_events") return m.collision_events;
  if (name == "rejection_rate") return m.rejection_rate;
  if (name == "reached_target") return m.reached_target ? 1.0 : 0.0;
  if (name == "mean_feasibility") return m.mean_feasibility;
  if (name == "min_feasibility") return m.min_feasibility;
  throw std::invalid_argument("unknown metric '" + name + "'");
}

struct AggregateRow {
  ControllerKind controller = ControllerKind::kClassicMppi;
  int num_samples = 0;
  std::string scenario;
  int obstacle_count = 0;
  std::size_t episodes = 0;
  std::size_t failed = 0;
  std::map<std::string, double> mean;
  std::map<std::string, double> stddev;  // population standard deviation
};

/// Mean and population std per (controller, K, scenario); values are summed in sorted
/// order so the result does not depend on row order.
inline std::vector<AggregateRow> aggregate(std::span<const SweepRow> rows) {
  using Key = std::tuple<std::string, int, int, std::string>;
  std::map<Key, std::vector<const SweepRow*>> groups;
  for (const auto& r : rows) {
    groups[{to_string(r.controller), r.num_samples, r.obstacle_count, r.scenario}].push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (const auto& [key, members] : groups) {
    AggregateRow a;
    a.controller = members.front()->controller;
    a.num_samples = std::get<1>(key);
    a.obstacle_count = std::get<2>(key);
    a.scenario = std::get<3>(key);
    a.episodes = members.size();
    for (const auto* r : members) a.failed += r->metrics.failed ? 1 : 0;
    for (const char* name : kAggregatedMetrics) {
      std::vector<double> v;
      for (const auto* r : members) v.push_back(metric_value(r->metrics, name));
      std::sort(v.begin(), v.end());
      double sum = 0.0;
      for (double x : v) sum += x;
      const double mean = sum / static_cast<double>(v.size());
      std::vector<double> sq;
      for (double x : v) sq.push_back((x - mean) * (x - mean));
      std::sort(sq.begin(), sq.end());
      double ss = 0.0;
      for (double x : sq) ss += x;
      a.mean[name] = mean;
      a.stddev[name] = std::sqrt(ss / static_cast<double>(v.size()));
    }
    out.push_back(std::move(a));
  }
  return out;
}

/// Fraction of each controller's episodes with at least one collision event.
inline std::map<ControllerKind, double> collision_episode_fraction(std::span<const SweepRow> rows) {
  std::map<ControllerKind, std::pair<std::size_t, std::size_t>> counts;
  for (const auto& r : rows) {
    auto& [hit, total] = counts[r.controller];
    hit += r.metrics.collision_events > 0 ? 1 : 0;
    ++total;
  }
  std::map<ControllerKind, double> out;
  for (const auto& [c, n] : counts) out[c] = static_cast<double>(n.first) / static_cast<double>(n.second);
  return out;
}

struct SweepSpec {
  std::vector<int> k_values;
  std::size_t n_seeds = 1;
  std::vector<ControllerKind> controllers;
  bool randomize_scenarios = false;  // resample the scenario per seed
};

/// Runs controllers x K x seeds. Episode seed for index s is base.seed + s, shared by every
/// controller and K so comparisons use common random numbers. Failed episodes are recorded
/// and the sweep continues.
inline std::vector<SweepRow> run_sweep(const EpisodeConfig& base, const SweepSpec& spec,
                                       const std::function<void(const SweepRow&)>& on_row = {}) {
  for (int k : spec.k_values) {
    if (k < 1 || k > 100000) throw ConfigError("sweep: K must lie in [1, 100000]");
  }
  std::vector<SweepRow> rows;
  for (ControllerKind c : spec.controllers) {
    for (int k : spec.k_values) {
      for (std::size_t s = 0; s < spec.n_seeds; ++s) {
        EpisodeConfig cfg = base;
        cfg.controller = c;
        cfg.mppi.num_samples = k;
        cfg.mppi.rejection_epsilon.reset();
        cfg.seed = base.seed + s;
        if (spec.randomize_scenarios) cfg.scenario = randomize_scenario(base.scenario, cfg.seed);
        SweepRow row;
        row.controller = c;
        row.num_samples = k;
        row.seed = cfg.seed;
        row.scenario = cfg.scenario.name;
        row.obstacle_count = static_cast<int>(cfg.scenario.obstacles.size());
        try {
          row.metrics = run_episode(cfg).metrics;
        } catch (const std::exception& e) {
          row.metrics.failed = true;
          row.metrics.failure = e.what();
        }
        if (on_row) on_row(row);
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

inline const std::vector<std::string>& metrics_csv_header() {
  static const std::vector<std::string> h{
      "controller",          "k",                    "seed",           "scenario",
      "obstacle_count",      "sim_runtime",          "control_frequency", "avg_obstacle_distance",
      "final_target_distance", "mean_target_distance", "collision_events", "rejection_rate",
      "reached_target",      "mean_feasibility",     "min_feasibility", "steps",
      "failed"};
  return h;
}

inline std::string metrics_csv_row(const SweepRow& r) {
  const auto& m = r.metrics;
  std::ostringstream o;
  o << to_string(r.controller) << ',' << r.num_samples << ',' << r.seed << ',' << r.scenario << ','
    << r.obstacle_count << ',' << format_double(m.sim_runtime) << ',' << format_double(m.control_frequency) << ','
    << format_double(m.avg_obstacle_distance) << ',' << format_double(m.final_target_distance) << ','
    << format_double(m.mean_target_distance) << ',' << m.collision_events << ',' << format_double(m.rejection_rate)
    << ',' << (m.reached_target ? 1 : 0) << ',' << format_double(m.mean_feasibility) << ','
    << format_double(m.min_feasibility) << ',' << m.steps << ',' << (m.failed ? 1 : 0);
  return o.str();
}

inline std::string join(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    s += cells[i];
  }
  return s;
}

inline void write_metrics_csv(std::span<const SweepRow> rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics file " + path);
  out << join(metrics_csv_header()) << '\n';
  for (const auto& r : rows) out << metrics_csv_row(r) << '\n';
}

inline std::vector<SweepRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != metrics_csv_header()) {
    throw SchemaError("metrics file " + path + " does not have the expected header");
  }
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != metrics_csv_header().size()) throw SchemaError("metrics file " + path + ": bad row width");
    SweepRow r;
    r.controller = controller_from_string(c[0]);
    r.num_samples = std::stoi(c[1]);
    r.seed = std::stoull(c[2]);
    r.scenario = c[3];
    r.obstacle_count = std::stoi(c[4]);
    auto& m = r.metrics;
    m.sim_runtime = std::stod(c[5]);
    m.control_frequency = std::stod(c[6]);
    m.avg_obstacle_distance = std::stod(c[7]);
    m.final_target_distance = std::stod(c[8]);
    m.mean_target_distance = std::stod(c[9]);
    m.collision_events = std::stoi(c[10]);
    m.rejection_rate = std::stod(c[11]);
    m.reached_target = c[12] == "1";
    m.mean_feasibility = std::stod(c[13]);
    m.min_feasibility = std::stod(c[14]);
    m.steps = std::stoi(c[15]);
    m.failed = c[16] == "1";
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_aggregate_csv(std::span<const AggregateRow> rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write aggregate file " + path);
  out << "controller,k,scenario,obstacle_count,episodes,failed";
  for (const char* name : kAggregatedMetrics) out << ',' << name << "_mean," << name << "_std";
  out << '\n';
  for (const auto& a : rows) {
    out << to_string(a.controller) << ',' << a.num_samples << ',' << a.scenario << ',' << a.obstacle_count << ','
        << a.episodes << ',' << a.failed;
    for (const char* name : kAggregatedMetrics) {
      out << ',' << format_double(a.mean.at(name)) << ',' << format_double(a.stddev.at(name));
    }
    out << '\n';
  }
}

inline void write_trace_csv(std::span<const TraceEntry> trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file " + path);
  out << "clock,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,u0,u1,u2,u3\n";
  for (const auto& e : trace) {
    out << format_double(e.clock);
    const StateVector v = e.state.to_vector();
    for (int i = 0; i < kStateDim; ++i) out << ',' << format_double(v(i));
    for (int r = 0; r < kNumRotors; ++r) out << ',' << format_double(e.input.rotor_thrusts(r));
    out << '\n';
  }
}

/// One row per sample per step: step, sample, J, mu, w, mu_tilde, omega, rejected.
inline void write_diagnostics_csv(const std::vector<std::vector<RolloutEvaluation>>& steps, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write diagnostics file " + path);
  out << "step,sample,cost,mu,w,mu_tilde,omega,rejected\n";
  for (std::size_t i = 0; i < steps.size(); ++i) {
    for (std::size_t k = 0; k < steps[i].size(); ++k) {
      const auto& e = steps[i][k];
      out << i << ',' << k << ',' << format_double(e.cost) << ',' << format_double(e.raw_weight) << ','
          << format_double(e.feasibility) << ',' << format_double(e.modulated_weight) << ','
          << format_double(e.normalized_weight) << ',' << (e.rejected ? 1 : 0) << '\n';
    }
  }
}

}  // namespace bcmppi
