// Experiment configuration: one JSON document drives every CLI subcommand.
// Unknown keys are rejected, dotted overrides patch the document before parsing,
// and the effective (fully defaulted) document can be dumped and re-run.
#pragma once

#include "bcmppi/harness.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace bcmppi {

namespace fs = std::filesystem;

struct SweepGrid {
  std::vector<int> k_values{100, 500, 1500};
  std::size_t n_seeds = 5;
  std::vector<ControllerKind> controllers{ControllerKind::kClassicMppi, ControllerKind::kMppiPenalty,
                                          ControllerKind::kBcMppi};
  std::vector<std::string> scenarios;  // empty: the experiment's scenario
  bool randomize_scenarios = false;
  double violation_threshold = 0.01;  // reporting only: allowed fraction of episodes with a collision
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  std::string output_dir = "out";
  std::string scenario = "builtin:moving_5";
  QuadrotorParams quadrotor;
  MppiConfig mppi;
  CostSpec cost;
  ControllerKind controller = ControllerKind::kClassicMppi;
  double duration = 15.0;
  double penalty_shaping_weight = 0.0;
  double target_tolerance = 0.15;
  DatasetConfig dataset;
  std::string dataset_path;  // empty: <output_dir>/dataset.csv
  TrainingConfig training;
  std::string model_path;  // empty: <output_dir>/model.json
  SweepGrid sweep;

  fs::path output_root() const { return fs::path(output_dir); }
  fs::path resolved_dataset_path() const {
    return dataset_path.empty() ? output_root() / "dataset.csv" : fs::path(dataset_path);
  }
  fs::path resolved_model_path() const {
    return model_path.empty() ? output_root() / "model.json" : fs::path(model_path);
  }
};

// ---------------------------------------------------------------- scenario lookup

/// "builtin:<moving|stationary>_<count>" or a JSON scenario file.
inline Scenario resolve_scenario(const std::string& ref) {
  const std::string prefix = "builtin:";
  if (ref.rfind(prefix, 0) == 0) {
    const std::string name = ref.substr(prefix.size());
    const auto underscore = name.rfind('_');
    if (underscore == std::string::npos) throw ConfigError("bad built-in scenario '" + ref + "'");
    const std::string kind = name.substr(0, underscore);
    int count = -1;
    try {
      count = std::stoi(name.substr(underscore + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad built-in scenario '" + ref + "'");
    }
    if ((kind != "moving" && kind != "stationary") || count < 0) {
      throw ConfigError("bad built-in scenario '" + ref + "' (expected builtin:moving_N or builtin:stationary_N)");
    }
    return corridor_scenario(count, kind == "moving");
  }
  if (!fs::exists(ref)) throw ConfigError("scenario file not found: " + ref);
  try {
    return load_scenario(ref);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// ---------------------------------------------------------------- JSON <-> config

namespace detail {

inline nlohmann::json vec_json(const Eigen::Vector4d& v) { return {v(0), v(1), v(2), v(3)}; }

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void read_vec3(const nlohmann::json& j, const char* key, Vec3& out) {
  if (j.contains(key)) out = json_vec3(j.at(key), key);
}

inline std::array<double, 3> parse_mix(const nlohmann::json& j) {
  std::array<double, 3> mix{};
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    std::stringstream ss(s);
    std::string part;
    int i = 0;
    while (std::getline(ss, part, ':')) {
      if (i >= 3) throw ConfigError("dataset.mix must have three parts, got '" + s + "'");
      try {
        mix[static_cast<std::size_t>(i++)] = std::stod(part);
      } catch (const std::exception&) {
        throw ConfigError("dataset.mix: bad ratio '" + s + "'");
      }
    }
    if (i != 3) throw ConfigError("dataset.mix must have three parts, got '" + s + "'");
  } else if (j.is_array() && j.size() == 3) {
    for (std::size_t i = 0; i < 3; ++i) mix[i] = j[i].get<double>();
  } else {
    throw ConfigError("dataset.mix must be \"a:b:c\" or a 3-element array");
  }
  return mix;
}

}  // namespace detail

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  using detail::vec3_json;
  nlohmann::json controllers = nlohmann::json::array();
  for (auto k : c.sweep.controllers) controllers.push_back(to_string(k));
  nlohmann::json mppi = {{"num_samples", c.mppi.num_samples},
                         {"temperature", c.mppi.temperature},
                         {"sigma", detail::vec_json(c.mppi.sigma)},
                         {"horizon", c.mppi.horizon},
                         {"dt", c.mppi.dt}};
  mppi["rejection_epsilon"] = c.mppi.rejection_epsilon ? nlohmann::json(*c.mppi.rejection_epsilon) : nlohmann::json();
  return {
      {"seed", c.seed},
      {"workers", c.workers},
      {"output_dir", c.output_dir},
      {"scenario", c.scenario},
      {"quadrotor",
       {{"mass", c.quadrotor.mass},
        {"inertia_diagonal", vec3_json(c.quadrotor.inertia_diagonal)},
        {"arm_length", c.quadrotor.arm_length},
        {"rotor_torque_coefficient", c.quadrotor.rotor_torque_coefficient},
        {"gravity", c.quadrotor.gravity},
        {"u_max", c.quadrotor.u_max}}},
      {"mppi", mppi},
      {"cost",
       {{"position_weight", c.cost.position_weight},
        {"velocity_weight", c.cost.velocity_weight},
        {"control_weight", c.cost.control_weight},
        {"terminal_position_weight", c.cost.terminal_position_weight},
        {"angular_velocity_weight", c.cost.angular_velocity_weight},
        {"attitude_weight", c.cost.attitude_weight}}},
      {"episode",
       {{"controller", to_string(c.controller)},
        {"duration", c.duration},
        {"penalty_shaping_weight", c.penalty_shaping_weight},
        {"target_tolerance", c.target_tolerance}}},
      {"dataset",
       {{"path", c.dataset_path},
        {"n_rollouts", c.dataset.n_rollouts},
        {"mix", {c.dataset.mix[0], c.dataset.mix[1], c.dataset.mix[2]}},
        {"position_low", vec3_json(c.dataset.position_low)},
        {"position_high", vec3_json(c.dataset.position_high)},
        {"velocity_half_width", vec3_json(c.dataset.velocity_half_width)},
        {"attitude_half_angle", c.dataset.attitude_half_angle},
        {"angular_rate_half_width", c.dataset.angular_rate_half_width},
        {"plan_bias_sigma", c.dataset.plan_bias_sigma},
        {"plan_step_sigma", c.dataset.plan_step_sigma},
        {"clock_max", c.dataset.clock_max},
        {"label_convention", to_string(c.dataset.label_convention)}}},
      {"training",
       {{"members", c.training.members},
        {"hidden", c.training.hidden},
        {"epochs", c.training.epochs},
        {"batch_size", c.training.batch_size},
        {"learning_rate", c.training.learning_rate},
        {"momentum", c.training.momentum},
        {"weight_decay", c.training.weight_decay},
        {"input_group_penalty", c.training.input_group_penalty},
        {"train_fraction", c.training.train_fraction},
        {"penalty_threshold", c.training.penalty_threshold}}},
      {"surrogate", {{"model_path", c.model_path}}},
      {"sweep",
       {{"k_values", c.sweep.k_values},
        {"n_seeds", c.sweep.n_seeds},
        {"controllers", controllers},
        {"scenarios", c.sweep.scenarios},
        {"randomize_scenarios", c.sweep.randomize_scenarios},
        {"violation_threshold", c.sweep.violation_threshold}}},
  };
}

/// Strict parse: every key must be known; missing keys keep their defaults.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::read;
  using detail::read_vec3;
  using detail::reject_unknown_keys;
  ExperimentConfig c;
  try {
    reject_unknown_keys(j,
                        {"seed", "workers", "output_dir", "scenario", "quadrotor", "mppi", "cost", "episode",
                         "dataset", "training", "surrogate", "sweep"},
                        "config");
    read(j, "seed", c.seed);
    read(j, "workers", c.workers);
    read(j, "output_dir", c.output_dir);
    read(j, "scenario", c.scenario);

    if (j.contains("quadrotor")) {
      const auto& q = j["quadrotor"];
      reject_unknown_keys(q, {"mass", "inertia_diagonal", "arm_length", "rotor_torque_coefficient", "gravity", "u_max"},
                          "quadrotor");
      read(q, "mass", c.quadrotor.mass);
      read_vec3(q, "inertia_diagonal", c.quadrotor.inertia_diagonal);
      read(q, "arm_length", c.quadrotor.arm_length);
      read(q, "rotor_torque_coefficient", c.quadrotor.rotor_torque_coefficient);
      read(q, "gravity", c.quadrotor.gravity);
      read(q, "u_max", c.quadrotor.u_max);
    }
    if (j.contains("mppi")) {
      const auto& m = j["mppi"];
      reject_unknown_keys(m, {"num_samples", "temperature", "sigma", "horizon", "dt", "rejection_epsilon"}, "mppi");
      read(m, "num_samples", c.mppi.num_samples);
      read(m, "temperature", c.mppi.temperature);
      if (m.contains("sigma")) {
        const auto& s = m["sigma"];
        if (s.is_number()) {
          c.mppi.sigma.setConstant(s.get<double>());
        } else if (s.is_array() && s.size() == 4) {
          for (int i = 0; i < 4; ++i) c.mppi.sigma(i) = s[static_cast<std::size_t>(i)].get<double>();
        } else {
          throw ConfigError("mppi.sigma must be a number or a 4-element array");
        }
      }
      read(m, "horizon", c.mppi.horizon);
      read(m, "dt", c.mppi.dt);
      if (m.contains("rejection_epsilon") && !m["rejection_epsilon"].is_null()) {
        c.mppi.rejection_epsilon = m["rejection_epsilon"].get<double>();
      }
    }
    if (j.contains("cost")) {
      const auto& k = j["cost"];
      reject_unknown_keys(k,
                          {"position_weight", "velocity_weight", "control_weight", "terminal_position_weight",
                           "angular_velocity_weight", "attitude_weight"},
                          "cost");
      read(k, "position_weight", c.cost.position_weight);
      read(k, "velocity_weight", c.cost.velocity_weight);
      read(k, "control_weight", c.cost.control_weight);
      read(k, "terminal_position_weight", c.cost.terminal_position_weight);
      read(k, "angular_velocity_weight", c.cost.angular_velocity_weight);
      read(k, "attitude_weight", c.cost.attitude_weight);
    }
    if (j.contains("episode")) {
      const auto& e = j["episode"];
      reject_unknown_keys(e, {"controller", "duration", "penalty_shaping_weight", "target_tolerance"}, "episode");
      if (e.contains("controller")) c.controller = controller_from_string(e["controller"].get<std::string>());
      read(e, "duration", c.duration);
      read(e, "penalty_shaping_weight", c.penalty_shaping_weight);
      read(e, "target_tolerance", c.target_tolerance);
    }
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      reject_unknown_keys(d,
                          {"path", "n_rollouts", "mix", "position_low", "position_high", "velocity_half_width",
                           "attitude_half_angle", "angular_rate_half_width", "plan_bias_sigma", "plan_step_sigma",
                           "clock_max", "label_convention"},
                          "dataset");
      read(d, "path", c.dataset_path);
      if (d.contains("n_rollouts")) {
        const auto n = d["n_rollouts"].get<long long>();
        if (n < 1) throw ConfigError("dataset.n_rollouts must be >= 1");
        c.dataset.n_rollouts = static_cast<std::size_t>(n);
      }
      if (d.contains("mix")) c.dataset.mix = detail::parse_mix(d["mix"]);
      read_vec3(d, "position_low", c.dataset.position_low);
      read_vec3(d, "position_high", c.dataset.position_high);
      read_vec3(d, "velocity_half_width", c.dataset.velocity_half_width);
      read(d, "attitude_half_angle", c.dataset.attitude_half_angle);
      read(d, "angular_rate_half_width", c.dataset.angular_rate_half_width);
      read(d, "plan_bias_sigma", c.dataset.plan_bias_sigma);
      read(d, "plan_step_sigma", c.dataset.plan_step_sigma);
      read(d, "clock_max", c.dataset.clock_max);
      if (d.contains("label_convention")) {
        c.dataset.label_convention = label_convention_from_string(d["label_convention"].get<std::string>());
      }
    }
    if (j.contains("training")) {
      const auto& t = j["training"];
      reject_unknown_keys(t,
                          {"members", "hidden", "epochs", "batch_size", "learning_rate", "momentum", "weight_decay",
                           "input_group_penalty", "train_fraction", "penalty_threshold"},
                          "training");
      read(t, "members", c.training.members);
      read(t, "hidden", c.training.hidden);
      read(t, "epochs", c.training.epochs);
      read(t, "batch_size", c.training.batch_size);
      read(t, "learning_rate", c.training.learning_rate);
      read(t, "momentum", c.training.momentum);
      read(t, "weight_decay", c.training.weight_decay);
      read(t, "input_group_penalty", c.training.input_group_penalty);
      read(t, "train_fraction", c.training.train_fraction);
      read(t, "penalty_threshold", c.training.penalty_threshold);
    }
    if (j.contains("surrogate")) {
      const auto& s = j["surrogate"];
      reject_unknown_keys(s, {"model_path"}, "surrogate");
      read(s, "model_path", c.model_path);
    }
    if (j.contains("sweep")) {
      const auto& s = j["sweep"];
      reject_unknown_keys(s, {"k_values", "n_seeds", "controllers", "scenarios", "randomize_scenarios",
                                 "violation_threshold"}, "sweep");
      read(s, "k_values", c.sweep.k_values);
      read(s, "n_seeds", c.sweep.n_seeds);
      if (s.contains("controllers")) {
        c.sweep.controllers.clear();
        for (const auto& name : s["controllers"]) c.sweep.controllers.push_back(controller_from_string(name.get<std::string>()));
      }
      read(s, "scenarios", c.sweep.scenarios);
      read(s, "randomize_scenarios", c.sweep.randomize_scenarios);
      read(s, "violation_threshold", c.sweep.violation_threshold);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: wrong value type (") + e.what() + ")");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.training.label_convention = c.dataset.label_convention;
  if (c.workers < 1) throw ConfigError("workers must be >= 1");
  if (c.sweep.k_values.empty() || c.sweep.controllers.empty() || c.sweep.n_seeds < 1) {
    throw ConfigError("sweep grid must be non-empty");
  }
  if (!(c.sweep.violation_threshold >= 0 && c.sweep.violation_threshold <= 1)) {
    throw ConfigError("sweep.violation_threshold must lie in [0, 1]");
  }
  try {
    c.quadrotor.validate();
    c.mppi.validate();
    c.cost.validate();
    c.dataset.validate();
    c.training.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

/// Parses a command-line override value: JSON when it parses, a bare string otherwise.
inline nlohmann::json parse_override_value(const std::string& text) {
  auto parsed = nlohmann::json::parse(text, nullptr, false);
  if (parsed.is_discarded()) return text;
  return parsed;
}

/// Applies "a.b.c=value". Intermediate objects are created; the strict parse that follows
/// catches misspelled keys.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  nlohmann::json* node = &doc;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + path + "' has an empty component");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override key '" + path + "' descends into a non-object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = nlohmann::json::object();
  }
  if (!node->is_object()) throw ConfigError("override key '" + path + "' descends into a non-object");
  (*node)[parts.back()] = parse_override_value(assignment.substr(eq + 1));
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

/// Relative scenario paths are taken relative to the config file's directory.
inline void anchor_relative_paths(ExperimentConfig& c, const fs::path& config_dir) {
  auto anchor = [&](std::string& p) {
    if (p.empty() || p.rfind("builtin:", 0) == 0) return;
    const fs::path path(p);
    if (path.is_relative() && !fs::exists(path) && fs::exists(config_dir / path)) p = (config_dir / path).string();
  };
  anchor(c.scenario);
  for (auto& s : c.sweep.scenarios) anchor(s);
}

inline void write_json_file(const nlohmann::json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline EpisodeConfig episode_config(const ExperimentConfig& c, const Scenario& scenario) {
  EpisodeConfig e;
  e.scenario = scenario;
  e.controller = c.controller;
  e.mppi = c.mppi;
  e.cost = c.cost;
  e.params = c.quadrotor;
  e.duration = c.duration;
  e.seed = c.seed;
  e.penalty_shaping_weight = c.penalty_shaping_weight;
  e.target_tolerance = c.target_tolerance;
  e.workers = c.workers;
  return e;
}

}  // namespace bcmppi
