#pragma once

#include "bcmppi/constraints.hpp"
#include "bcmppi/random.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcmppi {

/// Half-widths of the uniform resampling boxes; all zero means "no randomization".
struct ScenarioRandomization {
  Vec3 target_half_width = Vec3::Zero();
  Vec3 anchor_half_width = Vec3::Zero();
  double phase_half_width = 0.0;

  bool active() const {
    return !target_half_width.isZero(0) || !anchor_half_width.isZero(0) || phase_half_width != 0.0;
  }
};

struct Scenario {
  std::string name = "unnamed";
  std::vector<Obstacle> obstacles;
  Vec3 start{0.0, 0.0, 2.0};
  Vec3 target{4.0, 0.0, 2.0};
  double duration = 15.0;
  ScenarioRandomization randomization;

  void validate() const {
    if (!(duration > 0)) throw std::invalid_argument("scenario duration must be positive");
    if (!start.allFinite() || !target.allFinite()) throw std::invalid_argument("scenario start/target must be finite");
    if ((randomization.target_half_width.array() < 0).any() ||
        (randomization.anchor_half_width.array() < 0).any() || randomization.phase_half_width < 0) {
      throw std::invalid_argument("scenario randomization widths must be non-negative");
    }
    for (const auto& o : obstacles) o.validate();
  }

  bool moving() const {
    for (const auto& o : obstacles) {
      if (o.motion != MotionType::kStationary) return true;
    }
    return false;
  }
};

/// Resamples the target and every obstacle anchor/phase uniformly inside the template's
/// randomization boxes. Obstacle count and motion types are preserved.
inline Scenario randomize_scenario(const Scenario& tmpl, std::uint64_t seed) {
  Scenario s = tmpl;
  const RandomStream root(seed);
  auto rng = root.child(0).engine();
  const auto& r = tmpl.randomization;
  for (int a = 0; a < 3; ++a) {
    s.target(a) = uniform(rng, tmpl.target(a) - r.target_half_width(a), tmpl.target(a) + r.target_half_width(a));
  }
  for (std::size_t j = 0; j < s.obstacles.size(); ++j) {
    auto orng = root.child(1 + j).engine();
    auto& o = s.obstacles[j];
    const auto& t = tmpl.obstacles[j];
    for (int a = 0; a < 3; ++a) {
      o.anchor(a) = uniform(orng, t.anchor(a) - r.anchor_half_width(a), t.anchor(a) + r.anchor_half_width(a));
    }
    o.phase = uniform(orng, t.phase - r.phase_half_width, t.phase + r.phase_half_width);
  }
  return s;
}

// ---------------------------------------------------------------- built-in layouts

/// Obstacles spread along the start-target corridor with a fixed, seed-determined
/// layout. Moving layouts cycle circular, diagonal, circular, diagonal, sinusoidal.
inline Scenario corridor_scenario(int count, bool moving, std::uint64_t layout_seed = 7) {
  if (count < 0) throw std::invalid_argument("obstacle count must be non-negative");
  Scenario s;
  s.name = std::string(moving ? "moving" : "stationary") + "_" + std::to_string(count);
  auto rng = RandomStream(layout_seed).child(static_cast<std::uint64_t>(count)).engine();
  static constexpr MotionType kCycle[] = {MotionType::kCircular, MotionType::kDiagonal, MotionType::kCircular,
                                          MotionType::kDiagonal, MotionType::kSinusoidal};
  for (int j = 0; j < count; ++j) {
    Obstacle o;
    const double x = count == 1 ? 2.0 : 0.9 + 2.1 * j / (count - 1);
    o.anchor = Vec3(x, uniform(rng, -0.6, 0.6), 2.0 + uniform(rng, -0.4, 0.4));
    o.inflated_radius = uniform(rng, 0.35, 0.45);
    if (moving) {
      o.motion = kCycle[j % 5];
      o.phase = uniform(rng, 0.0, 2.0 * M_PI);
      o.direction = (o.motion == MotionType::kSinusoidal ? Vec3(0.0, 1.0, 0.0) : Vec3(0.0, 1.0, 1.0)).normalized();
      if (j % 2 == 1 && o.motion != MotionType::kSinusoidal) o.direction.y() = -o.direction.y();
    }
    s.obstacles.push_back(o);
  }
  return s;
}

// ---------------------------------------------------------------- JSON

namespace detail {

inline nlohmann::json vec3_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline Vec3 json_vec3(const nlohmann::json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("'" + key + "' must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("'" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw std::invalid_argument("unknown key '" + where + "." + key + "'");
  }
}

}  // namespace detail

inline nlohmann::json obstacle_to_json(const Obstacle& o) {
  return {{"motion", to_string(o.motion)},
          {"anchor", detail::vec3_json(o.anchor)},
          {"amplitude", o.amplitude},
          {"angular_frequency", o.angular_frequency},
          {"direction", detail::vec3_json(o.direction)},
          {"phase", o.phase},
          {"radius", o.inflated_radius},
          {"arena_half_width", o.arena_half_width}};
}

inline Obstacle obstacle_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"motion", "anchor", "amplitude", "angular_frequency", "direction", "phase",
                                  "radius", "arena_half_width"},
                              "obstacle");
  Obstacle o;
  o.motion = motion_from_string(j.value("motion", std::string("stationary")));
  o.anchor = detail::json_vec3(j.at("anchor"), "anchor");
  o.amplitude = j.value("amplitude", o.amplitude);
  o.angular_frequency = j.value("angular_frequency", o.angular_frequency);
  if (j.contains("direction")) o.direction = detail::json_vec3(j["direction"], "direction").normalized();
  o.phase = j.value("phase", o.phase);
  o.inflated_radius = j.at("radius").get<double>();
  o.arena_half_width = j.value("arena_half_width", o.arena_half_width);
  o.validate();
  return o;
}

inline nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json obstacles = nlohmann::json::array();
  for (const auto& o : s.obstacles) obstacles.push_back(obstacle_to_json(o));
  return {{"name", s.name},
          {"start", detail::vec3_json(s.start)},
          {"target", detail::vec3_json(s.target)},
          {"duration", s.duration},
          {"obstacles", obstacles},
          {"randomization",
           {{"target_half_width", detail::vec3_json(s.randomization.target_half_width)},
            {"anchor_half_width", detail::vec3_json(s.randomization.anchor_half_width)},
            {"phase_half_width", s.randomization.phase_half_width}}}};
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"name", "start", "target", "duration", "obstacles", "randomization"}, "scenario");
  Scenario s;
  s.name = j.value("name", s.name);
  if (j.contains("start")) s.start = detail::json_vec3(j["start"], "start");
  if (j.contains("target")) s.target = detail::json_vec3(j["target"], "target");
  s.duration = j.value("duration", s.duration);
  if (j.contains("obstacles")) {
    for (const auto& jo : j["obstacles"]) s.obstacles.push_back(obstacle_from_json(jo));
  }
  if (j.contains("randomization")) {
    const auto& r = j["randomization"];
    detail::reject_unknown_keys(r, {"target_half_width", "anchor_half_width", "phase_half_width"},
                                "scenario.randomization");
    if (r.contains("target_half_width")) {
      s.randomization.target_half_width = detail::json_vec3(r["target_half_width"], "target_half_width");
    }
    if (r.contains("anchor_half_width")) {
      s.randomization.anchor_half_width = detail::json_vec3(r["anchor_half_width"], "anchor_half_width");
    }
    s.randomization.phase_half_width = r.value("phase_half_width", 0.0);
  }
  s.validate();
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("scenario file " + path + " is not valid JSON: " + e.what());
  }
  return scenario_from_json(j);
}

}  // namespace bcmppi
