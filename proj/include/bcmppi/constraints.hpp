// Ground-truth obstacle constraints: scripted sphere motion, the L1 clearance
// margin, the step penalty, and per-trajectory verdicts.
#pragma once

#include "bcmppi/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcmppi {

enum class MotionType { kStationary, kCircular, kDiagonal, kSinusoidal };

inline const char* to_string(MotionType m) {
  switch (m) {
    case MotionType::kStationary: return "stationary";
    case MotionType::kCircular: return "circular";
    case MotionType::kDiagonal: return "diagonal";
    case MotionType::kSinusoidal: return "sinusoidal";
  }
  return "?";
}

inline MotionType motion_from_string(const std::string& s) {
  if (s == "stationary") return MotionType::kStationary;
  if (s == "circular") return MotionType::kCircular;
  if (s == "diagonal") return MotionType::kDiagonal;
  if (s == "sinusoidal") return MotionType::kSinusoidal;
  throw std::invalid_argument("unknown obstacle motion '" + s + "'");
}

inline constexpr double kViolationPenalty = 1e3;

struct Obstacle {
  MotionType motion = MotionType::kStationary;
  Vec3 anchor = Vec3::Zero();
  double amplitude = 0.5;        // m
  double angular_frequency = 0.5;  // rad/s
  Vec3 direction = Vec3::UnitX();  // unit vector (diagonal swing, sinusoidal drift)
  double phase = 0.0;            // rad
  double inflated_radius = 0.5;  // m
  double arena_half_width = 5.0;  // sinusoidal drift is clipped to [-w, w]^3

  void validate() const {
    if (!(inflated_radius > 0)) throw std::invalid_argument("obstacle radius must be positive");
    if (std::abs(direction.norm() - 1.0) > 1e-9) {
      throw std::invalid_argument("obstacle direction must be a unit vector");
    }
    if (!anchor.allFinite() || !std::isfinite(amplitude) || !std::isfinite(angular_frequency) ||
        !std::isfinite(phase) || !(arena_half_width > 0)) {
      throw std::invalid_argument("obstacle parameters must be finite");
    }
  }
};

inline Vec3 obstacle_position(const Obstacle& o, double t) {
  const double a = o.amplitude;
  const double arg = o.angular_frequency * t + o.phase;
  switch (o.motion) {
    case MotionType::kStationary:
      return o.anchor;
    case MotionType::kCircular:
      return o.anchor + a * Vec3(std::cos(arg), std::sin(arg), 0.0);
    case MotionType::kDiagonal:
      return o.anchor + a * std::sin(arg) * o.direction;
    case MotionType::kSinusoidal: {
      const Vec3 p = o.anchor + a * std::sin(arg) * Vec3::UnitZ() +
                     a * o.angular_frequency * t * o.direction;
      const double w = o.arena_half_width;
      return p.cwiseMax(Vec3::Constant(-w)).cwiseMin(Vec3::Constant(w));
    }
  }
  return o.anchor;
}

/// L1 distance between the two points minus the inflated radius; negative inside.
inline double l1_margin(const Vec3& robot, const Vec3& obstacle, double radius) {
  return (robot - obstacle).cwiseAbs().sum() - radius;
}

/// 1e3 for a strictly negative margin, 0 otherwise (D = 0 counts as feasible).
inline double penalty_term(double margin) { return margin < 0.0 ? kViolationPenalty : 0.0; }

struct ConstraintVerdict {
  double min_margin = std::numeric_limits<double>::infinity();
  double mean_margin = std::numeric_limits<double>::infinity();  // over steps and obstacles
  double mean_penalty = 0.0;
  bool violated = false;
};

/// Worst-obstacle L1 margin at one instant (+inf without obstacles).
inline double worst_margin(const Vec3& p, std::span<const Obstacle> obstacles, double t) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& o : obstacles) {
    m = std::min(m, l1_margin(p, obstacle_position(o, t), o.inflated_radius));
  }
  return m;
}

/// States are taken at t0, t0 + dt, ...; the per-step penalty uses the worst obstacle.
inline ConstraintVerdict evaluate_trajectory(std::span<const State> trajectory,
                                             std::span<const Obstacle> obstacles, double t0,
                                             double dt) {
  if (trajectory.empty()) throw std::invalid_argument("evaluate_trajectory: empty trajectory");
  ConstraintVerdict v;
  double penalty_sum = 0.0;
  double margin_sum = 0.0;
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    const double t = t0 + static_cast<double>(i) * dt;
    double step_min = std::numeric_limits<double>::infinity();
    for (const auto& o : obstacles) {
      const double d = l1_margin(trajectory[i].position, obstacle_position(o, t), o.inflated_radius);
      step_min = std::min(step_min, d);
      margin_sum += d;
    }
    v.min_margin = std::min(v.min_margin, step_min);
    penalty_sum += penalty_term(step_min);
  }
  const double n = static_cast<double>(trajectory.size());
  v.mean_penalty = penalty_sum / n;
  if (!obstacles.empty()) v.mean_margin = margin_sum / (n * static_cast<double>(obstacles.size()));
  v.violated = v.min_margin < 0.0;
  return v;
}

struct Clearance {
  double min_center_distance = std::numeric_limits<double>::infinity();
  std::vector<bool> inside;  // per obstacle: Euclidean distance < inflated radius
};

/// Euclidean check used for collision metrics on executed states.
inline Clearance euclidean_clearance(const Vec3& p, std::span<const Obstacle> obstacles, double t) {
  Clearance c;
  c.inside.resize(obstacles.size());
  for (std::size_t j = 0; j < obstacles.size(); ++j) {
    const double d = (p - obstacle_position(obstacles[j], t)).norm();
    c.min_center_distance = std::min(c.min_center_distance, d);
    c.inside[j] = d < obstacles[j].inflated_radius;
  }
  return c;
}

}  // namespace bcmppi
