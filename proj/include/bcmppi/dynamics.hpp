// Rigid-body quadrotor model with fixed-step RK4 integration.
//
// Conventions: quaternions are scalar-first Hamilton quaternions rotating
// body vectors into the world frame; linear velocity lives in the world
// frame, angular velocity in the body frame. Rotors sit in an X layout:
//
//        x (front)
//    0 CCW    3 CW
//        +-->
//    1 CW     2 CCW
//
// rotor 0 front-left, 1 back-left, 2 back-right, 3 front-right.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace bcmppi {

inline constexpr int kStateDim = 13;
inline constexpr int kNumRotors = 4;

using Vec3 = Eigen::Vector3d;
using StateVector = Eigen::Matrix<double, kStateDim, 1>;
using StateDerivative = StateVector;
using Thrusts = Eigen::Vector4d;

class DivergedStateError : public std::runtime_error {
 public:
  explicit DivergedStateError(const std::string& what)
      : std::runtime_error("diverged state: " + what) {}
};

struct QuadrotorParams {
  double mass = 0.8;
  Vec3 inertia_diagonal{5e-3, 5e-3, 9e-3};
  double arm_length = 0.17;
  double rotor_torque_coefficient = 0.016;
  double gravity = 9.81;
  double u_max = 6.0;

  double hover_thrust() const { return mass * gravity / kNumRotors; }

  void validate() const {
    if (!(mass > 0 && arm_length > 0 && rotor_torque_coefficient > 0 && gravity > 0 &&
          u_max > 0 && (inertia_diagonal.array() > 0).all())) {
      throw std::invalid_argument("quadrotor parameters must be strictly positive");
    }
    if (hover_thrust() > u_max) {
      throw std::invalid_argument("u_max is below the hover thrust");
    }
  }
};

struct ControlInput {
  Thrusts rotor_thrusts = Thrusts::Zero();

  static ControlInput hover(const QuadrotorParams& params) {
    return {Thrusts::Constant(params.hover_thrust())};
  }

  ControlInput clamped(double u_max) const {
    return {rotor_thrusts.cwiseMax(0.0).cwiseMin(u_max)};
  }
};

struct State {
  Vec3 position = Vec3::Zero();
  Eigen::Quaterniond attitude = Eigen::Quaterniond::Identity();
  Vec3 linear_velocity = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();

  static State hover_at(const Vec3& p) {
    State s;
    s.position = p;
    return s;
  }

  /// Layout: position(3), quaternion w,x,y,z (4), linear velocity(3), body rate(3).
  StateVector to_vector() const {
    StateVector v;
    v.segment<3>(0) = position;
    v(3) = attitude.w();
    v(4) = attitude.x();
    v(5) = attitude.y();
    v(6) = attitude.z();
    v.segment<3>(7) = linear_velocity;
    v.segment<3>(10) = angular_velocity;
    return v;
  }

  static State from_vector(const StateVector& v) {
    State s;
    s.position = v.segment<3>(0);
    s.attitude = Eigen::Quaterniond(v(3), v(4), v(5), v(6));
    s.linear_velocity = v.segment<3>(7);
    s.angular_velocity = v.segment<3>(10);
    return s;
  }

  bool operator==(const State& o) const { return to_vector() == o.to_vector(); }
};

inline constexpr double kDivergenceBound = 1e6;

inline void check_finite(const StateVector& v, const char* where) {
  for (int i = 0; i < kStateDim; ++i) {
    if (!std::isfinite(v(i)) || std::abs(v(i)) > kDivergenceBound) {
      throw DivergedStateError(std::string(where) + " component " + std::to_string(i) + " = " +
                               std::to_string(v(i)));
    }
  }
}

/// Body-frame torques produced by the four rotor thrusts (X layout, see file header).
inline Vec3 mix_torques(const Thrusts& t, const QuadrotorParams& params) {
  const double d = params.arm_length / std::sqrt(2.0);
  const double k = params.rotor_torque_coefficient;
  return {d * (t(0) + t(1) - t(2) - t(3)),
          d * (-t(0) + t(1) + t(2) - t(3)),
          k * (-t(0) + t(1) - t(2) + t(3))};
}

/// Continuous-time Newton-Euler right-hand side. Thrusts are expected to be clamped already.
inline StateDerivative derivative(const StateVector& x, const ControlInput& input,
                                  const QuadrotorParams& params) {
  const Eigen::Quaterniond q(x(3), x(4), x(5), x(6));
  const Vec3 v = x.segment<3>(7);
  const Vec3 w = x.segment<3>(10);
  const Thrusts& t = input.rotor_thrusts;

  StateDerivative dx;
  dx.segment<3>(0) = v;

  const Vec3 body_force(0.0, 0.0, t.sum());
  dx.segment<3>(7) = q._transformVector(body_force) / params.mass + Vec3(0.0, 0.0, -params.gravity);

  // q_dot = 0.5 * q (x) [0, w]
  dx(3) = 0.5 * (-q.x() * w.x() - q.y() * w.y() - q.z() * w.z());
  dx(4) = 0.5 * (q.w() * w.x() + q.y() * w.z() - q.z() * w.y());
  dx(5) = 0.5 * (q.w() * w.y() - q.x() * w.z() + q.z() * w.x());
  dx(6) = 0.5 * (q.w() * w.z() + q.x() * w.y() - q.y() * w.x());

  const Vec3& inertia = params.inertia_diagonal;
  const Vec3 torque = mix_torques(t, params);
  const Vec3 gyroscopic = w.cross(inertia.cwiseProduct(w));
  dx.segment<3>(10) = (torque - gyroscopic).cwiseQuotient(inertia);

  check_finite(dx, "derivative");
  return dx;
}

inline StateDerivative derivative(const State& state, const ControlInput& input,
                                  const QuadrotorParams& params) {
  return derivative(state.to_vector(), input, params);
}

/// One classical RK4 step; thrusts are clamped to [0, u_max] and the quaternion is
/// renormalized once at the end.
inline State step(const State& state, const ControlInput& input, double dt,
                  const QuadrotorParams& params) {
  if (!(dt > 0)) throw std::invalid_argument("integration step must be positive");
  const ControlInput u = input.clamped(params.u_max);
  const StateVector x = state.to_vector();

  const StateDerivative k1 = derivative(x, u, params);
  const StateDerivative k2 = derivative(StateVector(x + 0.5 * dt * k1), u, params);
  const StateDerivative k3 = derivative(StateVector(x + 0.5 * dt * k2), u, params);
  const StateDerivative k4 = derivative(StateVector(x + dt * k3), u, params);

  StateVector next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  const double qn = next.segment<4>(3).norm();
  if (!(qn > 0) || !std::isfinite(qn)) throw DivergedStateError("degenerate quaternion");
  next.segment<4>(3) /= qn;
  check_finite(next, "step");
  return State::from_vector(next);
}

}  // namespace bcmppi
