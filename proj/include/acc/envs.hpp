#pragma once

// Small deterministic continuous-control tasks.
//
// Each task separates its physical state from the observation fed to agents and
// only ends by timeout. The Episode wrapper counts steps and raises the timeout
// flag exactly at the step limit.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <variant>

#include <Eigen/Dense>

#include "acc/errors.hpp"
#include "acc/rng.hpp"

namespace acc {

struct EnvSpec {
  std::string id;
  int state_dim = 0;  // observation size seen by agents
  int action_dim = 0;
  Eigen::VectorXd action_low;
  Eigen::VectorXd action_high;
  int max_episode_steps = 1000;
  double reward_lower_bound = 0.0;  // per-step reward never goes below this
};

struct StepResult {
  Eigen::VectorXd next_state;
  double reward = 0.0;
  bool true_terminal = false;
  bool timeout = false;
};

inline double wrap_angle(double x) {
  constexpr double pi = std::numbers::pi;
  return std::remainder(x, 2.0 * pi);  // [-pi, pi]
}

/// Torque-limited pendulum, angle 0 is upright.
///   theta_ddot = 3g/(2l) sin(theta) + 3/(m l^2) u,  g = 10, m = 1, l = 1, dt = 0.05
/// Semi-implicit Euler (velocity first), |theta_dot| <= 8, |u| <= 2.
/// Reward -(wrap(theta)^2 + 0.1 theta_dot^2 + 0.001 u^2) on the pre-step state.
/// Reset: theta ~ U[-pi, pi], theta_dot ~ U[-1, 1]. Observation (cos, sin, theta_dot).
struct Pendulum {
  static constexpr double g = 10.0;
  static constexpr double mass = 1.0;
  static constexpr double length = 1.0;
  static constexpr double dt = 0.05;
  static constexpr double max_torque = 2.0;
  static constexpr double max_speed = 8.0;

  static EnvSpec spec() {
    constexpr double pi = std::numbers::pi;
    EnvSpec s;
    s.id = "pendulum";
    s.state_dim = 3;
    s.action_dim = 1;
    s.action_low = Eigen::VectorXd::Constant(1, -max_torque);
    s.action_high = Eigen::VectorXd::Constant(1, max_torque);
    s.max_episode_steps = 200;
    s.reward_lower_bound = -(pi * pi + 0.1 * max_speed * max_speed + 0.001 * max_torque * max_torque);
    return s;
  }

  static double angular_acceleration(double theta, double torque) {
    return 3.0 * g / (2.0 * length) * std::sin(theta) + 3.0 / (mass * length * length) * torque;
  }

  Eigen::VectorXd reset(Rng& rng) const {
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    std::uniform_real_distribution<double> speed(-1.0, 1.0);
    Eigen::VectorXd s(2);
    s(0) = angle(rng);
    s(1) = speed(rng);
    return s;
  }

  StepResult step(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const {
    const double theta = state(0);
    const double theta_dot = state(1);
    const double u = std::clamp(action(0), -max_torque, max_torque);
    const double th = wrap_angle(theta);
    StepResult out;
    out.reward = -(th * th + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
    const double new_dot = std::clamp(theta_dot + angular_acceleration(theta, u) * dt, -max_speed, max_speed);
    out.next_state.resize(2);
    out.next_state << theta + new_dot * dt, new_dot;
    return out;
  }

  Eigen::VectorXd observe(const Eigen::VectorXd& state) const {
    Eigen::VectorXd o(3);
    o << std::cos(state(0)), std::sin(state(0)), state(1);
    return o;
  }
};

/// 2-D double integrator steered to the origin.
/// State (px, py, vx, vy); v += u dt, p += v dt with dt = 0.1, |u_i| <= 1.
/// Positions stay in [-2, 2] (velocity into a wall is zeroed), speeds in [-2, 2].
/// Reward -|p|^2 - 0.01 |u|^2 on the pre-step state.
/// Reset: p ~ U[-1, 1]^2, v = 0. The observation is the state.
struct PointMass {
  static constexpr double dt = 0.1;
  static constexpr double max_force = 1.0;
  static constexpr double arena = 2.0;
  static constexpr double max_speed = 2.0;

  static EnvSpec spec() {
    EnvSpec s;
    s.id = "pointmass";
    s.state_dim = 4;
    s.action_dim = 2;
    s.action_low = Eigen::VectorXd::Constant(2, -max_force);
    s.action_high = Eigen::VectorXd::Constant(2, max_force);
    s.max_episode_steps = 1000;
    s.reward_lower_bound = -(2.0 * arena * arena + 0.01 * 2.0 * max_force * max_force);
    return s;
  }

  Eigen::VectorXd reset(Rng& rng) const {
    std::uniform_real_distribution<double> pos(-1.0, 1.0);
    Eigen::VectorXd s = Eigen::VectorXd::Zero(4);
    s(0) = pos(rng);
    s(1) = pos(rng);
    return s;
  }

  StepResult step(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const {
    StepResult out;
    const Eigen::Vector2d u = action.head<2>().cwiseMax(-max_force).cwiseMin(max_force);
    const Eigen::Vector2d p = state.head<2>();
    out.reward = -p.squaredNorm() - 0.01 * u.squaredNorm();
    out.next_state.resize(4);
    for (int i = 0; i < 2; ++i) {
      double v = std::clamp(state(2 + i) + u(i) * dt, -max_speed, max_speed);
      double x = p(i) + v * dt;
      if (x > arena || x < -arena) {
        x = std::clamp(x, -arena, arena);
        v = 0.0;
      }
      out.next_state(i) = x;
      out.next_state(2 + i) = v;
    }
    return out;
  }

  Eigen::VectorXd observe(const Eigen::VectorXd& state) const { return state; }
};

/// Registry entry: env id -> spec + dynamics.
class Environment {
 public:
  explicit Environment(const std::string& id, int max_episode_steps = 0) {
    if (id == "pendulum")
      impl_ = Pendulum{};
    else if (id == "pointmass")
      impl_ = PointMass{};
    else
      throw ConfigError("unknown environment '" + id + "' (expected pendulum | pointmass)");
    spec_ = std::visit([](const auto& e) { return e.spec(); }, impl_);
    if (max_episode_steps < 0) throw ConfigError("max episode steps must be positive");
    if (max_episode_steps > 0) spec_.max_episode_steps = max_episode_steps;
  }

  const EnvSpec& spec() const noexcept { return spec_; }

  Eigen::VectorXd reset(Rng& rng) const {
    return std::visit([&](const auto& e) { return e.reset(rng); }, impl_);
  }

  /// Pure in (state, action). Actions are clipped to the bounds.
  StepResult step(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const {
    if (action.size() != spec_.action_dim) throw ArgumentError("step: action dimension mismatch");
    auto r = std::visit([&](const auto& e) { return e.step(state, action); }, impl_);
    if (!r.next_state.allFinite() || !std::isfinite(r.reward)) throw EnvironmentFault(spec_.id + ": non-finite state");
    return r;
  }

  Eigen::VectorXd observe(const Eigen::VectorXd& state) const {
    return std::visit([&](const auto& e) { return e.observe(state); }, impl_);
  }

 private:
  std::variant<Pendulum, PointMass> impl_;
  EnvSpec spec_;
};

/// One running episode: tracks the physical state and step count, and reports
/// observations. `timeout` is raised exactly on the step that reaches the limit.
class Episode {
 public:
  explicit Episode(Environment env) : env_(std::move(env)) {}

  const Environment& env() const noexcept { return env_; }
  int steps() const noexcept { return t_; }
  bool done() const noexcept { return done_; }
  const Eigen::VectorXd& state() const noexcept { return state_; }

  Eigen::VectorXd reset(Rng& rng) {
    state_ = env_.reset(rng);
    t_ = 0;
    done_ = false;
    return env_.observe(state_);
  }

  /// next_state in the result is the next observation.
  StepResult step(const Eigen::VectorXd& action) {
    if (done_) throw UsageError("step on a finished episode; call reset()");
    StepResult r = env_.step(state_, action);
    state_ = r.next_state;
    ++t_;
    r.next_state = env_.observe(state_);
    r.timeout = !r.true_terminal && t_ >= env_.spec().max_episode_steps;
    done_ = r.true_terminal || r.timeout;
    return r;
  }

 private:
  Environment env_;
  Eigen::VectorXd state_;
  int t_ = 0;
  bool done_ = true;
};

}  // namespace acc
