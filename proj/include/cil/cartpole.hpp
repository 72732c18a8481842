#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>

namespace cil {

/// CartPole observation: (cart position, cart velocity, pole angle, pole
/// angular velocity) in SI units.
using State = Eigen::Vector4d;

namespace state_index {
inline constexpr int kPosition = 0;
inline constexpr int kVelocity = 1;
inline constexpr int kAngle = 2;
inline constexpr int kAngularVelocity = 3;
}  // namespace state_index

/// Push the cart left (-10 N) or right (+10 N).
enum class Action : int { kLeft = 0, kRight = 1 };

inline constexpr int to_index(Action a) { return static_cast<int>(a); }
Action action_from_index(int index);
inline constexpr Action opposite(Action a) {
  return a == Action::kLeft ? Action::kRight : Action::kLeft;
}

namespace cartpole {
inline constexpr double kGravity = 9.8;
inline constexpr double kCartMass = 1.0;
inline constexpr double kPoleMass = 0.1;
inline constexpr double kTotalMass = kCartMass + kPoleMass;
inline constexpr double kPoleHalfLength = 0.5;
inline constexpr double kPoleMassLength = kPoleMass * kPoleHalfLength;
inline constexpr double kForce = 10.0;
inline constexpr double kTau = 0.02;
inline constexpr double kPositionLimit = 2.4;
inline constexpr double kAngleLimit = 0.2095;
inline constexpr int kMaxSteps = 200;
inline constexpr double kResetHalfWidth = 0.05;
}  // namespace cartpole

struct StepResult {
  State next_state;
  double reward = 1.0;
  bool done = false;
  /// True when the episode ended only because the step budget ran out.
  bool truncated = false;
};

/// Initial state, uniform on [-0.05, 0.05]^4, drawn from Rng(seed).
State reset(std::uint64_t seed);

/// One explicit Euler step of the standard cart-pole equations. Positions are
/// advanced with the pre-update velocities. `elapsed_steps` is the number of
/// steps already taken in the episode and feeds the 200-step limit.
///
/// Throws std::invalid_argument on a non-finite state.
StepResult step(const State& state, Action action, int elapsed_steps = 0);

/// Position or angle outside the admissible box.
bool out_of_bounds(const State& state);

/// Stateful episode wrapper around reset/step.
class CartPole {
 public:
  const State& reset(std::uint64_t seed);
  /// Throws std::logic_error when called after the episode terminated.
  StepResult step(Action action);

  const State& state() const { return state_; }
  int elapsed_steps() const { return elapsed_; }
  bool done() const { return done_; }

 private:
  State state_ = State::Zero();
  int elapsed_ = 0;
  bool done_ = true;
};

using Policy = std::function<Action(const State&)>;

}  // namespace cil
