#include "cil/cartpole.hpp"

#include "cil/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cil {

Action action_from_index(int index) {
  if (index != 0 && index != 1) {
    throw std::invalid_argument("action index must be 0 or 1, got " + std::to_string(index));
  }
  return static_cast<Action>(index);
}

State reset(std::uint64_t seed) {
  Rng rng(seed);
  State s;
  for (int i = 0; i < 4; ++i) {
    s[i] = rng.uniform(-cartpole::kResetHalfWidth, cartpole::kResetHalfWidth);
  }
  return s;
}

bool out_of_bounds(const State& state) {
  return std::abs(state[state_index::kPosition]) > cartpole::kPositionLimit ||
         std::abs(state[state_index::kAngle]) > cartpole::kAngleLimit;
}

StepResult step(const State& state, Action action, int elapsed_steps) {
  using namespace cartpole;
  if (!state.allFinite()) {
    throw std::invalid_argument("cartpole step: state has non-finite components");
  }
  const double x = state[state_index::kPosition];
  const double x_dot = state[state_index::kVelocity];
  const double theta = state[state_index::kAngle];
  const double theta_dot = state[state_index::kAngularVelocity];

  const double force = action == Action::kRight ? kForce : -kForce;
  const double cos_theta = std::cos(theta);
  const double sin_theta = std::sin(theta);

  const double temp = (force + kPoleMassLength * theta_dot * theta_dot * sin_theta) / kTotalMass;
  const double theta_acc = (kGravity * sin_theta - cos_theta * temp) /
                           (kPoleHalfLength * (4.0 / 3.0 - kPoleMass * cos_theta * cos_theta / kTotalMass));
  const double x_acc = temp - kPoleMassLength * theta_acc * cos_theta / kTotalMass;

  StepResult result;
  result.next_state << x + kTau * x_dot, x_dot + kTau * x_acc, theta + kTau * theta_dot,
      theta_dot + kTau * theta_acc;
  const bool failed = out_of_bounds(result.next_state);
  const bool exhausted = elapsed_steps + 1 >= kMaxSteps;
  result.done = failed || exhausted;
  result.truncated = exhausted && !failed;
  result.reward = 1.0;
  return result;
}

const State& CartPole::reset(std::uint64_t seed) {
  state_ = cil::reset(seed);
  elapsed_ = 0;
  done_ = false;
  return state_;
}

StepResult CartPole::step(Action action) {
  if (done_) throw std::logic_error("CartPole::step called on a finished episode");
  StepResult result = cil::step(state_, action, elapsed_);
  state_ = result.next_state;
  ++elapsed_;
  done_ = result.done;
  return result;
}

}  // namespace cil
