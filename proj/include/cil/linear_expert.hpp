#pragma once

#include "cil/cartpole.hpp"
#include "cil/featurizer.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

namespace cil {

/// Per-action weight vectors of a linear Q-function Q(s, a) = w_a . phi(s).
struct WeightStack {
  Eigen::VectorXd w0;
  Eigen::VectorXd w1;

  static WeightStack zeros(Eigen::Index dimension) {
    return {Eigen::VectorXd::Zero(dimension), Eigen::VectorXd::Zero(dimension)};
  }
  /// Split x = [w0; w1]. Throws if x has odd length.
  static WeightStack from_stacked(const Eigen::VectorXd& x);

  Eigen::VectorXd stacked() const;
  Eigen::Index dimension() const { return w0.size(); }
  const Eigen::VectorXd& operator[](Action a) const { return a == Action::kLeft ? w0 : w1; }
  Eigen::VectorXd& operator[](Action a) { return a == Action::kLeft ? w0 : w1; }
  bool all_finite() const { return w0.allFinite() && w1.allFinite(); }

  friend bool operator==(const WeightStack&, const WeightStack&) = default;
};

/// [w0 . phi, w1 . phi]. Throws std::invalid_argument on dimension mismatch.
Eigen::Vector2d q_values(const WeightStack& w, const Eigen::VectorXd& phi);

/// Argmax over two Q-values; ties go to action 0.
inline Action greedy_action(const Eigen::Vector2d& q) {
  return q[1] > q[0] ? Action::kRight : Action::kLeft;
}
inline Action greedy_action(const WeightStack& w, const Eigen::VectorXd& phi) {
  return greedy_action(q_values(w, phi));
}

/// Greedy policy of a linear Q-function; the featurizer is copied in.
Policy make_greedy_policy(WeightStack w, Featurizer featurizer);

struct QLearningConfig {
  int episodes = 10000;
  double learning_rate = 0.01;
  double discount = 0.99;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  int epsilon_decay_episodes = 5000;
  std::uint64_t seed = 0;
  /// Return the weights held when the trailing-100 training reward peaked
  /// (latest peak wins) instead of the final weights.
  bool keep_best = true;

  void validate() const;
  /// Linear decay from epsilon_start to epsilon_end, then flat.
  double epsilon_at(int episode) const;
};

/// One semi-gradient Q-learning update on the taken action's weights.
/// `next_phi` is empty for a terminal successor (no bootstrap).
void td_update(WeightStack& w, const Eigen::VectorXd& phi, Action action, double reward,
               const std::optional<Eigen::VectorXd>& next_phi, double learning_rate, double discount);

struct QLearningResult {
  /// Best-window snapshot, or the final weights when keep_best is off.
  WeightStack weights;
  WeightStack final_weights;
  std::vector<double> episode_rewards;
  /// Highest trailing-100 training reward and the episode it ended on.
  double best_trailing_reward = 0;
  int best_episode = -1;
};

/// Semi-gradient one-step Q-learning with epsilon-greedy exploration from a
/// zero initialization. Episodes cut by the step limit still bootstrap.
/// Late collapses are common with linear Q-learning, hence keep_best.
///
/// Throws std::runtime_error if any weight exceeds 1e6 in magnitude.
QLearningResult train_linear_expert(const Featurizer& featurizer, const QLearningConfig& config);

/// Mean of the last `window` entries (or of all, when fewer).
double trailing_mean(const std::vector<double>& values, std::size_t window = 100);

}  // namespace cil
