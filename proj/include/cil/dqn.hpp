#pragma once

#include "cil/cartpole.hpp"
#include "cil/rng.hpp"
#include "cil/sparse_solver.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace cil {

/// Fully connected layer y = W x + b.
struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

enum class Mode { kTrain, kEval };

/// Rectifier MLP with a wide, dropout-trained penultimate layer and a
/// bias-free linear head:
///
///   Q(s) = head * dropout(relu(... relu(W_1 s + b_1) ...))
///
/// The head has one row per action, so with x = [head.row(0), head.row(1)]
/// the network output is linear in x for fixed body weights.
struct QNetwork {
  /// Fixed (untrained) per-component input scaling applied before layer 1.
  State input_scale = State::Ones();
  std::vector<DenseLayer> body;
  Eigen::MatrixXd head;  // 2 x width
  double dropout_rate = 0.5;

  Eigen::Index width() const { return head.cols(); }
  /// Throws std::invalid_argument if layer shapes do not chain.
  void validate() const;

  /// Head as the stacked vector [w0; w1].
  Eigen::VectorXd head_stacked() const;
  void set_head_stacked(const Eigen::VectorXd& x);

  friend bool operator==(const QNetwork&, const QNetwork&) = default;
};

struct NetworkShape {
  std::vector<int> hidden = {64, 64, 512};
  double dropout_rate = 0.5;
  /// Inputs are divided by these (the termination box and a velocity scale).
  State input_range = (State() << 2.4, 3.0, 0.21, 3.0).finished();
};

/// He-uniform body weights, zero biases, small uniform head, all from Rng(seed).
QNetwork make_network(const NetworkShape& shape, std::uint64_t seed);

/// Q-values for both actions. In train mode each penultimate activation is
/// zeroed with probability dropout_rate (survivors scaled by 1/(1-rate)),
/// drawing from `dropout_rng`, which is then required.
Eigen::Vector2d forward(const QNetwork& net, const State& state, Mode mode = Mode::kEval,
                        Rng* dropout_rng = nullptr);

/// Eval-mode activations feeding the head.
Eigen::VectorXd penultimate_features(const QNetwork& net, const State& state);

inline Action greedy_action(const QNetwork& net, const State& state) {
  const Eigen::Vector2d q = forward(net, state);
  return q[1] > q[0] ? Action::kRight : Action::kLeft;
}

/// The network's greedy policy; the network is copied in.
Policy make_greedy_policy(QNetwork net);

// ---------------------------------------------------------------------------
// Training

/// Minibatch of transitions, one column per sample.
struct TransitionBatch {
  Eigen::Matrix<double, 4, Eigen::Dynamic> states;
  std::vector<Action> actions;
};

/// Gradient with the same layout as a QNetwork.
struct NetworkGradient {
  std::vector<DenseLayer> body;
  Eigen::MatrixXd head;
};

/// Mean squared TD error (1/B) sum_j (Q(s_j, a_j) - target_j)^2 and its
/// gradient. `dropout_mask` (width x B, entries 0 or 1/(1-rate)) is applied
/// to the penultimate activations when present; otherwise the pass is
/// evaluated in eval mode.
double td_loss(const QNetwork& net, const TransitionBatch& batch, const Eigen::VectorXd& targets,
               const Eigen::MatrixXd* dropout_mask, NetworkGradient* gradient);

/// Bernoulli keep-mask for the penultimate layer, already scaled.
Eigen::MatrixXd sample_dropout_mask(Eigen::Index width, Eigen::Index batch, double rate, Rng& rng);

struct DqnTrainConfig {
  /// Gradient steps; one environment step is taken per iteration.
  int iterations = 20000;
  int batch_size = 64;
  int replay_capacity = 20000;
  /// Environment steps collected before the first gradient step.
  int warmup = 256;
  double learning_rate = 3e-4;
  double discount = 0.99;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  int epsilon_decay_iterations = 10000;
  int target_refresh = 500;
  /// Greedy episodes run at every target refresh; the network with the best
  /// check score is returned. 0 returns the final network.
  int check_episodes = 5;
  NetworkShape shape;
  std::uint64_t seed = 0;

  void validate() const;
  double epsilon_at(int iteration) const;
};

struct DqnTrainResult {
  QNetwork network;
  std::vector<double> episode_rewards;
  /// Best mean greedy check reward, and the iteration it was measured at
  /// (-1 when no check ran).
  double best_check_reward = 0;
  int best_iteration = -1;
};

/// Standard DQN: ring-buffer replay, epsilon-greedy behaviour, target network
/// refreshed every `target_refresh` steps, squared TD error, Adam updates,
/// dropout on the penultimate layer during updates. Episodes cut by the
/// step limit still bootstrap.
///
/// Throws std::runtime_error if any parameter exceeds 1e6 in magnitude.
DqnTrainResult train_dqn(const DqnTrainConfig& config);

/// Same loop starting from an existing network (used for interleaved boosts).
DqnTrainResult continue_dqn(QNetwork network, const DqnTrainConfig& config);

// ---------------------------------------------------------------------------
// Compressed-sensing boost of the head

enum class HeadObjective { kL1, kNuclear };

struct BoostSettings {
  HeadObjective objective = HeadObjective::kL1;
  double epsilon = 0.1;
  double lambda = 1.0;
  SolverConfig solver;
};

struct BoostResult {
  QNetwork network;
  SolveReport<double> report;
};

/// Re-solve the head from demonstrations: rows are built from the
/// penultimate features of each demo state, w_target is the current head,
/// and the solution is written into a copy of `net`. The body is untouched.
BoostResult cs_boost_last_layer(const QNetwork& net, std::span<const State> states, std::span<const Action> actions,
                                const BoostSettings& settings);

}  // namespace cil
