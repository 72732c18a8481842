#pragma once

#include "cil/cartpole.hpp"
#include "cil/sparse_solver.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace cil {

/// Binary logistic behavior clone: P(action 1 | phi) = sigmoid(w . phi + b).
struct BcModel {
  Eigen::VectorXd weights;
  double bias = 0.0;

  double logit(const Eigen::VectorXd& phi) const { return weights.dot(phi) + bias; }
};

/// Full-batch gradient descent on
///
///   sum_i logloss(w . phi_i + b, a_i) + l2/2 * |w|^2
///
/// (the C = 1/l2 convention of common logistic-regression libraries, so the
/// prior weakens relative to the data as the sample grows). The step is
/// learning_rate / L with L the gradient Lipschitz constant, estimated by
/// power iteration from a vector drawn with `seed`.
struct BcConfig {
  int epochs = 3000;
  double learning_rate = 1.0;
  double l2 = 1.0;
  std::uint64_t seed = 0;
};

struct BcTrainResult {
  BcModel model;
  /// Objective before the first epoch and after each epoch.
  std::vector<double> loss_trace;
};

/// Throws std::invalid_argument for an empty demo list or mismatched
/// dimensions. Single-class data gives a constant classifier and a warning.
BcTrainResult train_bc(std::span<const ActionDemo<double>> demos, const BcConfig& config);

/// Summed log-loss plus l2/2 * |w|^2.
double bc_loss(const BcModel& model, std::span<const ActionDemo<double>> demos, double l2);

/// Action 1 iff the logit is positive.
inline Action bc_action(const BcModel& model, const Eigen::VectorXd& phi) {
  return model.logit(phi) > 0.0 ? Action::kRight : Action::kLeft;
}

}  // namespace cil
