#include "cil/baselines.hpp"

#include "cil/rng.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace cil {
namespace {

double log1p_exp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double objective(const Eigen::VectorXd& logits, const Eigen::VectorXd& labels, const Eigen::VectorXd& w, double l2) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    total += labels[i] > 0.5 ? log1p_exp(-logits[i]) : log1p_exp(logits[i]);
  }
  return total + 0.5 * l2 * w.squaredNorm();
}

// Largest eigenvalue of X^T X for X = [features, 1].
double top_eigenvalue(const Eigen::MatrixXd& x, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd v(x.cols() + 1);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 1.0 + rng.uniform();
  v.normalize();
  double value = 0.0;
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd xv = x * v.head(x.cols()) + Eigen::VectorXd::Constant(x.rows(), v[x.cols()]);
    Eigen::VectorXd next(v.size());
    next.head(x.cols()) = x.transpose() * xv;
    next[x.cols()] = xv.sum();
    const double norm = next.norm();
    if (norm == 0.0) return 0.0;
    const double previous = value;
    value = norm;
    v = next / norm;
    if (std::abs(value - previous) <= 1e-6 * value) break;
  }
  return value;
}

}  // namespace

double bc_loss(const BcModel& model, std::span<const ActionDemo<double>> demos, double l2) {
  double total = 0.0;
  for (const auto& d : demos) {
    const double z = model.logit(d.phi);
    total += d.action == Action::kRight ? log1p_exp(-z) : log1p_exp(z);
  }
  return total + 0.5 * l2 * model.weights.squaredNorm();
}

BcTrainResult train_bc(std::span<const ActionDemo<double>> demos, const BcConfig& config) {
  if (demos.empty()) throw std::invalid_argument("train_bc: no demonstrations");
  if (config.epochs < 0 || !(config.learning_rate > 0.0) || !(config.l2 >= 0.0)) {
    throw std::invalid_argument("train_bc: invalid config");
  }
  const Eigen::Index n = demos.front().phi.size();
  const auto m = static_cast<Eigen::Index>(demos.size());
  Eigen::MatrixXd x(m, n);
  Eigen::VectorXd labels(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& d = demos[static_cast<std::size_t>(i)];
    if (d.phi.size() != n) throw std::invalid_argument("train_bc: inconsistent feature dimension");
    x.row(i) = d.phi.transpose();
    labels[i] = d.action == Action::kRight ? 1.0 : 0.0;
  }

  BcTrainResult result{{Eigen::VectorXd::Zero(n), 0.0}, {}};
  const double ones = labels.sum();
  if (ones == 0.0 || ones == static_cast<double>(m)) {
    std::cerr << "warning: train_bc: all demonstrations share one action; returning a constant classifier\n";
    result.model.bias = ones == 0.0 ? -1.0 : 1.0;
    return result;
  }

  BcModel& model = result.model;
  const double lipschitz = 1.01 * (0.25 * top_eigenvalue(x, config.seed) + config.l2);
  const double step = config.learning_rate / lipschitz;
  Eigen::VectorXd logits(m);
  Eigen::VectorXd residual(m);
  for (int epoch = 0; epoch <= config.epochs; ++epoch) {
    logits.noalias() = x * model.weights;
    logits.array() += model.bias;
    result.loss_trace.push_back(objective(logits, labels, model.weights, config.l2));
    if (epoch == config.epochs) break;
    for (Eigen::Index i = 0; i < m; ++i) residual[i] = sigmoid(logits[i]) - labels[i];
    model.weights -= step * (x.transpose() * residual + config.l2 * model.weights);
    model.bias -= step * residual.sum();
  }
  return result;
}

}  // namespace cil
