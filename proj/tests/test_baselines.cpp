#include "cil/baselines.hpp"
#include "cil/rng.hpp"

#include <Eigen/Dense>
#include <doctest.h>

#include <cmath>
#include <vector>

using namespace cil;

namespace {

std::vector<ActionDemo<double>> noisy_linear(int m, int n, double noise, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd truth(n);
  for (int j = 0; j < n; ++j) truth[j] = rng.normal();
  std::vector<ActionDemo<double>> demos;
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd phi(n);
    for (int j = 0; j < n; ++j) phi[j] = rng.normal();
    const bool right = phi.dot(truth) + 0.3 + noise * rng.normal() > 0.0;
    demos.push_back({phi, right ? Action::kRight : Action::kLeft});
  }
  return demos;
}

// Newton's method on the same objective, with the bias unpenalized.
Eigen::VectorXd newton_oracle(const std::vector<ActionDemo<double>>& demos, double l2) {
  const auto n = demos.front().phi.size();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n + 1);
  for (int it = 0; it < 50; ++it) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(n + 1);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(n + 1, n + 1);
    for (const auto& d : demos) {
      Eigen::VectorXd x(n + 1);
      x << d.phi, 1.0;
      const double p = 1.0 / (1.0 + std::exp(-theta.dot(x)));
      grad += (p - (d.action == Action::kRight ? 1.0 : 0.0)) * x;
      hess += p * (1 - p) * x * x.transpose();
    }
    grad.head(n) += l2 * theta.head(n);
    hess.topLeftCorner(n, n).diagonal().array() += l2;
    theta -= hess.ldlt().solve(grad);
  }
  return theta;
}

}  // namespace

TEST_SUITE("baselines") {
  TEST_CASE("matches the Newton solution of the same objective") {
    const auto demos = noisy_linear(200, 6, 0.5, 1);
    BcConfig config;
    config.epochs = 20000;
    const auto r = train_bc(demos, config);
    const Eigen::VectorXd oracle = newton_oracle(demos, config.l2);
    CHECK((r.model.weights - oracle.head(6)).cwiseAbs().maxCoeff() < 1e-4);
    CHECK(r.model.bias == doctest::Approx(oracle[6]).epsilon(1e-4));
  }

  TEST_CASE("separable data are fit exactly") {
    const auto demos = noisy_linear(100, 3, 0.0, 2);
    const auto r = train_bc(demos, BcConfig{});
    int correct = 0;
    for (const auto& d : demos) correct += bc_action(r.model, d.phi) == d.action;
    CHECK(correct >= 99);
  }

  TEST_CASE("loss trace is monotone and starts at m log 2") {
    const auto demos = noisy_linear(150, 10, 1.0, 3);
    BcConfig config;
    config.epochs = 500;
    const auto r = train_bc(demos, config);
    REQUIRE(r.loss_trace.size() == 501);
    CHECK(r.loss_trace.front() == doctest::Approx(150 * std::log(2.0)));
    for (std::size_t i = 1; i < r.loss_trace.size(); ++i) CHECK(r.loss_trace[i] <= r.loss_trace[i - 1] + 1e-9);
    CHECK(r.loss_trace.back() == doctest::Approx(bc_loss(r.model, demos, config.l2)).epsilon(1e-12));
  }

  TEST_CASE("zero model loss") {
    const auto demos = noisy_linear(7, 2, 0.0, 4);
    CHECK(bc_loss(BcModel{Eigen::VectorXd::Zero(2), 0.0}, demos, 1.0) == doctest::Approx(7 * std::log(2.0)));
    const BcModel w{Eigen::Vector2d(3, 4), 0.0};
    CHECK(bc_loss(w, std::span<const ActionDemo<double>>(demos).first(0), 2.0) == doctest::Approx(25.0));
  }

  TEST_CASE("flipping every label negates the model") {
    auto demos = noisy_linear(80, 4, 0.5, 5);
    const auto r = train_bc(demos, BcConfig{});
    for (auto& d : demos) d.action = opposite(d.action);
    const auto flipped = train_bc(demos, BcConfig{});
    CHECK((r.model.weights + flipped.model.weights).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(r.model.bias + flipped.model.bias) < 1e-9);
  }

  TEST_CASE("duplicated data with doubled l2 give the same model") {
    const auto demos = noisy_linear(60, 5, 0.5, 6);
    std::vector<ActionDemo<double>> doubled = demos;
    doubled.insert(doubled.end(), demos.begin(), demos.end());
    BcConfig config;
    const auto a = train_bc(demos, config);
    config.l2 = 2.0;
    const auto b = train_bc(doubled, config);
    CHECK((a.model.weights - b.model.weights).cwiseAbs().maxCoeff() < 1e-6);
  }

  TEST_CASE("single class gives a constant classifier") {
    std::vector<ActionDemo<double>> demos(5, {Eigen::Vector3d(1, 2, 3), Action::kRight});
    auto r = train_bc(demos, BcConfig{});
    CHECK(r.model.weights == Eigen::Vector3d::Zero());
    CHECK(bc_action(r.model, Eigen::Vector3d(-9, 0, 4)) == Action::kRight);
    for (auto& d : demos) d.action = Action::kLeft;
    r = train_bc(demos, BcConfig{});
    CHECK(bc_action(r.model, Eigen::Vector3d(9, 0, 4)) == Action::kLeft);
  }

  TEST_CASE("rejects bad input") {
    CHECK_THROWS_AS(train_bc({}, BcConfig{}), std::invalid_argument);
    std::vector<ActionDemo<double>> demos = {{Eigen::Vector2d(1, 2), Action::kLeft},
                                             {Eigen::Vector3d(1, 2, 3), Action::kRight}};
    CHECK_THROWS_AS(train_bc(demos, BcConfig{}), std::invalid_argument);
    demos.pop_back();
    BcConfig config;
    config.epochs = -1;
    CHECK_THROWS_AS(train_bc(demos, config), std::invalid_argument);
  }
}
