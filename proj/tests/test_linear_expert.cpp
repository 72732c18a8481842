#include "cil/linear_expert.hpp"
#include "cil/rng.hpp"

#include <doctest.h>

#include <vector>

using namespace cil;

namespace {

Eigen::VectorXd random_vector(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

Featurizer small_featurizer(std::uint64_t seed) {
  const auto samples = sample_state_box(2000, seed);
  const std::vector<double> gammas = default_bandwidths();
  return Featurizer::fit(samples, gammas, seed, 20);
}

}  // namespace

TEST_SUITE("linear_expert") {
  TEST_CASE("q_values") {
    const Eigen::VectorXd phi = Eigen::Vector3d(1.0, 2.0, 3.0);
    CHECK(q_values(WeightStack::zeros(3), phi) == Eigen::Vector2d::Zero());

    WeightStack w = WeightStack::zeros(3);
    w.w0[1] = 1.0;
    CHECK(q_values(w, phi)[0] == 2.0);

    Rng rng(1);
    WeightStack r{random_vector(3, rng), random_vector(3, rng)};
    WeightStack scaled{2.5 * r.w0, 2.5 * r.w1};
    CHECK((q_values(scaled, phi) - 2.5 * q_values(r, phi)).norm() < 1e-12);
    CHECK_THROWS_AS(q_values(r, Eigen::VectorXd::Ones(4)), std::invalid_argument);
  }

  TEST_CASE("greedy action and ties") {
    CHECK(greedy_action(Eigen::Vector2d(1, 0)) == Action::kLeft);
    CHECK(greedy_action(Eigen::Vector2d(0, 1)) == Action::kRight);
    CHECK(greedy_action(Eigen::Vector2d(0.3, 0.3)) == Action::kLeft);
  }

  TEST_CASE("greedy action is invariant to positive scaling") {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
      const WeightStack w{random_vector(8, rng), random_vector(8, rng)};
      const Eigen::VectorXd phi = random_vector(8, rng);
      const double alpha = 0.01 + 10 * rng.uniform();
      CHECK(greedy_action(w, phi) == greedy_action(WeightStack{alpha * w.w0, alpha * w.w1}, phi));
    }
  }

  TEST_CASE("stacking round trip") {
    Rng rng(4);
    const WeightStack w{random_vector(5, rng), random_vector(5, rng)};
    const Eigen::VectorXd x = w.stacked();
    CHECK(x.head(5) == w.w0);
    CHECK(x.tail(5) == w.w1);
    CHECK(WeightStack::from_stacked(x) == w);
    CHECK_THROWS_AS(WeightStack::from_stacked(Eigen::VectorXd::Zero(3)), std::invalid_argument);
  }

  TEST_CASE("terminal TD step from zero adds lr * reward * phi") {
    Rng rng(5);
    const Eigen::VectorXd phi = random_vector(6, rng);
    WeightStack w = WeightStack::zeros(6);
    td_update(w, phi, Action::kRight, 1.0, std::nullopt, 0.01, 0.99);
    CHECK((w.w1 - 0.01 * phi).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(w.w0 == Eigen::VectorXd::Zero(6));
  }

  TEST_CASE("bootstrapped TD step matches the hand formula") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
      WeightStack w{random_vector(6, rng), random_vector(6, rng)};
      const WeightStack before = w;
      const Eigen::VectorXd phi = random_vector(6, rng);
      const Eigen::VectorXd next = random_vector(6, rng);
      const Action a = action_from_index(static_cast<int>(rng.below(2)));
      const double lr = 0.05, gamma = 0.9;
      const double target = 1.0 + gamma * std::max(before.w0.dot(next), before.w1.dot(next));
      const Eigen::VectorXd expected = before[a] + lr * (target - before[a].dot(phi)) * phi;
      td_update(w, phi, a, 1.0, next, lr, gamma);
      CHECK((w[a] - expected).cwiseAbs().maxCoeff() < 1e-12);
      CHECK(w[opposite(a)] == before[opposite(a)]);
    }
  }

  TEST_CASE("zero episodes return the zero initialization") {
    const Featurizer f = small_featurizer(1);
    QLearningConfig c;
    c.episodes = 0;
    const auto r = train_linear_expert(f, c);
    CHECK(r.weights == WeightStack::zeros(f.dimension()));
    CHECK(r.episode_rewards.empty());
  }

  TEST_CASE("training is reproducible") {
    const Featurizer f = small_featurizer(2);
    QLearningConfig c;
    c.episodes = 60;
    c.epsilon_decay_episodes = 30;
    c.seed = 17;
    const auto a = train_linear_expert(f, c);
    const auto b = train_linear_expert(f, c);
    CHECK(a.weights == b.weights);
    CHECK(a.final_weights == b.final_weights);
    CHECK(a.episode_rewards == b.episode_rewards);
    CHECK(a.episode_rewards.size() == 60);
    for (double r : a.episode_rewards) {
      CHECK(r >= 1);
      CHECK(r <= 200);
    }
    c.seed = 18;
    CHECK_FALSE(train_linear_expert(f, c).episode_rewards == a.episode_rewards);
  }

  TEST_CASE("keep_best off returns the final weights") {
    const Featurizer f = small_featurizer(3);
    QLearningConfig c;
    c.episodes = 40;
    c.keep_best = false;
    const auto r = train_linear_expert(f, c);
    CHECK(r.weights == r.final_weights);
  }

  TEST_CASE("divergence is reported") {
    const Featurizer f = small_featurizer(4);
    QLearningConfig c;
    c.episodes = 500;
    c.learning_rate = 50.0;
    CHECK_THROWS_WITH_AS(train_linear_expert(f, c), doctest::Contains("learning"), std::runtime_error);
  }

  TEST_CASE("config validation and schedule") {
    QLearningConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.epsilon_at(0) == 1.0);
    CHECK(c.epsilon_at(2500) == doctest::Approx(0.525));
    CHECK(c.epsilon_at(9000) == 0.05);
    c.learning_rate = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.learning_rate = 0.01;
    c.discount = 1.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }

  TEST_CASE("trailing mean") {
    const std::vector<double> v = {1, 2, 3, 4};
    CHECK(trailing_mean(v, 2) == 3.5);
    CHECK(trailing_mean(v, 10) == 2.5);
  }
}
