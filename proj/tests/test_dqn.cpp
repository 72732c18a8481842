#include "cil/cartpole.hpp"
#include "cil/dqn.hpp"
#include "cil/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace cil;

namespace {

State random_state(Rng& rng) {
  return State(rng.uniform(-2.4, 2.4), rng.uniform(-3, 3), rng.uniform(-0.21, 0.21), rng.uniform(-3, 3));
}

NetworkShape small_shape(std::vector<int> hidden) {
  NetworkShape shape;
  shape.hidden = std::move(hidden);
  return shape;
}

// Every trainable parameter, in a fixed order, for finite differences.
std::vector<double*> parameters(QNetwork& net) {
  std::vector<double*> out;
  for (auto& layer : net.body) {
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) out.push_back(layer.weights.data() + i);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) out.push_back(layer.bias.data() + i);
  }
  for (Eigen::Index i = 0; i < net.head.size(); ++i) out.push_back(net.head.data() + i);
  return out;
}

std::vector<double> flatten(const NetworkGradient& g) {
  std::vector<double> out;
  for (const auto& layer : g.body) {
    out.insert(out.end(), layer.weights.data(), layer.weights.data() + layer.weights.size());
    out.insert(out.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
  }
  out.insert(out.end(), g.head.data(), g.head.data() + g.head.size());
  return out;
}

// Smallest |pre-activation| over the batch; finite differences straddling a
// ReLU kink are meaningless.
double min_kink_distance(const QNetwork& net, const Eigen::Matrix<double, 4, Eigen::Dynamic>& states) {
  double closest = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < states.cols(); ++j) {
    Eigen::VectorXd a = net.input_scale.cwiseProduct(states.col(j));
    for (const auto& layer : net.body) {
      const Eigen::VectorXd z = layer.weights * a + layer.bias;
      closest = std::min(closest, z.cwiseAbs().minCoeff());
      a = z.cwiseMax(0.0);
    }
  }
  return closest;
}

}  // namespace

TEST_SUITE("dqn") {
  TEST_CASE("zero weights give zero Q-values") {
    QNetwork net = make_network(small_shape({8, 6}), 1);
    for (auto& layer : net.body) layer.weights.setZero();
    net.head.setZero();
    Rng rng(1);
    for (int i = 0; i < 50; ++i) CHECK(forward(net, random_state(rng)) == Eigen::Vector2d::Zero());
  }

  TEST_CASE("hand-set network") {
    QNetwork net;
    net.body.push_back({(Eigen::MatrixXd(2, 4) << 1, 0, 0, 0, 0, 0, -1, 0).finished(), Eigen::Vector2d(0, 0.5)});
    net.head = (Eigen::MatrixXd(2, 2) << 1, 2, 3, -1).finished();
    // hidden = relu(2, -0.3 + 0.5) = (2, 0.2); q = (2 + 0.4, 6 - 0.2)
    const State s(2.0, 0.0, 0.3, 0.0);
    const Eigen::Vector2d q = forward(net, s);
    CHECK(q[0] == doctest::Approx(2.4).epsilon(1e-15));
    CHECK(q[1] == doctest::Approx(5.8).epsilon(1e-15));
    CHECK(greedy_action(net, s) == Action::kRight);
    // Negative pre-activation is cut: hidden = (0, 0.5) for x = -1, theta = 0.
    CHECK(penultimate_features(net, State(-1, 0, 0, 0)) == Eigen::Vector2d(0, 0.5));
    net.input_scale = State(0.5, 1, 1, 1);
    CHECK(forward(net, s)[0] == doctest::Approx(1.4).epsilon(1e-15));
  }

  TEST_CASE("eval mode is deterministic and train mode needs a generator") {
    const QNetwork net = make_network(small_shape({16, 16, 32}), 2);
    Rng rng(2);
    const State s = random_state(rng);
    CHECK(forward(net, s) == forward(net, s));
    CHECK_THROWS_AS(forward(net, s, Mode::kTrain), std::invalid_argument);
    Rng a(5), b(5);
    CHECK(forward(net, s, Mode::kTrain, &a) == forward(net, s, Mode::kTrain, &b));
  }

  TEST_CASE("inverted dropout preserves the mean output") {
    const QNetwork net = make_network(small_shape({16, 32}), 3);
    Rng rng(3);
    const State s = random_state(rng);
    Eigen::Vector2d total = Eigen::Vector2d::Zero();
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) total += forward(net, s, Mode::kTrain, &rng);
    const Eigen::Vector2d eval = forward(net, s);
    const double scale = net.head.cwiseAbs().rowwise().sum().maxCoeff() * penultimate_features(net, s).maxCoeff();
    CHECK((total / draws - eval).cwiseAbs().maxCoeff() <= 0.02 * scale);
  }

  TEST_CASE("dropout mask rate and scaling") {
    Rng rng(4);
    for (double rate : {0.2, 0.5}) {
      const Eigen::MatrixXd mask = sample_dropout_mask(1000, 100, rate, rng);
      const double dropped = static_cast<double>((mask.array() == 0.0).count()) / mask.size();
      CHECK(std::abs(dropped - rate) <= 0.02);
      for (Eigen::Index i = 0; i < mask.size(); ++i) {
        const double v = mask.data()[i];
        CHECK((v == 0.0 || v == 1.0 / (1.0 - rate)));
      }
    }
  }

  TEST_CASE("head times penultimate features is the forward pass") {
    const QNetwork net = make_network(NetworkShape{}, 5);
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
      const State s = random_state(rng);
      const Eigen::VectorXd h = penultimate_features(net, s);
      CHECK(h.size() == 512);
      CHECK(h.minCoeff() >= 0.0);
      CHECK((net.head * h - forward(net, s)).cwiseAbs().maxCoeff() <= 1e-12);
      const Eigen::VectorXd x = net.head_stacked();
      CHECK(x.head(512).dot(h) == doctest::Approx(forward(net, s)[0]).epsilon(1e-12));
      CHECK(x.tail(512).dot(h) == doctest::Approx(forward(net, s)[1]).epsilon(1e-12));
    }
  }

  TEST_CASE("stacked head round trip") {
    QNetwork net = make_network(small_shape({4, 5}), 6);
    const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(10, -1, 1);
    net.set_head_stacked(x);
    CHECK(net.head_stacked() == x);
    CHECK(net.head.row(1).transpose() == x.tail(5));
    CHECK_THROWS_AS(net.set_head_stacked(Eigen::VectorXd::Zero(9)), std::invalid_argument);
  }

  TEST_CASE("backpropagated gradient matches central differences") {
    int probes = 0;
    for (std::uint64_t seed = 0; probes < 100; ++seed) {
      REQUIRE(seed < 1000);
      QNetwork net = make_network(small_shape({3, 2}), seed);
      Rng rng(100 + seed);
      for (auto& layer : net.body) {
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = rng.uniform(-0.3, 0.3);
      }
      const int b = 4;
      TransitionBatch batch{Eigen::Matrix<double, 4, Eigen::Dynamic>(4, b), {}};
      for (int j = 0; j < b; ++j) {
        batch.states.col(j) = random_state(rng);
        batch.actions.push_back(action_from_index(static_cast<int>(rng.below(2))));
      }
      Eigen::VectorXd targets(b);
      for (int j = 0; j < b; ++j) targets[j] = rng.normal();
      if (min_kink_distance(net, batch.states) < 1e-3) continue;
      const Eigen::MatrixXd mask = sample_dropout_mask(2, b, 0.5, rng);
      for (const Eigen::MatrixXd* m : {static_cast<const Eigen::MatrixXd*>(nullptr), &mask}) {
        NetworkGradient g;
        td_loss(net, batch, targets, m, &g);
        const std::vector<double> analytic = flatten(g);
        std::vector<double*> params = parameters(net);
        REQUIRE(analytic.size() == params.size());
        for (std::size_t p = 0; p < params.size(); ++p) {
          const double h = 1e-6;
          const double keep = *params[p];
          *params[p] = keep + h;
          const double up = td_loss(net, batch, targets, m, nullptr);
          *params[p] = keep - h;
          const double down = td_loss(net, batch, targets, m, nullptr);
          *params[p] = keep;
          const double numeric = (up - down) / (2 * h);
          const double denom = std::max({std::abs(numeric), std::abs(analytic[p]), 1e-3});
          CHECK(std::abs(numeric - analytic[p]) / denom <= 1e-4);
        }
        ++probes;
      }
    }
  }

  TEST_CASE("td loss of a perfect fit is zero") {
    const QNetwork net = make_network(small_shape({8}), 7);
    Rng rng(7);
    TransitionBatch batch{Eigen::Matrix<double, 4, Eigen::Dynamic>(4, 5), {}};
    Eigen::VectorXd targets(5);
    for (int j = 0; j < 5; ++j) {
      batch.states.col(j) = random_state(rng);
      batch.actions.push_back(action_from_index(j % 2));
      targets[j] = forward(net, batch.states.col(j))[j % 2];
    }
    NetworkGradient g;
    CHECK(td_loss(net, batch, targets, nullptr, &g) == doctest::Approx(0.0));
    CHECK(g.head.cwiseAbs().maxCoeff() < 1e-12);
    targets[0] += 1.0;
    CHECK(td_loss(net, batch, targets, nullptr, nullptr) == doctest::Approx(0.2));
    CHECK_THROWS_AS(td_loss(net, batch, Eigen::VectorXd::Zero(4), nullptr, nullptr), std::invalid_argument);
  }

  TEST_CASE("boost leaves the body untouched") {
    const QNetwork net = make_network(small_shape({16, 32}), 8);
    Rng rng(8);
    std::vector<State> states;
    std::vector<Action> actions;
    for (int i = 0; i < 30; ++i) {
      states.push_back(random_state(rng));
      actions.push_back(action_from_index(static_cast<int>(rng.below(2))));
    }
    for (HeadObjective objective : {HeadObjective::kL1, HeadObjective::kNuclear}) {
      BoostSettings settings;
      settings.objective = objective;
      const BoostResult r = cs_boost_last_layer(net, states, actions, settings);
      CHECK(r.network.body == net.body);
      CHECK(r.network.input_scale == net.input_scale);
      CHECK(r.network.dropout_rate == net.dropout_rate);
      CHECK(r.network.head_stacked() == r.report.solution);
      CHECK(r.network.head != net.head);
    }
    CHECK_THROWS_AS(cs_boost_last_layer(net, states, std::span<const Action>(actions).first(3), BoostSettings{}),
                    std::invalid_argument);
    CHECK_THROWS_AS(cs_boost_last_layer(net, {}, {}, BoostSettings{}), std::invalid_argument);
  }

  TEST_CASE("boost with a feasible head and large lambda stays at the head") {
    const QNetwork net = make_network(small_shape({16, 32}), 9);
    Rng rng(9);
    std::vector<State> states;
    std::vector<Action> actions;
    for (int i = 0; i < 40; ++i) {
      states.push_back(random_state(rng));
      actions.push_back(greedy_action(net, states.back()));
    }
    BoostSettings settings;
    settings.epsilon = 0.0;
    settings.lambda = 1e5;
    const BoostResult r = cs_boost_last_layer(net, states, actions, settings);
    CHECK((r.network.head - net.head).cwiseAbs().maxCoeff() <= 1e-5);
    for (std::size_t i = 0; i < states.size(); ++i) CHECK(greedy_action(r.network, states[i]) == actions[i]);
  }

  TEST_CASE("boost fits demonstrated actions") {
    const QNetwork net = make_network(small_shape({16, 64}), 10);
    Rng rng(10);
    std::vector<State> states;
    std::vector<Action> actions;
    for (int i = 0; i < 20; ++i) {
      states.push_back(random_state(rng));
      actions.push_back(states.back()[state_index::kAngle] > 0 ? Action::kRight : Action::kLeft);
    }
    BoostSettings settings;
    settings.epsilon = 0.5;
    settings.lambda = 0.1;
    settings.solver.penalty_weight = 1000.0;
    const BoostResult r = cs_boost_last_layer(net, states, actions, settings);
    int agree = 0;
    for (std::size_t i = 0; i < states.size(); ++i) agree += greedy_action(r.network, states[i]) == actions[i];
    CHECK(agree >= 19);
  }

  TEST_CASE("zero iterations return the seeded initialization") {
    DqnTrainConfig config;
    config.iterations = 0;
    config.shape = small_shape({8, 8});
    config.seed = 11;
    const DqnTrainResult r = train_dqn(config);
    CHECK(r.network == make_network(config.shape, derive_seed(11, "dqn-init")));
    CHECK(r.episode_rewards.empty());
    CHECK(r.best_iteration == -1);
  }

  TEST_CASE("short training runs are reproducible") {
    DqnTrainConfig config;
    config.iterations = 600;
    config.target_refresh = 200;
    config.batch_size = 16;
    config.check_episodes = 2;
    config.shape = small_shape({16, 16});
    config.seed = 12;
    const DqnTrainResult a = train_dqn(config);
    const DqnTrainResult b = train_dqn(config);
    CHECK(a.network == b.network);
    CHECK(a.episode_rewards == b.episode_rewards);
    CHECK(a.best_iteration % 200 == 0);
    CHECK(a.best_iteration > 0);
    CHECK(a.best_check_reward >= 1.0);
    for (double reward : a.episode_rewards) {
      CHECK(reward >= 1.0);
      CHECK(reward <= 200.0);
    }
    config.seed = 13;
    CHECK(!(train_dqn(config).network == a.network));
  }

  TEST_CASE("config and shape validation") {
    DqnTrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.learning_rate = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = DqnTrainConfig{};
    c.discount = 1.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = DqnTrainConfig{};
    c.check_episodes = -1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK(DqnTrainConfig{}.epsilon_at(0) == 1.0);
    CHECK(DqnTrainConfig{}.epsilon_at(100000) == doctest::Approx(0.05));
    CHECK_THROWS_AS(make_network(small_shape({}), 0), std::invalid_argument);
    CHECK_THROWS_AS(make_network(small_shape({4, 0}), 0), std::invalid_argument);
    QNetwork bad = make_network(small_shape({4, 5}), 0);
    bad.head.resize(2, 4);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}
