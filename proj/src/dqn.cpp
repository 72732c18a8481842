#include "cil/dqn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cil {
namespace {

// Activations of one batched pass, kept for backpropagation.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;       // input to each body layer
  std::vector<Eigen::MatrixXd> activations;  // relu output of each body layer
  Eigen::MatrixXd head_input;                // penultimate activations after dropout
  Eigen::MatrixXd q;                         // 2 x B
};

void forward_batch(const QNetwork& net, const Eigen::MatrixXd& states, const Eigen::MatrixXd* mask,
                   ForwardCache& cache) {
  cache.inputs.clear();
  cache.activations.clear();
  Eigen::MatrixXd a = net.input_scale.asDiagonal() * states;
  for (const auto& layer : net.body) {
    cache.inputs.push_back(a);
    Eigen::MatrixXd z = layer.weights * a;
    z.colwise() += layer.bias;
    a = z.cwiseMax(0.0);
    cache.activations.push_back(a);
  }
  cache.head_input = mask ? Eigen::MatrixXd(a.cwiseProduct(*mask)) : a;
  cache.q = net.head * cache.head_input;
}

Eigen::MatrixXd q_batch(const QNetwork& net, const Eigen::MatrixXd& states) {
  ForwardCache cache;
  forward_batch(net, states, nullptr, cache);
  return cache.q;
}

NetworkGradient zeros_like(const QNetwork& net) {
  NetworkGradient g;
  for (const auto& layer : net.body) {
    g.body.push_back({Eigen::MatrixXd::Zero(layer.weights.rows(), layer.weights.cols()),
                      Eigen::VectorXd::Zero(layer.bias.size())});
  }
  g.head = Eigen::MatrixXd::Zero(net.head.rows(), net.head.cols());
  return g;
}

double max_abs_parameter(const QNetwork& net) {
  double m = net.head.cwiseAbs().maxCoeff();
  for (const auto& layer : net.body) {
    m = std::max(m, layer.weights.cwiseAbs().maxCoeff());
    if (layer.bias.size() > 0) m = std::max(m, layer.bias.cwiseAbs().maxCoeff());
  }
  return m;
}

class Adam {
 public:
  Adam(const QNetwork& net, double learning_rate)
      : m_(zeros_like(net)), v_(zeros_like(net)), learning_rate_(learning_rate) {}

  void step(QNetwork& net, const NetworkGradient& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
      m = kBeta1 * m + (1.0 - kBeta1) * grad;
      v = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseAbs2();
      param.array() -= learning_rate_ * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
    };
    for (std::size_t l = 0; l < net.body.size(); ++l) {
      update(net.body[l].weights, g.body[l].weights, m_.body[l].weights, v_.body[l].weights);
      update(net.body[l].bias, g.body[l].bias, m_.body[l].bias, v_.body[l].bias);
    }
    update(net.head, g.head, m_.head, v_.head);
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  NetworkGradient m_;
  NetworkGradient v_;
  double learning_rate_;
  int t_ = 0;
};

struct Transition {
  State state;
  Action action;
  double reward;
  State next_state;
  bool terminal;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) { items_.reserve(capacity); }

  void push(Transition t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % capacity_;
  }
  std::size_t size() const { return items_.size(); }
  const Transition& operator[](std::size_t i) const { return items_[i]; }

 private:
  std::vector<Transition> items_;
  std::size_t capacity_;
  std::size_t next_ = 0;
};

}  // namespace

void QNetwork::validate() const {
  Eigen::Index in = 4;
  for (std::size_t l = 0; l < body.size(); ++l) {
    if (body[l].weights.cols() != in || body[l].bias.size() != body[l].weights.rows()) {
      throw std::invalid_argument("qnetwork: layer " + std::to_string(l) + " shape does not chain");
    }
    in = body[l].weights.rows();
  }
  if (head.rows() != 2 || head.cols() != in) throw std::invalid_argument("qnetwork: head must be 2 x width");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("qnetwork: dropout rate must be in [0, 1)");
}

Eigen::VectorXd QNetwork::head_stacked() const {
  Eigen::VectorXd x(2 * head.cols());
  x << head.row(0).transpose(), head.row(1).transpose();
  return x;
}

void QNetwork::set_head_stacked(const Eigen::VectorXd& x) {
  if (x.size() != 2 * head.cols()) throw std::invalid_argument("qnetwork: stacked head has wrong length");
  head.row(0) = x.head(head.cols()).transpose();
  head.row(1) = x.tail(head.cols()).transpose();
}

QNetwork make_network(const NetworkShape& shape, std::uint64_t seed) {
  if (shape.hidden.empty()) throw std::invalid_argument("make_network: need at least one hidden layer");
  Rng rng(seed);
  QNetwork net;
  net.dropout_rate = shape.dropout_rate;
  if (!(shape.input_range.array() > 0.0).all()) throw std::invalid_argument("make_network: input range must be positive");
  net.input_scale = shape.input_range.cwiseInverse();
  int in = 4;
  for (const int out : shape.hidden) {
    if (out <= 0) throw std::invalid_argument("make_network: layer widths must be positive");
    const double bound = std::sqrt(6.0 / in);
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = rng.uniform(-bound, bound);
    net.body.push_back(std::move(layer));
    in = out;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  net.head.resize(2, in);
  for (Eigen::Index i = 0; i < net.head.size(); ++i) net.head.data()[i] = rng.uniform(-bound, bound);
  net.validate();
  return net;
}

Eigen::MatrixXd sample_dropout_mask(Eigen::Index width, Eigen::Index batch, double rate, Rng& rng) {
  const double keep_scale = 1.0 / (1.0 - rate);
  Eigen::MatrixXd mask(width, batch);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

Eigen::Vector2d forward(const QNetwork& net, const State& state, Mode mode, Rng* dropout_rng) {
  if (net.body.empty() || net.body.front().weights.cols() != 4) {
    throw std::invalid_argument("forward: network does not accept 4-dim states");
  }
  Eigen::VectorXd a = net.input_scale.cwiseProduct(state);
  for (const auto& layer : net.body) {
    if (layer.weights.cols() != a.size()) throw std::invalid_argument("forward: layer shape mismatch");
    a = (layer.weights * a + layer.bias).cwiseMax(0.0);
  }
  if (net.head.cols() != a.size()) throw std::invalid_argument("forward: head shape mismatch");
  if (mode == Mode::kTrain) {
    if (!dropout_rng) throw std::invalid_argument("forward: train mode needs a dropout generator");
    a = a.cwiseProduct(sample_dropout_mask(a.size(), 1, net.dropout_rate, *dropout_rng));
  }
  return net.head * a;
}

Eigen::VectorXd penultimate_features(const QNetwork& net, const State& state) {
  Eigen::VectorXd a = net.input_scale.cwiseProduct(state);
  for (const auto& layer : net.body) {
    if (layer.weights.cols() != a.size()) throw std::invalid_argument("penultimate_features: layer shape mismatch");
    a = (layer.weights * a + layer.bias).cwiseMax(0.0);
  }
  return a;
}

Policy make_greedy_policy(QNetwork net) {
  return [net = std::move(net)](const State& s) { return greedy_action(net, s); };
}

double td_loss(const QNetwork& net, const TransitionBatch& batch, const Eigen::VectorXd& targets,
               const Eigen::MatrixXd* dropout_mask, NetworkGradient* gradient) {
  const Eigen::Index n = batch.states.cols();
  if (static_cast<Eigen::Index>(batch.actions.size()) != n || targets.size() != n) {
    throw std::invalid_argument("td_loss: batch sizes disagree");
  }
  ForwardCache cache;
  forward_batch(net, batch.states, dropout_mask, cache);

  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(2, n);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const int a = to_index(batch.actions[static_cast<std::size_t>(j)]);
    const double err = cache.q(a, j) - targets[j];
    loss += err * err;
    dq(a, j) = 2.0 * err / static_cast<double>(n);
  }
  loss /= static_cast<double>(n);
  if (!gradient) return loss;

  *gradient = zeros_like(net);
  gradient->head.noalias() = dq * cache.head_input.transpose();
  Eigen::MatrixXd da = net.head.transpose() * dq;
  if (dropout_mask) da = da.cwiseProduct(*dropout_mask);
  for (std::size_t l = net.body.size(); l-- > 0;) {
    const Eigen::MatrixXd dz = da.cwiseProduct((cache.activations[l].array() > 0.0).cast<double>().matrix());
    gradient->body[l].weights.noalias() = dz * cache.inputs[l].transpose();
    gradient->body[l].bias = dz.rowwise().sum();
    if (l > 0) da.noalias() = net.body[l].weights.transpose() * dz;
  }
  return loss;
}

void DqnTrainConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("dqn: iterations must be non-negative");
  if (batch_size <= 0 || replay_capacity <= 0 || target_refresh <= 0) {
    throw std::invalid_argument("dqn: batch size, replay capacity and target refresh must be positive");
  }
  if (warmup < 0 || epsilon_decay_iterations < 0 || check_episodes < 0) throw std::invalid_argument("dqn: counts must be non-negative");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("dqn: learning_rate must be positive");
  if (!(discount > 0.0 && discount <= 1.0)) throw std::invalid_argument("dqn: discount must be in (0, 1]");
}

double DqnTrainConfig::epsilon_at(int iteration) const {
  if (epsilon_decay_iterations == 0 || iteration >= epsilon_decay_iterations) return epsilon_end;
  const double frac = static_cast<double>(iteration) / epsilon_decay_iterations;
  return epsilon_start + frac * (epsilon_end - epsilon_start);
}

DqnTrainResult train_dqn(const DqnTrainConfig& config) {
  config.validate();
  return continue_dqn(make_network(config.shape, derive_seed(config.seed, "dqn-init")), config);
}

namespace {

double greedy_check(const QNetwork& net, int episodes, std::uint64_t seed) {
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    CartPole env;
    env.reset(derive_seed(seed, static_cast<std::uint64_t>(e)));
    while (!env.done()) total += env.step(greedy_action(net, env.state())).reward;
  }
  return total / episodes;
}

}  // namespace

DqnTrainResult continue_dqn(QNetwork network, const DqnTrainConfig& config) {
  config.validate();
  network.validate();
  DqnTrainResult result{std::move(network), {}};
  QNetwork& net = result.network;
  if (config.iterations == 0) return result;

  QNetwork target = net;
  Adam adam(net, config.learning_rate);
  ReplayBuffer replay(static_cast<std::size_t>(config.replay_capacity));
  Rng explore(derive_seed(config.seed, "dqn-explore"));
  Rng sampler(derive_seed(config.seed, "dqn-replay"));
  Rng dropout(derive_seed(config.seed, "dqn-dropout"));
  const std::uint64_t reset_root = derive_seed(config.seed, "dqn-env");
  const std::uint64_t check_root = derive_seed(config.seed, "dqn-check");
  std::optional<QNetwork> best;
  std::uint64_t episode = 0;

  CartPole env;
  env.reset(derive_seed(reset_root, episode));
  double episode_reward = 0.0;
  auto env_step = [&](double epsilon) {
    const State s = env.state();
    Action action = explore.uniform() < epsilon ? action_from_index(static_cast<int>(explore.below(2)))
                                                : greedy_action(net, s);
    const StepResult step = env.step(action);
    episode_reward += step.reward;
    replay.push({s, action, step.reward, step.next_state, step.done && !step.truncated});
    if (step.done) {
      result.episode_rewards.push_back(episode_reward);
      episode_reward = 0.0;
      env.reset(derive_seed(reset_root, ++episode));
    }
  };

  const auto warmup = static_cast<std::size_t>(std::max(config.warmup, config.batch_size));
  while (replay.size() < warmup) env_step(1.0);

  const auto batch_size = static_cast<Eigen::Index>(config.batch_size);
  TransitionBatch batch{Eigen::Matrix<double, 4, Eigen::Dynamic>(4, batch_size),
                        std::vector<Action>(static_cast<std::size_t>(batch_size))};
  Eigen::Matrix<double, 4, Eigen::Dynamic> next_states(4, batch_size);
  Eigen::VectorXd rewards(batch_size);
  Eigen::VectorXd continues(batch_size);
  NetworkGradient gradient;

  for (int it = 0; it < config.iterations; ++it) {
    env_step(config.epsilon_at(it));

    for (Eigen::Index j = 0; j < batch_size; ++j) {
      const Transition& t = replay[sampler.below(replay.size())];
      batch.states.col(j) = t.state;
      batch.actions[static_cast<std::size_t>(j)] = t.action;
      next_states.col(j) = t.next_state;
      rewards[j] = t.reward;
      continues[j] = t.terminal ? 0.0 : 1.0;
    }
    const Eigen::VectorXd next_value = q_batch(target, next_states).colwise().maxCoeff().transpose();
    const Eigen::VectorXd targets = rewards + config.discount * continues.cwiseProduct(next_value);
    const Eigen::MatrixXd mask = sample_dropout_mask(net.width(), batch_size, net.dropout_rate, dropout);
    td_loss(net, batch, targets, &mask, &gradient);
    adam.step(net, gradient);

    if ((it + 1) % config.target_refresh == 0) {
      if (!(max_abs_parameter(net) <= 1e6)) {
        throw std::runtime_error("dqn diverged at iteration " + std::to_string(it) +
                                 " (|param| > 1e6); try a smaller learning_rate");
      }
      target = net;
      if (config.check_episodes > 0) {
        const double score = greedy_check(net, config.check_episodes, check_root);
        if (score >= result.best_check_reward) {
          result.best_check_reward = score;
          result.best_iteration = it + 1;
          best = net;
        }
      }
    }
  }
  if (!(max_abs_parameter(net) <= 1e6)) {
    throw std::runtime_error("dqn diverged (|param| > 1e6); try a smaller learning_rate");
  }
  if (best) net = std::move(*best);
  return result;
}

BoostResult cs_boost_last_layer(const QNetwork& net, std::span<const State> states, std::span<const Action> actions,
                                const BoostSettings& settings) {
  net.validate();
  if (states.empty()) throw std::invalid_argument("cs_boost_last_layer: no demonstrations");
  if (states.size() != actions.size()) throw std::invalid_argument("cs_boost_last_layer: states and actions differ in length");

  std::vector<ActionDemo<double>> demos;
  demos.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) demos.push_back({penultimate_features(net, states[i]), actions[i]});
  Level2Problem<double> problem = build_level2_constraints<double>(demos);
  problem.epsilon = settings.epsilon;
  problem.lambda = settings.lambda;
  problem.w_target = net.head_stacked();

  BoostResult result{net, {}};
  if (settings.objective == HeadObjective::kL1) {
    result.report = solve_level2(problem, settings.solver);
  } else {
    // Column-major vec of the width x 2 matrix [w0 w1] is exactly [w0; w1].
    result.report = solve_level2_nuclear(problem, net.width(), 2, settings.solver);
  }
  result.network.set_head_stacked(result.report.solution);
  return result;
}

}  // namespace cil
