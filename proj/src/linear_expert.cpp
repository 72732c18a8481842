#include "cil/linear_expert.hpp"

#include "cil/rng.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cil {

WeightStack WeightStack::from_stacked(const Eigen::VectorXd& x) {
  if (x.size() % 2 != 0) throw std::invalid_argument("weight stack: stacked vector has odd length");
  const Eigen::Index n = x.size() / 2;
  return {x.head(n), x.tail(n)};
}

Eigen::VectorXd WeightStack::stacked() const {
  Eigen::VectorXd x(w0.size() + w1.size());
  x << w0, w1;
  return x;
}

Eigen::Vector2d q_values(const WeightStack& w, const Eigen::VectorXd& phi) {
  if (w.w0.size() != phi.size() || w.w1.size() != phi.size()) {
    throw std::invalid_argument("q_values: weight dimension " + std::to_string(w.w0.size()) +
                                " does not match feature dimension " + std::to_string(phi.size()));
  }
  return {w.w0.dot(phi), w.w1.dot(phi)};
}

Policy make_greedy_policy(WeightStack w, Featurizer featurizer) {
  return [w = std::move(w), f = std::move(featurizer)](const State& s) {
    return greedy_action(w, f.transform(s));
  };
}

void QLearningConfig::validate() const {
  if (episodes < 0) throw std::invalid_argument("q-learning: episodes must be non-negative");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("q-learning: learning_rate must be positive");
  if (!(discount > 0.0 && discount <= 1.0)) throw std::invalid_argument("q-learning: discount must be in (0, 1]");
  if (epsilon_decay_episodes < 0) throw std::invalid_argument("q-learning: decay episodes must be non-negative");
}

double QLearningConfig::epsilon_at(int episode) const {
  if (epsilon_decay_episodes == 0 || episode >= epsilon_decay_episodes) return epsilon_end;
  const double frac = static_cast<double>(episode) / epsilon_decay_episodes;
  return epsilon_start + frac * (epsilon_end - epsilon_start);
}

void td_update(WeightStack& w, const Eigen::VectorXd& phi, Action action, double reward,
               const std::optional<Eigen::VectorXd>& next_phi, double learning_rate, double discount) {
  double target = reward;
  if (next_phi) target += discount * q_values(w, *next_phi).maxCoeff();
  auto& wa = w[action];
  const double td_error = target - wa.dot(phi);
  wa.noalias() += (learning_rate * td_error) * phi;
}

QLearningResult train_linear_expert(const Featurizer& featurizer, const QLearningConfig& config) {
  config.validate();
  QLearningResult result;
  result.final_weights = WeightStack::zeros(featurizer.dimension());
  result.weights = result.final_weights;
  result.episode_rewards.reserve(static_cast<std::size_t>(config.episodes));
  WeightStack& w = result.final_weights;
  double window_sum = 0.0;

  Rng explore(derive_seed(config.seed, "explore"));
  const std::uint64_t reset_root = derive_seed(config.seed, "env");
  CartPole env;
  std::optional<Eigen::VectorXd> next_phi;

  for (int episode = 0; episode < config.episodes; ++episode) {
    const double epsilon = config.epsilon_at(episode);
    Eigen::VectorXd phi = featurizer.transform(env.reset(derive_seed(reset_root, static_cast<std::uint64_t>(episode))));
    double total = 0.0;
    while (!env.done()) {
      Action action = greedy_action(w, phi);
      if (explore.uniform() < epsilon) action = action_from_index(static_cast<int>(explore.below(2)));
      const StepResult step = env.step(action);
      total += step.reward;
      const bool bootstrap = !step.done || step.truncated;
      if (bootstrap) {
        next_phi = featurizer.transform(step.next_state);
      } else {
        next_phi.reset();
      }
      td_update(w, phi, action, step.reward, next_phi, config.learning_rate, config.discount);
      if (bootstrap) phi = std::move(*next_phi);
    }
    result.episode_rewards.push_back(total);
    window_sum += total;
    if (result.episode_rewards.size() > 100) window_sum -= result.episode_rewards[result.episode_rewards.size() - 101];
    const double trailing = window_sum / static_cast<double>(std::min<std::size_t>(100, result.episode_rewards.size()));
    if (trailing >= result.best_trailing_reward) {
      result.best_trailing_reward = trailing;
      result.best_episode = episode;
      if (config.keep_best) result.weights = w;
    }
    if (w.w0.cwiseAbs().maxCoeff() > 1e6 || w.w1.cwiseAbs().maxCoeff() > 1e6 || !w.all_finite()) {
      throw std::runtime_error("q-learning diverged at episode " + std::to_string(episode) +
                               " (|w| > 1e6); try a smaller learning_rate");
    }
  }
  if (!config.keep_best) result.weights = result.final_weights;
  return result;
}

double trailing_mean(const std::vector<double>& values, std::size_t window) {
  if (values.empty()) return 0.0;
  const std::size_t n = std::min(window, values.size());
  return std::accumulate(values.end() - static_cast<std::ptrdiff_t>(n), values.end(), 0.0) / static_cast<double>(n);
}

}  // namespace cil
