#include "cil/harness.hpp"

#include "cil/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cil {
namespace {

Eigen::Vector2d state_to_q(const WeightStack& w, const Featurizer& f, const State& s) {
  return q_values(w, f.transform(s));
}

// Partial Fisher-Yates: the first n entries become a uniform draw without
// replacement.
template <typename T>
void shuffle_prefix(std::vector<T>& items, std::size_t n, Rng& rng) {
  for (std::size_t i = 0; i < n && i + 1 < items.size(); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(items.size() - i));
    std::swap(items[i], items[j]);
  }
}

void run_episode(const Policy& policy, std::uint64_t seed, std::vector<State>& out) {
  CartPole env;
  env.reset(seed);
  while (!env.done()) {
    out.push_back(env.state());
    env.step(policy(env.state()));
  }
}

// Pool of at least `count` expert-visited states; `rollouts` episodes first,
// more as needed.
std::vector<State> state_pool(const Policy& policy, int rollouts, std::size_t count, std::uint64_t seed) {
  std::vector<State> pool;
  std::uint64_t episode = 0;
  while (episode < static_cast<std::uint64_t>(std::max(rollouts, 0)) || pool.size() < count) {
    run_episode(policy, derive_seed(seed, episode), pool);
    ++episode;
  }
  return pool;
}

std::vector<ActionDemo<double>> action_demos(std::span<const Demonstration> demos, const Featurizer& f) {
  std::vector<ActionDemo<double>> out;
  out.reserve(demos.size());
  for (const auto& d : demos) out.push_back({f.transform(d.state), d.action});
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

const char* to_string(DemoSampling s) { return s == DemoSampling::kOnPolicy ? "on_policy" : "uniform_box"; }

DemoSampling sampling_from_string(const std::string& s) {
  if (s == "on_policy") return DemoSampling::kOnPolicy;
  if (s == "uniform_box") return DemoSampling::kUniformBox;
  throw std::invalid_argument("unknown demo sampling '" + s + "' (expected on_policy or uniform_box)");
}

Json solver_to_json(const SolverConfig& c) {
  return {{"max_iterations", c.max_iterations},
          {"step_size", c.step_size},
          {"penalty_weight", c.penalty_weight},
          {"tolerance", c.tolerance}};
}

SolverConfig solver_from_json(const Json& j, SolverConfig c) {
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.step_size = j.value("step_size", c.step_size);
  c.penalty_weight = j.value("penalty_weight", c.penalty_weight);
  c.tolerance = j.value("tolerance", c.tolerance);
  return c;
}

Json dqn_to_json(const DqnTrainConfig& c) {
  return {{"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"replay_capacity", c.replay_capacity},
          {"warmup", c.warmup},
          {"learning_rate", c.learning_rate},
          {"discount", c.discount},
          {"epsilon_start", c.epsilon_start},
          {"epsilon_end", c.epsilon_end},
          {"epsilon_decay_iterations", c.epsilon_decay_iterations},
          {"target_refresh", c.target_refresh},
          {"check_episodes", c.check_episodes},
          {"hidden", c.shape.hidden},
          {"dropout_rate", c.shape.dropout_rate}};
}

DqnTrainConfig dqn_from_json(const Json& j, DqnTrainConfig c) {
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
  c.warmup = j.value("warmup", c.warmup);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.discount = j.value("discount", c.discount);
  c.epsilon_start = j.value("epsilon_start", c.epsilon_start);
  c.epsilon_end = j.value("epsilon_end", c.epsilon_end);
  c.epsilon_decay_iterations = j.value("epsilon_decay_iterations", c.epsilon_decay_iterations);
  c.target_refresh = j.value("target_refresh", c.target_refresh);
  c.check_episodes = j.value("check_episodes", c.check_episodes);
  c.shape.hidden = j.value("hidden", c.shape.hidden);
  c.shape.dropout_rate = j.value("dropout_rate", c.shape.dropout_rate);
  return c;
}

Json summary_to_json(const EvalSummary& s) {
  return {{"mean", s.mean}, {"median", s.median}, {"stddev", s.stddev}, {"episodes", s.rewards.size()}};
}

Json qdiff_to_json(const QDifferenceStats& s) {
  Json j = {{"agreement", s.agreement}};
  j["pearson_r"] = s.pearson_r ? Json(*s.pearson_r) : Json(nullptr);
  return j;
}

Json report_to_json(const SolveReport<double>& r) {
  return {{"iterations", r.iterations_used},
          {"converged", r.converged},
          {"final_objective", r.objective_trace.empty() ? 0.0 : r.objective_trace.back()},
          {"max_constraint_violation", r.max_constraint_violation}};
}

}  // namespace

Agent make_agent(const WeightStack& weights, const Featurizer& featurizer) {
  return {make_greedy_policy(weights, featurizer),
          [weights, featurizer](const State& s) { return state_to_q(weights, featurizer, s); }};
}

Agent make_agent(const QNetwork& net) {
  return {make_greedy_policy(net), [net](const State& s) { return forward(net, s); }};
}

// ---------------------------------------------------------------------------
// Demonstrations

std::vector<State> visited_states(const Policy& policy, int episodes, std::uint64_t seed) {
  std::vector<State> out;
  for (int e = 0; e < episodes; ++e) run_episode(policy, derive_seed(seed, static_cast<std::uint64_t>(e)), out);
  return out;
}

std::vector<Demonstration> collect_demos(const Agent& expert, std::size_t n, const CollectOptions& options,
                                         std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("collect_demos: need at least one demonstration");
  std::vector<State> pool =
      options.sampling == DemoSampling::kOnPolicy
          ? state_pool(expert.policy, options.rollouts, n, derive_seed(seed, "demo-rollouts"))
          : sample_state_box(n, derive_seed(seed, "demo-box"));
  Rng rng(derive_seed(seed, "demo-pick"));
  shuffle_prefix(pool, n, rng);

  std::vector<Demonstration> demos;
  demos.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Demonstration d{pool[i], expert.policy(pool[i]), std::nullopt};
    if (options.mode == DemoMode::kExposeQ) d.q_values = expert.q(pool[i]);
    demos.push_back(std::move(d));
  }
  return demos;
}

Json demos_to_json(std::span<const Demonstration> demos, DemoMode mode) {
  Json list = Json::array();
  for (const auto& d : demos) {
    Json item = {{"state", {d.state[0], d.state[1], d.state[2], d.state[3]}}, {"action", to_index(d.action)}};
    if (mode == DemoMode::kExposeQ) {
      if (!d.q_values) throw std::invalid_argument("demos_to_json: expose-Q demo without Q-values");
      item["q_values"] = {(*d.q_values)[0], (*d.q_values)[1]};
    }
    list.push_back(std::move(item));
  }
  return {{"format", "cil.demos/1"},
          {"mode", mode == DemoMode::kExposeQ ? "expose_q" : "actions_only"},
          {"demos", std::move(list)}};
}

std::vector<Demonstration> demos_from_json(const Json& j, DemoMode* mode) {
  expect_format(j, "cil.demos/1");
  const std::string m = j.at("mode").get<std::string>();
  if (m != "expose_q" && m != "actions_only") throw std::runtime_error("demos: unknown mode '" + m + "'");
  const DemoMode parsed = m == "expose_q" ? DemoMode::kExposeQ : DemoMode::kActionsOnly;
  if (mode) *mode = parsed;
  std::vector<Demonstration> out;
  for (const auto& item : j.at("demos")) {
    const auto s = item.at("state").get<std::vector<double>>();
    if (s.size() != 4) throw std::runtime_error("demos: state must have 4 components");
    Demonstration d{State(s[0], s[1], s[2], s[3]), action_from_index(item.at("action").get<int>()), std::nullopt};
    if (parsed == DemoMode::kExposeQ) {
      const auto q = item.at("q_values").get<std::vector<double>>();
      if (q.size() != 2) throw std::runtime_error("demos: q_values must have 2 entries");
      d.q_values = Eigen::Vector2d(q[0], q[1]);
    }
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

EvalSummary summarize(std::vector<double> rewards) {
  EvalSummary s;
  s.histogram.assign(20, 0);
  s.rewards = std::move(rewards);
  if (s.rewards.empty()) return s;
  const double n = static_cast<double>(s.rewards.size());
  s.mean = std::accumulate(s.rewards.begin(), s.rewards.end(), 0.0) / n;
  double sq = 0.0;
  for (double r : s.rewards) sq += (r - s.mean) * (r - s.mean);
  s.stddev = std::sqrt(sq / n);
  std::vector<double> sorted = s.rewards;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  for (double r : s.rewards) {
    const int bin = std::clamp(static_cast<int>(std::floor(r / 10.0)), 0, 19);
    ++s.histogram[static_cast<std::size_t>(bin)];
  }
  return s;
}

EvalSummary evaluate(const Policy& policy, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluate: need at least one episode");
  std::vector<double> rewards;
  rewards.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    CartPole env;
    env.reset(derive_seed(seed, static_cast<std::uint64_t>(e)));
    double total = 0.0;
    while (!env.done()) total += env.step(policy(env.state())).reward;
    rewards.push_back(total);
  }
  return summarize(std::move(rewards));
}

std::optional<double> pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson: length mismatch");
  if (a.size() < 2) return std::nullopt;
  const Eigen::VectorXd da = a.array() - a.mean();
  const Eigen::VectorXd db = b.array() - b.mean();
  const double va = da.squaredNorm();
  const double vb = db.squaredNorm();
  if (va <= 1e-300 || vb <= 1e-300) return std::nullopt;
  return da.dot(db) / std::sqrt(va * vb);
}

QDifferenceStats q_difference_correlation(const QFunction& expert, const QFunction& agent,
                                          std::span<const State> states) {
  if (states.size() < 3) throw std::invalid_argument("q_difference_correlation: need at least 3 states");
  const auto n = static_cast<Eigen::Index>(states.size());
  QDifferenceStats out;
  out.expert_difference.resize(n);
  out.agent_difference.resize(n);
  int agree = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector2d qe = expert(states[static_cast<std::size_t>(i)]);
    const Eigen::Vector2d qa = agent(states[static_cast<std::size_t>(i)]);
    out.expert_difference[i] = qe[0] - qe[1];
    out.agent_difference[i] = qa[0] - qa[1];
    agree += greedy_action(qe) == greedy_action(qa);
  }
  out.agreement = static_cast<double>(agree) / static_cast<double>(n);
  out.pearson_r = pearson(out.expert_difference, out.agent_difference);
  return out;
}

WeightError weight_error(const WeightStack& reconstructed, const WeightStack& expert) {
  if (reconstructed.dimension() != expert.dimension()) {
    throw std::invalid_argument("weight_error: dimension mismatch");
  }
  const Eigen::VectorXd a = reconstructed.stacked();
  const Eigen::VectorXd b = expert.stacked();
  WeightError e;
  e.mean_abs_error = (a - b).cwiseAbs().mean();
  const double scale = b.cwiseAbs().mean();
  e.relative_error = scale > 0 ? e.mean_abs_error / scale
                               : (e.mean_abs_error == 0 ? 0.0 : std::numeric_limits<double>::infinity());
  return e;
}

// ---------------------------------------------------------------------------
// Reconstruction

Level1Problem<double> level1_problem(std::span<const Demonstration> demos, const Featurizer& featurizer) {
  std::vector<QDemo<double>> rows;
  rows.reserve(2 * demos.size());
  for (const auto& d : demos) {
    if (!d.q_values) throw std::invalid_argument("level1_problem: demonstration lacks Q-values");
    Eigen::VectorXd phi = featurizer.transform(d.state);
    rows.push_back({phi, Action::kLeft, (*d.q_values)[0]});
    rows.push_back({std::move(phi), Action::kRight, (*d.q_values)[1]});
  }
  return build_level1_problem<double>(rows);
}

Level2Problem<double> level2_problem(std::span<const Demonstration> demos, const Featurizer& featurizer,
                                     const Level2Settings& settings, std::uint64_t target_seed) {
  auto problem = build_level2_constraints<double>(action_demos(demos, featurizer));
  problem.epsilon = settings.epsilon;
  problem.lambda = settings.lambda;
  problem.w_target = make_random_target<double>(2 * featurizer.dimension(), settings.target_scale, target_seed);
  return problem;
}

LinearReconstruction reconstruct_level1(std::span<const Demonstration> demos, const Featurizer& featurizer,
                                        const Level1Settings& settings) {
  auto report = solve_level1(level1_problem(demos, featurizer), settings.solver);
  return {WeightStack::from_stacked(report.solution), std::move(report)};
}

LinearReconstruction reconstruct_level2(std::span<const Demonstration> demos, const Featurizer& featurizer,
                                        const Level2Settings& settings, std::uint64_t target_seed) {
  auto report = solve_level2(level2_problem(demos, featurizer, settings, target_seed), settings.solver);
  return {WeightStack::from_stacked(report.solution), std::move(report)};
}

ScanResult hyperparameter_scan(std::span<const Demonstration> demos, const Featurizer& featurizer,
                               const Level2Settings& base, std::span<const double> lambdas,
                               std::span<const double> epsilons, int episodes, std::uint64_t target_seed,
                               std::uint64_t eval_seed) {
  if (lambdas.empty() || epsilons.empty()) throw std::invalid_argument("hyperparameter_scan: empty grid");
  // Constraint rows and target do not depend on the grid point.
  const auto shared = level2_problem(demos, featurizer, base, target_seed);
  ScanResult out;
  double best_reward = -1.0;
  for (double lambda : lambdas) {
    for (double epsilon : epsilons) {
      auto problem = shared;
      problem.lambda = lambda;
      problem.epsilon = epsilon;
      auto report = solve_level2(problem, base.solver);
      WeightStack w = WeightStack::from_stacked(report.solution);
      const double reward = evaluate(make_greedy_policy(w, featurizer), episodes, eval_seed).mean;
      out.cells.push_back({lambda, epsilon, reward, sparsity_fraction(report.solution), report.converged});
      if (reward > best_reward) {
        best_reward = reward;
        out.best = out.cells.size() - 1;
        out.best_reconstruction = {std::move(w), std::move(report)};
      }
    }
  }
  return out;
}

BoostScanResult boost_scan(const QNetwork& net, std::span<const State> states, std::span<const Action> actions,
                           const BoostSettings& base, std::span<const double> lambdas,
                           std::span<const double> epsilons, int episodes, std::uint64_t eval_seed) {
  if (lambdas.empty() || epsilons.empty()) throw std::invalid_argument("boost_scan: empty grid");
  BoostScanResult out;
  double best_reward = -1.0;
  for (double lambda : lambdas) {
    for (double epsilon : epsilons) {
      BoostSettings settings = base;
      settings.lambda = lambda;
      settings.epsilon = epsilon;
      BoostResult boosted = cs_boost_last_layer(net, states, actions, settings);
      const double reward = evaluate(make_greedy_policy(boosted.network), episodes, eval_seed).mean;
      out.cells.push_back(
          {lambda, epsilon, reward, sparsity_fraction(boosted.network.head_stacked()), boosted.report.converged});
      if (reward > best_reward) {
        best_reward = reward;
        out.best = out.cells.size() - 1;
        out.best_boost = std::move(boosted);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Behavior cloning sweep

std::vector<BcSweepRow> bc_sample_sweep(const Agent& expert, const Featurizer& featurizer,
                                        std::span<const std::size_t> sizes, std::span<const std::uint64_t> seeds,
                                        const BcSweepOptions& options) {
  if (std::find(sizes.begin(), sizes.end(), std::size_t{0}) != sizes.end()) {
    throw std::invalid_argument("bc_sample_sweep: sample sizes must be positive");
  }
  const std::size_t largest = sizes.empty() ? 0 : *std::max_element(sizes.begin(), sizes.end());
  std::vector<BcSweepRow> rows;
  for (std::uint64_t seed : seeds) {
    const std::vector<State> pool =
        state_pool(expert.policy, options.rollouts, largest, derive_seed(seed, "bc-rollouts"));
    std::vector<ActionDemo<double>> labelled;
    labelled.reserve(pool.size());
    for (const auto& s : pool) labelled.push_back({featurizer.transform(s), expert.policy(s)});

    for (std::size_t size : sizes) {
      std::vector<ActionDemo<double>> draw = labelled;
      Rng rng(derive_seed(derive_seed(seed, "bc-pick"), static_cast<std::uint64_t>(size)));
      shuffle_prefix(draw, size, rng);
      draw.resize(size);
      BcConfig bc = options.bc;
      bc.seed = derive_seed(seed, "bc-train");
      const BcModel model = train_bc(draw, bc).model;
      const Policy policy = [model, featurizer](const State& s) {
        return bc_action(model, featurizer.transform(s));
      };
      const EvalSummary eval = evaluate(policy, options.eval_episodes, derive_seed(seed, "bc-eval"));
      rows.push_back({size, seed, eval.mean, eval.median});
    }
  }
  return rows;
}

std::vector<BcSweepRow> aggregate_sweep(std::span<const BcSweepRow> rows) {
  std::vector<std::size_t> sizes;
  for (const auto& r : rows) {
    if (r.seed != std::numeric_limits<std::uint64_t>::max() &&
        std::find(sizes.begin(), sizes.end(), r.size) == sizes.end()) {
      sizes.push_back(r.size);
    }
  }
  std::vector<BcSweepRow> out;
  for (std::size_t size : sizes) {
    std::vector<double> means, medians;
    for (const auto& r : rows) {
      if (r.size == size && r.seed != std::numeric_limits<std::uint64_t>::max()) {
        means.push_back(r.mean_reward);
        medians.push_back(r.median_reward);
      }
    }
    out.push_back({size, std::numeric_limits<std::uint64_t>::max(), summarize(means).mean,
                   summarize(medians).median});
  }
  return out;
}

std::string sweep_csv(std::span<const BcSweepRow> rows) {
  std::ostringstream os;
  os << "size,seed,mean_reward,median_reward\n";
  for (const auto& r : rows) {
    os << r.size << ',';
    if (r.seed == std::numeric_limits<std::uint64_t>::max()) {
      os << "all";
    } else {
      os << r.seed;
    }
    os << ',' << format_double(r.mean_reward) << ',' << format_double(r.median_reward) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Config

std::string to_string(Level level) {
  switch (level) {
    case Level::kOne: return "1";
    case Level::kTwo: return "2";
    case Level::kThree: return "3";
    case Level::kBc: return "bc";
  }
  return "?";
}

Level level_from_string(const std::string& text) {
  if (text == "1") return Level::kOne;
  if (text == "2") return Level::kTwo;
  if (text == "3") return Level::kThree;
  if (text == "bc") return Level::kBc;
  throw std::invalid_argument("unknown level '" + text + "' (expected 1, 2, 3 or bc)");
}

void ExperimentConfig::validate() const {
  if (demo_count < 1) throw std::invalid_argument("config: demo_count must be at least 1");
  if (bandwidths.empty()) throw std::invalid_argument("config: bandwidths must not be empty");
  if (fit_samples < 2) throw std::invalid_argument("config: fit_samples must be at least 2");
  if (lambda_grid.empty() || epsilon_grid.empty() || boost_lambda_grid.empty() || boost_epsilon_grid.empty()) throw std::invalid_argument("config: empty scan grid");
  if (scan_episodes < 1 || eval_episodes < 1) throw std::invalid_argument("config: episode counts must be positive");
  if (metric_states < 3) throw std::invalid_argument("config: metric_states must be at least 3");
  if (student_iterations < 0) throw std::invalid_argument("config: student_iterations must be non-negative");
  if (!(level2.target_scale > 0)) throw std::invalid_argument("config: target_scale must be positive");
  expert.validate();
  dqn_expert.validate();
  level1.solver.validate();
  level2.solver.validate();
  boost.solver.validate();
}

Json to_json(const ExperimentConfig& c) {
  Json j = {
      {"level", to_string(c.level)},
      {"demo_count", c.demo_count},
      {"seed", c.seed},
      {"sampling", to_string(c.sampling)},
      {"featurizer", {{"bandwidths", c.bandwidths}, {"fit_samples", c.fit_samples}}},
      {"expert",
       {{"episodes", c.expert.episodes},
        {"learning_rate", c.expert.learning_rate},
        {"discount", c.expert.discount},
        {"epsilon_start", c.expert.epsilon_start},
        {"epsilon_end", c.expert.epsilon_end},
        {"epsilon_decay_episodes", c.expert.epsilon_decay_episodes},
        {"keep_best", c.expert.keep_best}}},
      {"level1", {{"solver", solver_to_json(c.level1.solver)}}},
      {"level2",
       {{"epsilon", c.level2.epsilon},
        {"lambda", c.level2.lambda},
        {"target_scale", c.level2.target_scale},
        {"solver", solver_to_json(c.level2.solver)},
        {"lambda_grid", c.lambda_grid},
        {"epsilon_grid", c.epsilon_grid},
        {"scan_episodes", c.scan_episodes}}},
      {"level3",
       {{"dqn", dqn_to_json(c.dqn_expert)},
        {"student_iterations", c.student_iterations},
        {"boost",
         {{"objective", c.boost.objective == HeadObjective::kL1 ? "l1" : "nuclear"},
          {"epsilon", c.boost.epsilon},
          {"lambda", c.boost.lambda},
          {"solver", solver_to_json(c.boost.solver)},
          {"lambda_grid", c.boost_lambda_grid},
          {"epsilon_grid", c.boost_epsilon_grid}}}}},
      {"bc",
       {{"sizes", c.bc_sizes},
        {"seeds", c.bc_seeds},
        {"epochs", c.bc.bc.epochs},
        {"learning_rate", c.bc.bc.learning_rate},
        {"l2", c.bc.bc.l2},
        {"eval_episodes", c.bc.eval_episodes},
        {"rollouts", c.bc.rollouts}}},
      {"eval_episodes", c.eval_episodes},
      {"metric_states", c.metric_states},
  };
  j["expert_path"] = c.expert_path ? Json(c.expert_path->string()) : Json(nullptr);
  j["output_dir"] = c.output_dir ? Json(c.output_dir->string()) : Json(nullptr);
  return j;
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  ExperimentConfig c;
  static const Json kEmpty = Json::object();
  auto section = [&j](const char* key) -> const Json& { return j.contains(key) ? j.at(key) : kEmpty; };

  if (j.contains("level")) {
    const Json& l = j.at("level");
    c.level = level_from_string(l.is_number() ? std::to_string(l.get<int>()) : l.get<std::string>());
  }
  c.demo_count = j.value("demo_count", c.demo_count);
  c.seed = j.value("seed", c.seed);
  if (j.contains("sampling")) c.sampling = sampling_from_string(j.at("sampling").get<std::string>());

  const Json& f = section("featurizer");
  c.bandwidths = f.value("bandwidths", c.bandwidths);
  c.fit_samples = f.value("fit_samples", c.fit_samples);

  const Json& e = section("expert");
  c.expert.episodes = e.value("episodes", c.expert.episodes);
  c.expert.learning_rate = e.value("learning_rate", c.expert.learning_rate);
  c.expert.discount = e.value("discount", c.expert.discount);
  c.expert.epsilon_start = e.value("epsilon_start", c.expert.epsilon_start);
  c.expert.epsilon_end = e.value("epsilon_end", c.expert.epsilon_end);
  c.expert.epsilon_decay_episodes = e.value("epsilon_decay_episodes", c.expert.epsilon_decay_episodes);
  c.expert.keep_best = e.value("keep_best", c.expert.keep_best);

  const Json& l1 = section("level1");
  if (l1.contains("solver")) c.level1.solver = solver_from_json(l1.at("solver"), c.level1.solver);

  const Json& l2 = section("level2");
  c.level2.epsilon = l2.value("epsilon", c.level2.epsilon);
  c.level2.lambda = l2.value("lambda", c.level2.lambda);
  c.level2.target_scale = l2.value("target_scale", c.level2.target_scale);
  if (l2.contains("solver")) c.level2.solver = solver_from_json(l2.at("solver"), c.level2.solver);
  c.lambda_grid = l2.value("lambda_grid", c.lambda_grid);
  c.epsilon_grid = l2.value("epsilon_grid", c.epsilon_grid);
  c.scan_episodes = l2.value("scan_episodes", c.scan_episodes);

  const Json& l3 = section("level3");
  if (l3.contains("dqn")) c.dqn_expert = dqn_from_json(l3.at("dqn"), c.dqn_expert);
  c.student_iterations = l3.value("student_iterations", c.student_iterations);
  if (l3.contains("boost")) {
    const Json& b = l3.at("boost");
    if (b.contains("objective")) {
      const auto o = b.at("objective").get<std::string>();
      if (o != "l1" && o != "nuclear") throw std::invalid_argument("config: boost objective must be l1 or nuclear");
      c.boost.objective = o == "l1" ? HeadObjective::kL1 : HeadObjective::kNuclear;
    }
    c.boost.epsilon = b.value("epsilon", c.boost.epsilon);
    c.boost.lambda = b.value("lambda", c.boost.lambda);
    if (b.contains("solver")) c.boost.solver = solver_from_json(b.at("solver"), c.boost.solver);
    c.boost_lambda_grid = b.value("lambda_grid", c.boost_lambda_grid);
    c.boost_epsilon_grid = b.value("epsilon_grid", c.boost_epsilon_grid);
  }

  const Json& bc = section("bc");
  c.bc_sizes = bc.value("sizes", c.bc_sizes);
  c.bc_seeds = bc.value("seeds", c.bc_seeds);
  c.bc.bc.epochs = bc.value("epochs", c.bc.bc.epochs);
  c.bc.bc.learning_rate = bc.value("learning_rate", c.bc.bc.learning_rate);
  c.bc.bc.l2 = bc.value("l2", c.bc.bc.l2);
  c.bc.eval_episodes = bc.value("eval_episodes", c.bc.eval_episodes);
  c.bc.rollouts = bc.value("rollouts", c.bc.rollouts);

  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.metric_states = j.value("metric_states", c.metric_states);
  if (j.contains("expert_path") && !j.at("expert_path").is_null()) {
    c.expert_path = j.at("expert_path").get<std::string>();
  }
  if (j.contains("output_dir") && !j.at("output_dir").is_null()) {
    c.output_dir = j.at("output_dir").get<std::string>();
  }
  return c;
}

// ---------------------------------------------------------------------------
// Expert

Json to_json(const LinearExpert& expert) {
  return {{"format", "cil.expert/1"},
          {"featurizer", to_json(expert.featurizer)},
          {"weights", to_json(expert.weights)},
          {"episode_rewards", expert.episode_rewards}};
}

LinearExpert linear_expert_from_json(const Json& j) {
  expect_format(j, "cil.expert/1");
  LinearExpert e{featurizer_from_json(j.at("featurizer")), weights_from_json(j.at("weights")),
                 j.value("episode_rewards", std::vector<double>{})};
  if (e.weights.dimension() != e.featurizer.dimension()) {
    throw std::runtime_error("expert: weight dimension does not match the featurizer");
  }
  return e;
}

LinearExpert train_expert(const ExperimentConfig& config) {
  const auto samples = sample_state_box(config.fit_samples, derive_seed(config.seed, "fit-samples"));
  LinearExpert expert;
  expert.featurizer = Featurizer::fit(samples, config.bandwidths, derive_seed(config.seed, "featurizer"));
  QLearningConfig q = config.expert;
  q.seed = derive_seed(config.seed, "expert");
  auto result = train_linear_expert(expert.featurizer, q);
  expert.weights = std::move(result.weights);
  expert.episode_rewards = std::move(result.episode_rewards);
  return expert;
}

// ---------------------------------------------------------------------------
// Experiment

namespace {

struct Stage {
  ExperimentReport& out;
  std::string current;

  void begin(std::string name) { current = std::move(name); }
  void add_file(std::string name, std::string text) { out.files.emplace_back(std::move(name), std::move(text)); }
};

// Q-difference metrics on expert-visited and box-uniform states.
Json q_metrics(const ExperimentConfig& c, const Agent& expert, const Agent& agent, Stage& stage) {
  const auto n = static_cast<std::size_t>(c.metric_states);
  std::vector<State> visited = state_pool(expert.policy, 1, n, derive_seed(c.seed, "metric-visited"));
  Rng rng(derive_seed(c.seed, "metric-pick"));
  shuffle_prefix(visited, n, rng);
  visited.resize(n);
  const std::vector<State> uniform = sample_state_box(n, derive_seed(c.seed, "metric-box"));

  const auto on = q_difference_correlation(expert.q, agent.q, visited);
  const auto off = q_difference_correlation(expert.q, agent.q, uniform);
  stage.add_file("q_difference_visited.csv", scatter_csv(on));
  stage.add_file("q_difference_uniform.csv", scatter_csv(off));
  return {{"visited", qdiff_to_json(on)}, {"uniform", qdiff_to_json(off)}};
}

}  // namespace

double best_trailing_mean(const std::vector<double>& values, std::size_t window) {
  if (values.empty() || window == 0) return 0.0;
  if (values.size() <= window) return trailing_mean(values, window);
  double sum = std::accumulate(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(window), 0.0);
  double best = sum;
  for (std::size_t i = window; i < values.size(); ++i) {
    sum += values[i] - values[i - window];
    best = std::max(best, sum);
  }
  return best / static_cast<double>(window);
}

ExperimentReport run_experiment(const ExperimentConfig& config, const RunInputs& inputs) {
  ExperimentReport out;
  Stage stage{out, "config"};
  Json& r = out.report;
  r["config"] = to_json(config);
  r["level"] = to_string(config.level);
  try {
    config.validate();
    const std::uint64_t seed = config.seed;
    const std::uint64_t eval_seed = derive_seed(seed, "eval");

    if (config.level == Level::kThree) {
      stage.begin("dqn_expert");
      QNetwork expert_net;
      if (inputs.dqn_expert) {
        expert_net = *inputs.dqn_expert;
      } else if (config.expert_path) {
        expert_net = network_from_json(read_json(*config.expert_path));
      } else {
        DqnTrainConfig d = config.dqn_expert;
        d.seed = derive_seed(seed, "dqn-expert");
        auto trained = train_dqn(d);
        stage.add_file("expert_curve.csv", curve_csv(trained.episode_rewards));
        stage.add_file("dqn_expert.json", to_json(trained.network).dump(2));
        expert_net = std::move(trained.network);
      }
      const Agent expert = make_agent(expert_net);
      const EvalSummary expert_eval = evaluate(expert.policy, config.eval_episodes, eval_seed);
      r["expert"] = {{"eval", summary_to_json(expert_eval)}};

      stage.begin("student");
      DqnTrainConfig s = config.dqn_expert;
      s.iterations = config.student_iterations;
      s.seed = derive_seed(seed, "student");
      s.check_episodes = 0;
      const QNetwork student = train_dqn(s).network;
      const EvalSummary student_eval = evaluate(make_greedy_policy(student), config.eval_episodes, eval_seed);

      stage.begin("demos");
      CollectOptions opts;
      opts.sampling = config.sampling;
      const auto demos = inputs.demos ? *inputs.demos
                                      : collect_demos(expert, config.demo_count, opts, derive_seed(seed, "demos"));
      stage.add_file("demos.json", demos_to_json(demos, DemoMode::kActionsOnly).dump(2));
      std::vector<State> states;
      std::vector<Action> actions;
      for (const auto& d : demos) {
        states.push_back(d.state);
        actions.push_back(d.action);
      }

      stage.begin("boost");
      const BoostScanResult scan =
          boost_scan(student, states, actions, config.boost, config.boost_lambda_grid, config.boost_epsilon_grid,
                     config.scan_episodes, derive_seed(seed, "scan-eval"));
      const BoostResult& boosted = scan.best_boost;
      const auto& best = scan.cells[scan.best];
      r["scan"] = {{"cells", scan.cells.size()}, {"best_lambda", best.lambda}, {"best_epsilon", best.epsilon}};
      stage.add_file("scan.csv", scan_csv(scan.cells, scan.best));
      const Agent boosted_agent = make_agent(boosted.network);
      const EvalSummary boosted_eval = evaluate(boosted_agent.policy, config.eval_episodes, eval_seed);
      const double improvement =
          student_eval.median > 0 ? (boosted_eval.median - student_eval.median) / student_eval.median : 0.0;
      r["student"] = {{"eval", summary_to_json(student_eval)},
                      {"head_sparsity", sparsity_fraction(student.head_stacked())}};
      r["boosted"] = {{"eval", summary_to_json(boosted_eval)},
                      {"head_sparsity", sparsity_fraction(boosted.network.head_stacked())},
                      {"solver", report_to_json(boosted.report)},
                      {"relative_improvement", improvement}};
      r["boosted"]["q_difference"] = q_metrics(config, expert, boosted_agent, stage);
      stage.add_file("reward_histogram.csv", histogram_csv(boosted_eval));
      stage.add_file("student.json", to_json(student).dump(2));
      stage.add_file("boosted.json", to_json(boosted.network).dump(2));
      stage.add_file("head_weights.csv", weights_csv(WeightStack::from_stacked(boosted.network.head_stacked()),
                                                    WeightStack::from_stacked(student.head_stacked())));
    } else {
      stage.begin("expert");
      LinearExpert expert;
      if (inputs.expert) {
        expert = *inputs.expert;
      } else if (config.expert_path) {
        expert = linear_expert_from_json(read_json(*config.expert_path));
      } else {
        expert = train_expert(config);
        stage.add_file("expert.json", to_json(expert).dump(2));
      }
      if (!expert.episode_rewards.empty()) stage.add_file("expert_curve.csv", curve_csv(expert.episode_rewards));
      const Featurizer& featurizer = expert.featurizer;
      const Agent expert_agent = make_agent(expert.weights, featurizer);
      const EvalSummary expert_eval = evaluate(expert_agent.policy, config.eval_episodes, eval_seed);
      r["expert"] = {{"eval", summary_to_json(expert_eval)}};
      if (!expert.episode_rewards.empty()) {
        r["expert"]["best_trailing_reward"] = best_trailing_mean(expert.episode_rewards);
        r["expert"]["final_trailing_reward"] = trailing_mean(expert.episode_rewards);
      }

      if (config.level == Level::kBc) {
        stage.begin("bc_sweep");
        const auto rows = bc_sample_sweep(expert_agent, featurizer, config.bc_sizes, config.bc_seeds, config.bc);
        const auto agg = aggregate_sweep(rows);
        Json table = Json::array();
        for (const auto& a : agg) {
          table.push_back({{"size", a.size}, {"mean_reward", a.mean_reward}, {"median_reward", a.median_reward}});
        }
        r["bc"] = table;
        std::vector<BcSweepRow> all = rows;
        all.insert(all.end(), agg.begin(), agg.end());
        stage.add_file("bc_sweep.csv", sweep_csv(all));
      } else {
        stage.begin("demos");
        CollectOptions opts;
        opts.mode = config.level == Level::kOne ? DemoMode::kExposeQ : DemoMode::kActionsOnly;
        opts.sampling = config.sampling;
        const auto demos = inputs.demos
                               ? *inputs.demos
                               : collect_demos(expert_agent, config.demo_count, opts, derive_seed(seed, "demos"));

        stage.add_file("demos.json", demos_to_json(demos, opts.mode).dump(2));

        stage.begin("reconstruct");
        LinearReconstruction rec;
        WeightStack reference = expert.weights;
        if (config.level == Level::kOne) {
          rec = reconstruct_level1(demos, featurizer, config.level1);
        } else {
          const std::uint64_t target_seed = derive_seed(seed, "target");
          auto scan = hyperparameter_scan(demos, featurizer, config.level2, config.lambda_grid, config.epsilon_grid,
                                          config.scan_episodes, target_seed, derive_seed(seed, "scan-eval"));
          const auto& best = scan.cells[scan.best];
          r["scan"] = {{"cells", scan.cells.size()}, {"best_lambda", best.lambda}, {"best_epsilon", best.epsilon}};
          stage.add_file("scan.csv", scan_csv(scan.cells, scan.best));
          rec = std::move(scan.best_reconstruction);
        }

        stage.begin("evaluate");
        const Agent agent = make_agent(rec.weights, featurizer);
        const EvalSummary eval = evaluate(agent.policy, config.eval_episodes, eval_seed);
        const WeightError err = weight_error(rec.weights, reference);
        r["agent"] = {{"eval", summary_to_json(eval)},
                      {"sparsity", sparsity_fraction(rec.weights.stacked())},
                      {"expert_sparsity", sparsity_fraction(reference.stacked())},
                      {"weight_error", {{"mean_abs", err.mean_abs_error}, {"relative", err.relative_error}}},
                      {"solver", report_to_json(rec.report)}};
        r["agent"]["q_difference"] = q_metrics(config, expert_agent, agent, stage);
        stage.add_file("reward_histogram.csv", histogram_csv(eval));
        stage.add_file("weights.csv", weights_csv(rec.weights, reference));
        stage.add_file("agent.json", to_json(LinearExpert{featurizer, rec.weights, {}}).dump(2));
      }
    }
  } catch (const std::exception& e) {
    out.ok = false;
    r["failed_stage"] = stage.current;
    r["error"] = e.what();
  }
  if (config.output_dir) write_report(out, *config.output_dir);
  return out;
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_json(dir / "report.json", report.report);
  for (const auto& [name, text] : report.files) write_text_atomic(dir / name, text);
}

std::string histogram_csv(const EvalSummary& summary) {
  std::ostringstream os;
  os << "bin_low,bin_high,count\n";
  for (std::size_t i = 0; i < summary.histogram.size(); ++i) {
    os << 10 * i << ',' << 10 * (i + 1) << ',' << summary.histogram[i] << '\n';
  }
  return os.str();
}

std::string scatter_csv(const QDifferenceStats& stats) {
  std::ostringstream os;
  os << "expert_difference,agent_difference\n";
  for (Eigen::Index i = 0; i < stats.expert_difference.size(); ++i) {
    os << format_double(stats.expert_difference[i]) << ',' << format_double(stats.agent_difference[i]) << '\n';
  }
  return os.str();
}

std::string weights_csv(const WeightStack& reconstructed, const WeightStack& reference) {
  const Eigen::VectorXd a = reconstructed.stacked();
  const Eigen::VectorXd b = reference.stacked();
  if (a.size() != b.size()) throw std::invalid_argument("weights_csv: dimension mismatch");
  std::ostringstream os;
  os << "index,action,reconstructed,reference\n";
  const Eigen::Index half = a.size() / 2;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    os << i % half << ',' << i / half << ',' << format_double(a[i]) << ',' << format_double(b[i]) << '\n';
  }
  return os.str();
}

std::string scan_csv(std::span<const ScanCell> cells, std::size_t best) {
  std::ostringstream os;
  os << "lambda,epsilon,mean_reward,sparsity,converged,selected\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    os << format_double(c.lambda) << ',' << format_double(c.epsilon) << ',' << format_double(c.mean_reward) << ','
       << format_double(c.sparsity) << ',' << c.converged << ',' << (i == best) << '\n';
  }
  return os.str();
}

std::string curve_csv(const std::vector<double>& episode_rewards) {
  std::ostringstream os;
  os << "episode,reward,trailing_mean\n";
  double window = 0.0;
  for (std::size_t i = 0; i < episode_rewards.size(); ++i) {
    window += episode_rewards[i];
    if (i >= 100) window -= episode_rewards[i - 100];
    const double n = static_cast<double>(std::min<std::size_t>(i + 1, 100));
    os << i << ',' << format_double(episode_rewards[i]) << ',' << format_double(window / n) << '\n';
  }
  return os.str();
}

}  // namespace cil
