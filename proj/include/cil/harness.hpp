#pragma once

#include "cil/baselines.hpp"
#include "cil/cartpole.hpp"
#include "cil/dqn.hpp"
#include "cil/featurizer.hpp"
#include "cil/linear_expert.hpp"
#include "cil/serialization.hpp"
#include "cil/sparse_solver.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cil {

/// Q-values of both actions for a state.
using QFunction = std::function<Eigen::Vector2d(const State&)>;

/// Anything that can act greedily and report its Q-values.
struct Agent {
  Policy policy;
  QFunction q;
};

Agent make_agent(const WeightStack& weights, const Featurizer& featurizer);
Agent make_agent(const QNetwork& net);

// ---------------------------------------------------------------------------
// Demonstrations

enum class DemoMode { kExposeQ, kActionsOnly };
enum class DemoSampling { kOnPolicy, kUniformBox };

struct Demonstration {
  State state;
  Action action = Action::kLeft;
  /// Present only for demos collected in expose-Q mode.
  std::optional<Eigen::Vector2d> q_values;
};

struct CollectOptions {
  DemoMode mode = DemoMode::kActionsOnly;
  DemoSampling sampling = DemoSampling::kOnPolicy;
  /// Expert rollouts that form the pool of visited states; more are run
  /// until the pool holds at least n states.
  int rollouts = 5;
};

/// Roll the expert out greedily, then draw n distinct visited states
/// uniformly without replacement and label each with the expert's action
/// (and Q-values in expose-Q mode). With kUniformBox the states come from
/// the fitting box instead. Throws std::invalid_argument for n < 1.
std::vector<Demonstration> collect_demos(const Agent& expert, std::size_t n, const CollectOptions& options,
                                         std::uint64_t seed);

Json demos_to_json(std::span<const Demonstration> demos, DemoMode mode);
std::vector<Demonstration> demos_from_json(const Json& j, DemoMode* mode = nullptr);

/// Greedy expert rollouts; every visited state (pre-action).
std::vector<State> visited_states(const Policy& policy, int episodes, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Metrics

struct EvalSummary {
  std::vector<double> rewards;
  double mean = 0;
  double median = 0;
  double stddev = 0;
  /// Counts over [0, 10), [10, 20), ..., [190, 200].
  std::vector<int> histogram;
};

EvalSummary summarize(std::vector<double> rewards);

/// Greedy rollouts; episode e starts from reset(derive_seed(seed, e)).
EvalSummary evaluate(const Policy& policy, int episodes, std::uint64_t seed);

struct QDifferenceStats {
  /// Pearson r between expert and agent Q(s,0) - Q(s,1); empty when either
  /// side has zero variance.
  std::optional<double> pearson_r;
  /// Fraction of states where both pick the same greedy action.
  double agreement = 0;
  Eigen::VectorXd expert_difference;
  Eigen::VectorXd agent_difference;
};

/// Throws std::invalid_argument for fewer than 3 states.
QDifferenceStats q_difference_correlation(const QFunction& expert, const QFunction& agent,
                                          std::span<const State> states);

std::optional<double> pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct WeightError {
  double mean_abs_error = 0;
  /// mean_abs_error / mean |expert component|.
  double relative_error = 0;
};

/// Throws std::invalid_argument on dimension mismatch.
WeightError weight_error(const WeightStack& reconstructed, const WeightStack& expert);

// ---------------------------------------------------------------------------
// Reconstruction pipelines

struct Level1Settings {
  SolverConfig solver;
};

struct Level2Settings {
  double epsilon = 0.1;
  double lambda = 1.0;
  double target_scale = 0.1;
  SolverConfig solver;
};

/// Each expose-Q demo contributes one row per action (both Q-values are
/// observed). Throws if a demo lacks Q-values.
Level1Problem<double> level1_problem(std::span<const Demonstration> demos, const Featurizer& featurizer);
Level2Problem<double> level2_problem(std::span<const Demonstration> demos, const Featurizer& featurizer,
                                     const Level2Settings& settings, std::uint64_t target_seed);

struct LinearReconstruction {
  WeightStack weights;
  SolveReport<double> report;
};

LinearReconstruction reconstruct_level1(std::span<const Demonstration> demos, const Featurizer& featurizer,
                                        const Level1Settings& settings);
LinearReconstruction reconstruct_level2(std::span<const Demonstration> demos, const Featurizer& featurizer,
                                        const Level2Settings& settings, std::uint64_t target_seed);

struct ScanCell {
  double lambda = 0;
  double epsilon = 0;
  double mean_reward = 0;
  double sparsity = 0;
  bool converged = false;
};

struct ScanResult {
  std::vector<ScanCell> cells;
  std::size_t best = 0;
  LinearReconstruction best_reconstruction;
};

/// Solve Level 2 over the (lambda, epsilon) grid and score each cell by the
/// agent's own greedy rollouts (no expert queries). Ties keep the earlier
/// cell. Throws std::invalid_argument for an empty grid.
ScanResult hyperparameter_scan(std::span<const Demonstration> demos, const Featurizer& featurizer,
                               const Level2Settings& base, std::span<const double> lambdas,
                               std::span<const double> epsilons, int episodes, std::uint64_t target_seed,
                               std::uint64_t eval_seed);

struct BoostScanResult {
  std::vector<ScanCell> cells;
  std::size_t best = 0;
  BoostResult best_boost;
};

/// The same scan for the last-layer boost: every (lambda, epsilon) cell
/// boosts `net` and is scored by the boosted network's own greedy rollouts.
BoostScanResult boost_scan(const QNetwork& net, std::span<const State> states, std::span<const Action> actions,
                           const BoostSettings& base, std::span<const double> lambdas,
                           std::span<const double> epsilons, int episodes, std::uint64_t eval_seed);

// ---------------------------------------------------------------------------
// Behavior cloning sweep

struct BcSweepRow {
  std::size_t size = 0;
  std::uint64_t seed = 0;
  double mean_reward = 0;
  double median_reward = 0;

  friend bool operator==(const BcSweepRow&, const BcSweepRow&) = default;
};

struct BcSweepOptions {
  BcConfig bc;
  int eval_episodes = 20;
  /// Expert rollouts pooled per seed before drawing training states.
  int rollouts = 20;
};

/// For each (size, seed) draw `size` expert state-action pairs on-policy,
/// train a clone and evaluate it. Throws std::invalid_argument if any size is 0.
std::vector<BcSweepRow> bc_sample_sweep(const Agent& expert, const Featurizer& featurizer,
                                        std::span<const std::size_t> sizes, std::span<const std::uint64_t> seeds,
                                        const BcSweepOptions& options);

/// Per-size aggregate over seeds: mean of the per-seed means and median of
/// the per-seed medians; such rows carry seed = UINT64_MAX.
std::vector<BcSweepRow> aggregate_sweep(std::span<const BcSweepRow> rows);

std::string sweep_csv(std::span<const BcSweepRow> rows);

// ---------------------------------------------------------------------------
// Experiment orchestration

enum class Level { kOne, kTwo, kThree, kBc };

std::string to_string(Level level);
Level level_from_string(const std::string& text);

struct ExperimentConfig {
  Level level = Level::kTwo;
  std::size_t demo_count = 21;
  std::uint64_t seed = 0;
  DemoSampling sampling = DemoSampling::kOnPolicy;

  // Featurizer
  std::vector<double> bandwidths = default_bandwidths();
  std::size_t fit_samples = 20000;

  // Linear expert
  QLearningConfig expert;

  // Sparse solver (lambda/epsilon grids drive the Level 2 scan; a 1x1 grid
  // is a plain run).
  Level1Settings level1;
  Level2Settings level2;
  // lambda * target_scale stays well below 1 so the L1 term, not the dense
  // random target, shapes the solution.
  std::vector<double> lambda_grid = {0.03, 0.1, 0.3, 1.0, 3.0};
  std::vector<double> epsilon_grid = {0.03, 0.1, 0.3, 1.0, 3.0};
  int scan_episodes = 20;

  // Level 3
  DqnTrainConfig dqn_expert;
  int student_iterations = 1000;
  BoostSettings boost;
  std::vector<double> boost_lambda_grid = {0.1, 1.0, 10.0, 100.0};
  std::vector<double> boost_epsilon_grid = {0.01, 0.1, 1.0};

  // Behavior cloning
  std::vector<std::size_t> bc_sizes = {10, 21, 50, 100, 200, 500, 1000, 2000};
  std::vector<std::uint64_t> bc_seeds = {0, 1, 2};
  BcSweepOptions bc;

  int eval_episodes = 100;
  /// States used for the Q-difference metrics, per regime.
  int metric_states = 500;

  /// Reuse a saved expert (cil.expert/1, or cil.qnetwork/1 for Level 3)
  /// instead of training one.
  std::optional<std::filesystem::path> expert_path;
  std::optional<std::filesystem::path> output_dir;

  void validate() const;
};

Json to_json(const ExperimentConfig& config);
/// Missing keys keep their defaults.
ExperimentConfig experiment_config_from_json(const Json& j);

/// Expert plus the featurizer it was trained on.
struct LinearExpert {
  Featurizer featurizer;
  WeightStack weights;
  std::vector<double> episode_rewards;
};

Json to_json(const LinearExpert& expert);
LinearExpert linear_expert_from_json(const Json& j);

/// Highest mean over any `window` consecutive entries (the plain mean when
/// fewer exist).
double best_trailing_mean(const std::vector<double>& values, std::size_t window = 100);

/// Fit the featurizer and train the expert from the config's seeds.
LinearExpert train_expert(const ExperimentConfig& config);

/// Precomputed pieces for run_experiment; null members are produced by the
/// pipeline. Level 3 uses dqn_expert, the other levels use expert.
struct RunInputs {
  const LinearExpert* expert = nullptr;
  const QNetwork* dqn_expert = nullptr;
  const std::vector<Demonstration>* demos = nullptr;
};

struct ExperimentReport {
  Json report;
  /// file name -> contents (CSV plot data, saved models), written next to
  /// report.json.
  std::vector<std::pair<std::string, std::string>> files;
  bool ok = true;
};

/// Train or load the expert, collect demos, reconstruct, evaluate, and
/// compute metrics for the configured level. A failing stage is recorded as
/// {"failed_stage", "error"} and ok=false; finished stages stay in the
/// report. Writes report.json and the CSV files when output_dir is set.
ExperimentReport run_experiment(const ExperimentConfig& config, const RunInputs& inputs = {});

void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

std::string histogram_csv(const EvalSummary& summary);
std::string scatter_csv(const QDifferenceStats& stats);
std::string weights_csv(const WeightStack& reconstructed, const WeightStack& reference);
std::string scan_csv(std::span<const ScanCell> cells, std::size_t best);
std::string curve_csv(const std::vector<double>& episode_rewards);

}  // namespace cil
