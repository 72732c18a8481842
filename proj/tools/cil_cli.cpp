// cil: command-line front end for the imitation pipeline.
//
//   cil train-expert        --out-dir runs/expert
//   cil collect-demos       --expert runs/expert/expert.json --n 21 --mode expose_q
//   cil reconstruct --level 1 --expert runs/expert/expert.json --demos demos.json
//   cil evaluate            --policy runs/l1/agent.json
//
// Every command takes --seed, --out-dir and --config (JSON, see README).
// Exit status: 0 on success, 1 when a stage fails, 2 on bad usage.

#include "cil/harness.hpp"
#include "cil/rng.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace cil;

namespace {

struct StageError : std::runtime_error {
  StageError(std::string stage, const std::string& what) : std::runtime_error(what), stage(std::move(stage)) {}
  std::string stage;
};

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string config_path;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Root seed (overrides the config file)");
  cmd->add_option("--out-dir", c.out_dir, "Directory for outputs")->capture_default_str();
  cmd->add_option("--config", c.config_path, "JSON experiment config")->check(CLI::ExistingFile);
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig config;
  if (!c.config_path.empty()) {
    try {
      config = experiment_config_from_json(read_json(c.config_path));
    } catch (const std::exception& e) {
      throw StageError("config", e.what());
    }
  }
  if (c.seed) config.seed = *c.seed;
  config.output_dir = c.out_dir;
  return config;
}

template <typename F>
auto stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

// A saved model that can act: a linear expert/agent or a Q-network.
struct LoadedModel {
  std::optional<LinearExpert> linear;
  std::optional<QNetwork> network;

  Agent agent() const { return linear ? make_agent(linear->weights, linear->featurizer) : make_agent(*network); }
};

LoadedModel load_model(const fs::path& path) {
  return stage("load " + path.string(), [&] {
    const Json j = read_json(path);
    const std::string format = j.value("format", "");
    LoadedModel m;
    if (format == "cil.expert/1") {
      m.linear = linear_expert_from_json(j);
    } else if (format == "cil.qnetwork/1") {
      m.network = network_from_json(j);
    } else {
      throw std::runtime_error("expected a cil.expert/1 or cil.qnetwork/1 document, got '" + format + "'");
    }
    return m;
  });
}

void write_out(const fs::path& dir, const std::string& name, const std::string& text) {
  stage("write", [&] {
    fs::create_directories(dir);
    write_text_atomic(dir / name, text);
    return 0;
  });
}

int finish(const ExperimentReport& report) {
  if (!report.ok) {
    throw StageError(report.report.value("failed_stage", "unknown"), report.report.value("error", ""));
  }
  return 0;
}

void print_eval(const char* label, const EvalSummary& s) {
  std::cout << label << ": mean " << s.mean << ", median " << s.median << ", stddev " << s.stddev << " over "
            << s.rewards.size() << " episodes\n";
}

void print_experiment(const ExperimentReport& report) {
  const Json& r = report.report;
  for (const char* key : {"expert", "agent", "student", "boosted"}) {
    if (r.contains(key) && r[key].contains("eval")) {
      const Json& e = r[key]["eval"];
      std::cout << key << ": mean " << e["mean"] << ", median " << e["median"] << '\n';
    }
  }
  if (r.contains("agent")) {
    std::cout << "sparsity " << r["agent"]["sparsity"] << ", r(visited) " << r["agent"]["q_difference"]["visited"]["pearson_r"]
              << '\n';
  }
  if (r.contains("boosted")) std::cout << "relative improvement " << r["boosted"]["relative_improvement"] << '\n';
  if (r.contains("bc")) {
    for (const auto& row : r["bc"]) std::cout << "bc " << row["size"] << ": mean " << row["mean_reward"] << '\n';
  }
}

std::vector<std::string> split_dirs(const std::vector<std::string>& inputs) {
  std::vector<std::string> dirs;
  for (const auto& in : inputs) {
    if (fs::is_regular_file(fs::path(in) / "report.json")) {
      dirs.push_back(in);
      continue;
    }
    // A parent directory: pick up every run below it.
    if (fs::is_directory(in)) {
      std::vector<std::string> found;
      for (const auto& entry : fs::recursive_directory_iterator(in)) {
        if (entry.is_regular_file() && entry.path().filename() == "report.json") {
          found.push_back(entry.path().parent_path().string());
        }
      }
      std::sort(found.begin(), found.end());
      dirs.insert(dirs.end(), found.begin(), found.end());
    }
  }
  return dirs;
}

Json pick(const Json& j, std::initializer_list<const char*> path) {
  const Json* cur = &j;
  for (const char* key : path) {
    if (!cur->is_object() || !cur->contains(key)) return nullptr;
    cur = &(*cur)[key];
  }
  return *cur;
}

std::string cell(const Json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compressed-sensing imitation learning on CartPole"};
  app.require_subcommand(1);

  Common common;
  std::string expert_path, demos_path, policy_path, mode = "actions_only", sampling, level;
  int episodes = 0, iterations = 0, trials = 200;
  std::size_t n = 0;
  std::vector<std::size_t> sizes, ks = {1, 2, 3, 5, 10};
  std::vector<std::uint64_t> bc_seeds;
  std::vector<double> lambdas, epsilons;
  std::vector<std::string> inputs;

  auto* train = app.add_subcommand("train-expert", "Train the linear Q-learning expert");
  add_common(train, common);
  train->add_option("--episodes", episodes, "Training episodes (overrides the config)");

  auto* train_dqn_cmd = app.add_subcommand("train-dqn-expert", "Train the DQN expert used at level 3");
  add_common(train_dqn_cmd, common);
  train_dqn_cmd->add_option("--iterations", iterations, "Gradient steps (overrides the config)");

  auto* collect = app.add_subcommand("collect-demos", "Sample expert demonstrations");
  add_common(collect, common);
  collect->add_option("--expert", expert_path, "Saved expert (cil.expert/1 or cil.qnetwork/1)")
      ->required()
      ->check(CLI::ExistingFile);
  collect->add_option("--n", n, "Number of demonstrations (default: config demo_count)");
  collect->add_option("--mode", mode, "expose_q or actions_only")
      ->check(CLI::IsMember({"expose_q", "actions_only"}))
      ->capture_default_str();
  collect->add_option("--sampling", sampling, "on_policy or uniform_box")
      ->check(CLI::IsMember({"on_policy", "uniform_box"}));

  auto* recon = app.add_subcommand("reconstruct", "Recover an agent from demonstrations");
  add_common(recon, common);
  recon->add_option("--level", level, "1, 2 or 3")->required()->check(CLI::IsMember({"1", "2", "3"}));
  recon->add_option("--expert", expert_path, "Saved expert; trained from the config when absent")
      ->check(CLI::ExistingFile);
  recon->add_option("--demos", demos_path, "Demonstrations from collect-demos")->check(CLI::ExistingFile);
  recon->add_option("--n", n, "Number of demonstrations to collect when --demos is absent");

  auto* eval = app.add_subcommand("evaluate", "Greedy rollouts of a saved policy");
  add_common(eval, common);
  eval->add_option("--policy", policy_path, "Saved model (cil.expert/1 or cil.qnetwork/1)")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--episodes", episodes, "Episodes (default: config eval_episodes)");

  auto* bench = app.add_subcommand("bench-bc", "Behavior-cloning sample-size sweep");
  add_common(bench, common);
  bench->add_option("--expert", expert_path, "Saved linear expert")->check(CLI::ExistingFile);
  bench->add_option("--sizes", sizes, "Training-set sizes");
  bench->add_option("--bc-seeds", bc_seeds, "Draw seeds per size");

  auto* scan = app.add_subcommand("scan", "Level 2 (lambda, epsilon) grid scored by agent rollouts");
  add_common(scan, common);
  scan->add_option("--expert", expert_path, "Saved linear expert")->check(CLI::ExistingFile);
  scan->add_option("--demos", demos_path, "Demonstrations from collect-demos")->check(CLI::ExistingFile);
  scan->add_option("--lambdas", lambdas, "lambda grid");
  scan->add_option("--epsilons", epsilons, "epsilon grid");

  auto* rip = app.add_subcommand("rip-check", "Sampled restricted-isometry constants of the Level 2 matrix");
  add_common(rip, common);
  rip->add_option("--expert", expert_path, "Saved linear expert")->check(CLI::ExistingFile);
  rip->add_option("--k", ks, "Sparsity levels")->capture_default_str();
  rip->add_option("--trials", trials, "Random supports per level")->capture_default_str();
  rip->add_option("--n", n, "Number of demonstrations (rows)");

  auto* report = app.add_subcommand("report", "Summarize report.json files into one CSV");
  add_common(report, common);
  report->add_option("inputs", inputs, "Run directories or parents of run directories")->required();

  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    ExperimentConfig config = resolve(common);
    const fs::path out = config.output_dir.value();
    std::optional<LinearExpert> linear;
    std::optional<QNetwork> network;
    std::optional<std::vector<Demonstration>> demos;
    if (!expert_path.empty()) {
      LoadedModel m = load_model(expert_path);
      linear = std::move(m.linear);
      network = std::move(m.network);
    }
    if (!demos_path.empty()) {
      demos = stage("load demos", [&] { return demos_from_json(read_json(demos_path)); });
    }
    if (n > 0) config.demo_count = n;
    if (!sampling.empty()) config.sampling = sampling == "on_policy" ? DemoSampling::kOnPolicy : DemoSampling::kUniformBox;
    stage("config", [&] {
      config.validate();
      return 0;
    });

    RunInputs run_inputs;
    if (linear) run_inputs.expert = &*linear;
    if (network) run_inputs.dqn_expert = &*network;
    if (demos) run_inputs.demos = &*demos;

    if (*train) {
      if (episodes > 0) config.expert.episodes = episodes;
      const LinearExpert expert = stage("train", [&] { return train_expert(config); });
      const EvalSummary s =
          stage("evaluate", [&] { return evaluate(make_greedy_policy(expert.weights, expert.featurizer),
                                                  config.eval_episodes, derive_seed(config.seed, "eval")); });
      write_out(out, "expert.json", to_json(expert).dump(2));
      write_out(out, "expert_curve.csv", curve_csv(expert.episode_rewards));
      write_out(out, "reward_histogram.csv", histogram_csv(s));
      const Json summary = {{"config", to_json(config)},
                            {"best_trailing_reward", best_trailing_mean(expert.episode_rewards)},
                            {"final_trailing_reward", trailing_mean(expert.episode_rewards)},
                            {"eval_mean", s.mean},
                            {"eval_median", s.median}};
      write_out(out, "report.json", summary.dump(2));
      std::cout << "best trailing-100 reward " << summary["best_trailing_reward"] << '\n';
      print_eval("greedy evaluation", s);
      return 0;
    }

    if (*train_dqn_cmd) {
      DqnTrainConfig d = config.dqn_expert;
      if (iterations > 0) d.iterations = iterations;
      d.seed = derive_seed(config.seed, "dqn-expert");
      const DqnTrainResult trained = stage("train", [&] { return train_dqn(d); });
      const EvalSummary s = stage("evaluate", [&] {
        return evaluate(make_greedy_policy(trained.network), config.eval_episodes, derive_seed(config.seed, "eval"));
      });
      write_out(out, "dqn_expert.json", to_json(trained.network).dump(2));
      write_out(out, "expert_curve.csv", curve_csv(trained.episode_rewards));
      write_out(out, "reward_histogram.csv", histogram_csv(s));
      config.dqn_expert = d;
      write_out(out, "report.json",
                Json({{"config", to_json(config)}, {"eval_mean", s.mean}, {"eval_median", s.median}}).dump(2));
      print_eval("greedy evaluation", s);
      return 0;
    }

    if (*collect) {
      CollectOptions opts;
      opts.mode = mode == "expose_q" ? DemoMode::kExposeQ : DemoMode::kActionsOnly;
      opts.sampling = config.sampling;
      const LoadedModel m{linear, network};
      const auto collected = stage("collect", [&] {
        return collect_demos(m.agent(), config.demo_count, opts, derive_seed(config.seed, "demos"));
      });
      write_out(out, "demos.json", demos_to_json(collected, opts.mode).dump(2));
      std::cout << "wrote " << collected.size() << " demonstrations to " << (out / "demos.json").string() << '\n';
      return 0;
    }

    if (*recon) {
      config.level = level_from_string(level);
      if (config.level == Level::kThree && linear) {
        throw StageError("config", "level 3 needs a cil.qnetwork/1 expert");
      }
      if (config.level != Level::kThree && network) {
        throw StageError("config", "levels 1 and 2 need a cil.expert/1 expert");
      }
      const ExperimentReport r = run_experiment(config, run_inputs);
      print_experiment(r);
      return finish(r);
    }

    if (*eval) {
      if (episodes > 0) config.eval_episodes = episodes;
      const LoadedModel m = load_model(policy_path);
      const EvalSummary s = stage("evaluate", [&] {
        return evaluate(m.agent().policy, config.eval_episodes, derive_seed(config.seed, "eval"));
      });
      write_out(out, "reward_histogram.csv", histogram_csv(s));
      write_out(out, "report.json",
                Json({{"policy", policy_path},
                      {"seed", config.seed},
                      {"episodes", config.eval_episodes},
                      {"mean", s.mean},
                      {"median", s.median},
                      {"stddev", s.stddev},
                      {"rewards", s.rewards}})
                    .dump(2));
      print_eval("evaluation", s);
      return 0;
    }

    if (*bench) {
      config.level = Level::kBc;
      if (!sizes.empty()) config.bc_sizes = sizes;
      if (!bc_seeds.empty()) config.bc_seeds = bc_seeds;
      const ExperimentReport r = run_experiment(config, run_inputs);
      print_experiment(r);
      return finish(r);
    }

    if (*scan) {
      config.level = Level::kTwo;
      if (!lambdas.empty()) config.lambda_grid = lambdas;
      if (!epsilons.empty()) config.epsilon_grid = epsilons;
      const ExperimentReport r = run_experiment(config, run_inputs);
      for (const auto& [name, text] : r.files) {
        if (name == "scan.csv") std::cout << text;
      }
      print_experiment(r);
      return finish(r);
    }

    if (*rip) {
      const LinearExpert expert = linear ? *linear : stage("train", [&] { return train_expert(config); });
      const Agent agent = make_agent(expert.weights, expert.featurizer);
      const auto collected = stage("collect", [&] {
        return collect_demos(agent, config.demo_count, {}, derive_seed(config.seed, "demos"));
      });
      const Level2Problem<double> problem =
          level2_problem(collected, expert.featurizer, config.level2, derive_seed(config.seed, "target"));
      const Eigen::MatrixXd a = normalize_columns<double>(problem.A);
      // Same-shape Gaussian matrix for comparison.
      Rng rng(derive_seed(config.seed, "rip-gaussian"));
      Eigen::MatrixXd g(a.rows(), a.cols());
      for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
      g = normalize_columns<double>(g);

      std::ostringstream csv;
      csv << "k,matrix,delta,min_eigenvalue,max_eigenvalue\n";
      Json rows = Json::array();
      for (std::size_t k : ks) {
        for (const auto& [name, m] : {std::pair<const char*, const Eigen::MatrixXd*>{"demos", &a}, {"gaussian", &g}}) {
          const auto est = stage("rip", [&] {
            return rip_diagnostic<double>(*m, static_cast<Eigen::Index>(k), trials,
                                          derive_seed(derive_seed(config.seed, "rip"), k));
          });
          csv << k << ',' << name << ',' << est.delta << ',' << est.min_eigenvalue << ',' << est.max_eigenvalue << '\n';
          rows.push_back({{"k", k}, {"matrix", name}, {"delta", est.delta}});
          std::cout << "k=" << k << " " << name << " delta " << est.delta << '\n';
        }
      }
      write_out(out, "rip.csv", csv.str());
      write_out(out, "report.json",
                Json({{"config", to_json(config)}, {"rows", a.rows()}, {"cols", a.cols()}, {"trials", trials},
                      {"estimates", rows}})
                    .dump(2));
      return 0;
    }

    if (*report) {
      const auto dirs = split_dirs(inputs);
      if (dirs.empty()) throw StageError("collect", "no report.json found under the given inputs");
      std::ostringstream csv;
      csv << "run,level,seed,ok,expert_mean,agent_mean,agent_median,r_visited,r_uniform,agreement_visited,"
             "sparsity,relative_weight_error,student_median,boosted_median\n";
      Json runs = Json::array();
      for (const auto& dir : dirs) {
        const Json r = stage("read " + dir, [&] { return read_json(fs::path(dir) / "report.json"); });
        const Json row = {
            {"run", dir},
            {"level", pick(r, {"level"})},
            {"seed", pick(r, {"config", "seed"})},
            {"ok", !r.contains("failed_stage")},
            {"expert_mean", pick(r, {"expert", "eval", "mean"})},
            {"agent_mean", pick(r, {"agent", "eval", "mean"})},
            {"agent_median", pick(r, {"agent", "eval", "median"})},
            {"r_visited", pick(r, {"agent", "q_difference", "visited", "pearson_r"})},
            {"r_uniform", pick(r, {"agent", "q_difference", "uniform", "pearson_r"})},
            {"agreement_visited", pick(r, {"agent", "q_difference", "visited", "agreement"})},
            {"sparsity", pick(r, {"agent", "sparsity"})},
            {"relative_weight_error", pick(r, {"agent", "weight_error", "relative"})},
            {"student_median", pick(r, {"student", "eval", "median"})},
            {"boosted_median", pick(r, {"boosted", "eval", "median"})},
        };
        bool first = true;
        for (const char* key : {"run", "level", "seed", "ok", "expert_mean", "agent_mean", "agent_median",
                                "r_visited", "r_uniform", "agreement_visited", "sparsity", "relative_weight_error",
                                "student_median", "boosted_median"}) {
          csv << (first ? "" : ",") << cell(row[key]);
          first = false;
        }
        csv << '\n';
        runs.push_back(row);
      }
      write_out(out, "summary.csv", csv.str());
      write_out(out, "summary.json", Json({{"runs", runs}}).dump(2));
      std::cout << csv.str();
      return 0;
    }
  } catch (const StageError& e) {
    std::cerr << "cil " << command << ": stage '" << e.stage << "' failed: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "cil " << command << ": " << e.what() << '\n';
    return 1;
  }
  return 2;
}
