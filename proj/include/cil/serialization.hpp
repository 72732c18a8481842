#pragma once

// JSON persistence for models, problems, and reports.
//
// Matrices are stored row-major with an explicit shape:
//   {"rows": r, "cols": c, "data": [a00, a01, ..., a(r-1)(c-1)]}
// Doubles are written with round-trip precision, so save/load is exact.
//
// Documents carry a "format" tag:
//   cil.featurizer/1  {scaler_mean[4], scaler_scale[4],
//                      blocks: [{bandwidth, frequencies: matrix(components x 4), offsets[]}]}
//   cil.weights/1     {dimension, w0[], w1[]}
//   cil.expert/1      {featurizer, weights, episode_rewards[]}
//   cil.qnetwork/1    {input_scale[4], dropout_rate, layers: [{weights: matrix, bias[]}],
//                      head: matrix(2 x width)}
//   cil.demos/1       {mode: "expose_q" | "actions_only",
//                      demos: [{state[4], action, q_values[2]?}]}
//   cil.level1/1      {A: matrix, y[]}
//   cil.level2/1      {A: matrix, epsilon, lambda, w_target[]}
//   cil.solve_report/1 {solution[], objective_trace[], max_constraint_violation,
//                      iterations_used, converged}

#include "cil/dqn.hpp"
#include "cil/featurizer.hpp"
#include "cil/linear_expert.hpp"
#include "cil/sparse_solver.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>

namespace cil {

using Json = nlohmann::json;

Json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const Json& j);
Json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const Json& j);

Json to_json(const Featurizer& featurizer);
Featurizer featurizer_from_json(const Json& j);

Json to_json(const WeightStack& weights);
WeightStack weights_from_json(const Json& j);

Json to_json(const QNetwork& net);
QNetwork network_from_json(const Json& j);

Json to_json(const Level1Problem<double>& problem);
Level1Problem<double> level1_from_json(const Json& j);
Json to_json(const Level2Problem<double>& problem);
Level2Problem<double> level2_from_json(const Json& j);
Json to_json(const SolveReport<double>& report);
SolveReport<double> solve_report_from_json(const Json& j);

/// Throws std::runtime_error unless j["format"] == format.
void expect_format(const Json& j, std::string_view format);

Json read_json(const std::filesystem::path& path);

/// Write to a temporary sibling, then rename over the target.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const Json& j);

}  // namespace cil
