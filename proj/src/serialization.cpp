#include "cil/serialization.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cil {

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json data = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw std::runtime_error("matrix json: data length does not match shape");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  }
  return m;
}

Json vector_to_json(const Eigen::VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd vector_from_json(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

void expect_format(const Json& j, std::string_view format) {
  if (!j.contains("format") || j.at("format").get<std::string>() != format) {
    throw std::runtime_error("expected a " + std::string(format) + " document");
  }
}

Json to_json(const Featurizer& featurizer) {
  Json blocks = Json::array();
  for (const auto& b : featurizer.blocks()) {
    blocks.push_back({{"bandwidth", b.bandwidth},
                      {"frequencies", matrix_to_json(b.frequencies)},
                      {"offsets", vector_to_json(b.offsets)}});
  }
  return {{"format", "cil.featurizer/1"},
          {"scaler_mean", vector_to_json(featurizer.scaler_mean())},
          {"scaler_scale", vector_to_json(featurizer.scaler_scale())},
          {"blocks", std::move(blocks)}};
}

Featurizer featurizer_from_json(const Json& j) {
  expect_format(j, "cil.featurizer/1");
  const Eigen::VectorXd mean = vector_from_json(j.at("scaler_mean"));
  const Eigen::VectorXd scale = vector_from_json(j.at("scaler_scale"));
  if (mean.size() != 4 || scale.size() != 4) throw std::runtime_error("featurizer json: scaler must have 4 entries");
  std::vector<RffBlock> blocks;
  for (const auto& b : j.at("blocks")) {
    blocks.push_back({b.at("bandwidth").get<double>(), matrix_from_json(b.at("frequencies")),
                      vector_from_json(b.at("offsets"))});
  }
  return Featurizer(mean, scale, std::move(blocks));
}

Json to_json(const WeightStack& weights) {
  return {{"format", "cil.weights/1"},
          {"dimension", weights.dimension()},
          {"w0", vector_to_json(weights.w0)},
          {"w1", vector_to_json(weights.w1)}};
}

WeightStack weights_from_json(const Json& j) {
  expect_format(j, "cil.weights/1");
  WeightStack w{vector_from_json(j.at("w0")), vector_from_json(j.at("w1"))};
  const auto dim = j.at("dimension").get<Eigen::Index>();
  if (w.w0.size() != dim || w.w1.size() != dim) throw std::runtime_error("weights json: dimension header mismatch");
  return w;
}

Json to_json(const QNetwork& net) {
  Json layers = Json::array();
  for (const auto& layer : net.body) {
    layers.push_back({{"weights", matrix_to_json(layer.weights)}, {"bias", vector_to_json(layer.bias)}});
  }
  return {{"format", "cil.qnetwork/1"},
          {"input_scale", vector_to_json(net.input_scale)},
          {"dropout_rate", net.dropout_rate},
          {"layers", std::move(layers)},
          {"head", matrix_to_json(net.head)}};
}

QNetwork network_from_json(const Json& j) {
  expect_format(j, "cil.qnetwork/1");
  QNetwork net;
  const Eigen::VectorXd scale = vector_from_json(j.at("input_scale"));
  if (scale.size() != 4) throw std::runtime_error("qnetwork json: input_scale must have 4 entries");
  net.input_scale = scale;
  net.dropout_rate = j.at("dropout_rate").get<double>();
  for (const auto& layer : j.at("layers")) {
    net.body.push_back({matrix_from_json(layer.at("weights")), vector_from_json(layer.at("bias"))});
  }
  net.head = matrix_from_json(j.at("head"));
  net.validate();
  return net;
}

Json to_json(const Level1Problem<double>& problem) {
  return {{"format", "cil.level1/1"}, {"A", matrix_to_json(problem.A)}, {"y", vector_to_json(problem.y)}};
}

Level1Problem<double> level1_from_json(const Json& j) {
  expect_format(j, "cil.level1/1");
  return {matrix_from_json(j.at("A")), vector_from_json(j.at("y"))};
}

Json to_json(const Level2Problem<double>& problem) {
  return {{"format", "cil.level2/1"},
          {"A", matrix_to_json(problem.A)},
          {"epsilon", problem.epsilon},
          {"lambda", problem.lambda},
          {"w_target", vector_to_json(problem.w_target)}};
}

Level2Problem<double> level2_from_json(const Json& j) {
  expect_format(j, "cil.level2/1");
  Level2Problem<double> p;
  p.A = matrix_from_json(j.at("A"));
  p.epsilon = j.at("epsilon").get<double>();
  p.lambda = j.at("lambda").get<double>();
  p.w_target = vector_from_json(j.at("w_target"));
  return p;
}

Json to_json(const SolveReport<double>& report) {
  return {{"format", "cil.solve_report/1"},
          {"solution", vector_to_json(report.solution)},
          {"objective_trace", report.objective_trace},
          {"max_constraint_violation", report.max_constraint_violation},
          {"iterations_used", report.iterations_used},
          {"converged", report.converged}};
}

SolveReport<double> solve_report_from_json(const Json& j) {
  expect_format(j, "cil.solve_report/1");
  SolveReport<double> r;
  r.solution = vector_from_json(j.at("solution"));
  r.objective_trace = j.at("objective_trace").get<std::vector<double>>();
  r.max_constraint_violation = j.at("max_constraint_violation").get<double>();
  r.iterations_used = j.at("iterations_used").get<int>();
  r.converged = j.at("converged").get<bool>();
  return r;
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return Json::parse(in);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

}  // namespace cil
