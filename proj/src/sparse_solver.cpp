#include "cil/sparse_solver.hpp"

namespace cil {

void SolverConfig::validate() const {
  if (max_iterations < 0) throw std::invalid_argument("solver: max_iterations must be non-negative");
  if (!(step_size > 0.0)) throw std::invalid_argument("solver: step_size must be positive");
  if (!(penalty_weight > 0.0)) throw std::invalid_argument("solver: penalty_weight must be positive");
  if (!(tolerance > 0.0)) throw std::invalid_argument("solver: tolerance must be positive");
}

template SolveReport<double> solve_level1<double>(const Level1Problem<double>&, const SolverConfig&);
template SolveReport<double> solve_level2<double>(const Level2Problem<double>&, const SolverConfig&);
template RipEstimate<double> rip_diagnostic<double>(const Matrix<double>&, Eigen::Index, int, std::uint64_t);

}  // namespace cil
