#pragma once

// Sparse-recovery core: proximal-gradient solvers for the equality-type
// (Q-values observed) and margin-type (actions observed) reconstruction
// problems, plus a restricted-isometry diagnostic.

#include "cil/cartpole.hpp"
#include "cil/rng.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cil {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

struct SolverConfig {
  int max_iterations = 20000;
  /// Initial proximal step; halved by backtracking until sufficient decrease.
  double step_size = 1.0;
  /// mu, the weight of the quadratic constraint penalty.
  double penalty_weight = 10.0;
  /// Stop once the relative objective change drops below this.
  double tolerance = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

template <typename Scalar = double>
struct SolveReport {
  Vector<Scalar> solution;
  std::vector<Scalar> objective_trace;
  Scalar max_constraint_violation = 0;
  int iterations_used = 0;
  bool converged = false;
};

/// Componentwise sign(v) * max(|v| - t, 0). Throws for t < 0.
template <typename Derived>
Vector<typename Derived::Scalar> soft_threshold(const Eigen::MatrixBase<Derived>& v,
                                                typename Derived::Scalar t) {
  if (!(t >= 0)) throw std::invalid_argument("soft_threshold: threshold must be non-negative");
  return v.array().sign() * (v.array().abs() - t).max(typename Derived::Scalar(0));
}

/// Shrink the singular values of `m` by t (proximal map of t * nuclear norm).
template <typename Scalar>
Matrix<Scalar> singular_value_threshold(const Matrix<Scalar>& m, Scalar t) {
  if (!(t >= 0)) throw std::invalid_argument("singular_value_threshold: threshold must be non-negative");
  Eigen::JacobiSVD<Matrix<Scalar>> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector<Scalar> shrunk = (svd.singularValues().array() - t).max(Scalar(0)).matrix();
  return svd.matrixU() * shrunk.asDiagonal() * svd.matrixV().transpose();
}

template <typename Scalar>
Scalar nuclear_norm(const Matrix<Scalar>& m) {
  return Eigen::JacobiSVD<Matrix<Scalar>>(m).singularValues().sum();
}

// ---------------------------------------------------------------------------
// Problems

/// A demonstration that exposes the expert's Q-value for one action.
template <typename Scalar = double>
struct QDemo {
  Vector<Scalar> phi;
  Action action = Action::kLeft;
  Scalar q_value = 0;
};

/// A demonstration that exposes only the chosen action.
template <typename Scalar = double>
struct ActionDemo {
  Vector<Scalar> phi;
  Action action = Action::kLeft;
};

/// min ||x||_1 subject to A x = y, with x = [w0; w1].
template <typename Scalar = double>
struct Level1Problem {
  Matrix<Scalar> A;
  Vector<Scalar> y;
};

/// min ||x||_1 + lambda ||x - w_target||^2 subject to A x >= epsilon.
///
/// Row i of A is [phi_i, -phi_i] for a demonstrated action 0 and
/// [-phi_i, phi_i] for action 1, so A_i x is the Q-advantage of the
/// demonstrated action. A positive epsilon asks for a strict margin; a
/// negative one tolerates that much disagreement (noisy experts).
template <typename Scalar = double>
struct Level2Problem {
  Matrix<Scalar> A;
  Scalar epsilon = Scalar(0.1);
  Scalar lambda = Scalar(1.0);
  Vector<Scalar> w_target;
};

namespace detail {

template <typename Scalar>
Eigen::Index common_dimension(std::span<const Vector<Scalar>* const> phis) {
  if (phis.empty()) throw std::invalid_argument("sparse_solver: demonstration list is empty");
  const Eigen::Index n = phis.front()->size();
  for (const auto* phi : phis) {
    if (phi->size() != n) {
      throw std::invalid_argument("sparse_solver: inconsistent feature dimension (" + std::to_string(phi->size()) +
                                  " vs " + std::to_string(n) + ")");
    }
  }
  return n;
}

}  // namespace detail

/// Row i holds phi_i in the slot of the demonstrated action and zeros in the
/// other slot; y_i is the demonstrated Q-value.
template <typename Scalar>
Level1Problem<Scalar> build_level1_problem(std::span<const QDemo<Scalar>> demos) {
  std::vector<const Vector<Scalar>*> phis;
  for (const auto& d : demos) phis.push_back(&d.phi);
  const Eigen::Index n = detail::common_dimension<Scalar>(phis);
  const auto m = static_cast<Eigen::Index>(demos.size());
  Level1Problem<Scalar> problem{Matrix<Scalar>::Zero(m, 2 * n), Vector<Scalar>(m)};
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& d = demos[static_cast<std::size_t>(i)];
    problem.A.row(i).segment(to_index(d.action) * n, n) = d.phi.transpose();
    problem.y[i] = d.q_value;
  }
  return problem;
}

/// Constraint rows only; epsilon, lambda and w_target are left at their
/// defaults / empty for the caller to fill.
template <typename Scalar>
Level2Problem<Scalar> build_level2_constraints(std::span<const ActionDemo<Scalar>> demos) {
  std::vector<const Vector<Scalar>*> phis;
  for (const auto& d : demos) phis.push_back(&d.phi);
  const Eigen::Index n = detail::common_dimension<Scalar>(phis);
  const auto m = static_cast<Eigen::Index>(demos.size());
  Level2Problem<Scalar> problem;
  problem.A.resize(m, 2 * n);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& d = demos[static_cast<std::size_t>(i)];
    const Scalar sign = d.action == Action::kLeft ? Scalar(1) : Scalar(-1);
    problem.A.row(i).head(n) = sign * d.phi.transpose();
    problem.A.row(i).tail(n) = -sign * d.phi.transpose();
  }
  return problem;
}

/// ||A x - y||_inf.
template <typename Scalar>
Scalar level1_violation(const Level1Problem<Scalar>& problem, const Vector<Scalar>& x) {
  if (problem.A.rows() == 0) return Scalar(0);
  return (problem.A * x - problem.y).cwiseAbs().maxCoeff();
}

/// max_i max(epsilon - A_i x, 0).
template <typename Scalar>
Scalar level2_violation(const Level2Problem<Scalar>& problem, const Vector<Scalar>& x) {
  if (problem.A.rows() == 0) return Scalar(0);
  return std::max(Scalar(0), (problem.epsilon - (problem.A * x).array()).maxCoeff());
}

// ---------------------------------------------------------------------------
// Proximal gradient

/// Minimize smooth(x) + regularizer(x) by proximal gradient with
/// backtracking. `smooth(x, grad)` returns the smooth value and writes the
/// gradient when grad is non-null; `prox(v, t)` is the proximal map of
/// t * regularizer and `regularizer(x)` its value. Every accepted step
/// satisfies the sufficient-decrease condition, so the objective trace is
/// non-increasing.
template <typename Scalar, typename Smooth, typename Prox, typename Regularizer>
SolveReport<Scalar> proximal_gradient(Smooth&& smooth, Prox&& prox, Regularizer&& regularizer, Vector<Scalar> x,
                                      const SolverConfig& config) {
  config.validate();
  SolveReport<Scalar> report;
  Vector<Scalar> grad(x.size());
  Vector<Scalar> z(x.size());
  Vector<Scalar> z_grad_unused;
  Scalar step = static_cast<Scalar>(config.step_size);
  Scalar smooth_x = smooth(x, &grad);
  Scalar objective = smooth_x + regularizer(x);
  report.objective_trace.push_back(objective);

  for (int it = 0; it < config.max_iterations; ++it) {
    Scalar smooth_z = 0;
    for (;;) {
      z = prox(Vector<Scalar>(x - step * grad), step);
      const Vector<Scalar> diff = z - x;
      smooth_z = smooth(z, nullptr);
      const Scalar model = smooth_x + grad.dot(diff) + diff.squaredNorm() / (Scalar(2) * step);
      if (smooth_z <= model + std::numeric_limits<Scalar>::epsilon() * std::abs(model)) break;
      step /= Scalar(2);
      if (step < Scalar(1e-30)) break;
    }
    const Scalar next_objective = smooth_z + regularizer(z);
    report.iterations_used = it + 1;
    if (next_objective > objective) {
      // Rounding-level non-descent: keep the better iterate and stop.
      report.converged = true;
      break;
    }
    x.swap(z);
    smooth_x = smooth(x, &grad);
    const Scalar change = objective - next_objective;
    objective = next_objective;
    report.objective_trace.push_back(objective);
    if (change <= static_cast<Scalar>(config.tolerance) * std::max(Scalar(1), std::abs(objective))) {
      report.converged = true;
      break;
    }
  }
  report.solution = std::move(x);
  return report;
}

/// L1 penalty form: min ||x||_1 + mu ||A x - y||^2, started from zero.
/// max_constraint_violation is ||A x - y||_inf.
template <typename Scalar>
SolveReport<Scalar> solve_level1(const Level1Problem<Scalar>& problem, const SolverConfig& config) {
  if (problem.A.rows() != problem.y.size()) throw std::invalid_argument("solve_level1: A and y disagree in rows");
  const Scalar mu = static_cast<Scalar>(config.penalty_weight);
  Vector<Scalar> residual(problem.y.size());
  auto smooth = [&](const Vector<Scalar>& x, Vector<Scalar>* grad) {
    residual.noalias() = problem.A * x;
    residual -= problem.y;
    if (grad) grad->noalias() = (Scalar(2) * mu) * (problem.A.transpose() * residual);
    return mu * residual.squaredNorm();
  };
  auto prox = [](const Vector<Scalar>& v, Scalar t) { return soft_threshold(v, t); };
  auto l1 = [](const Vector<Scalar>& x) { return x.template lpNorm<1>(); };
  auto report = proximal_gradient<Scalar>(smooth, prox, l1, Vector<Scalar>::Zero(problem.A.cols()), config);
  report.max_constraint_violation = level1_violation(problem, report.solution);
  return report;
}

namespace detail {

template <typename Scalar>
auto level2_smooth(const Level2Problem<Scalar>& problem, Scalar mu) {
  return [&problem, mu, slack = Vector<Scalar>(problem.A.rows())](const Vector<Scalar>& x,
                                                                   Vector<Scalar>* grad) mutable {
    slack.noalias() = problem.A * x;
    slack = (problem.epsilon - slack.array()).max(Scalar(0)).matrix();
    const Vector<Scalar> to_target = x - problem.w_target;
    if (grad) {
      grad->noalias() = (Scalar(2) * problem.lambda) * to_target;
      grad->noalias() -= (Scalar(2) * mu) * (problem.A.transpose() * slack);
    }
    return problem.lambda * to_target.squaredNorm() + mu * slack.squaredNorm();
  };
}

template <typename Scalar>
void check_level2(const Level2Problem<Scalar>& problem) {
  if (problem.w_target.size() != problem.A.cols()) {
    throw std::invalid_argument("solve_level2: w_target has dimension " + std::to_string(problem.w_target.size()) +
                                ", expected " + std::to_string(problem.A.cols()));
  }
  if (!(problem.lambda >= 0)) throw std::invalid_argument("solve_level2: lambda must be non-negative");
}

}  // namespace detail

/// min ||x||_1 + lambda ||x - w_target||^2 + mu sum_i max(epsilon - A_i x, 0)^2,
/// started from w_target.
template <typename Scalar>
SolveReport<Scalar> solve_level2(const Level2Problem<Scalar>& problem, const SolverConfig& config) {
  detail::check_level2(problem);
  auto smooth = detail::level2_smooth(problem, static_cast<Scalar>(config.penalty_weight));
  auto prox = [](const Vector<Scalar>& v, Scalar t) { return soft_threshold(v, t); };
  auto l1 = [](const Vector<Scalar>& x) { return x.template lpNorm<1>(); };
  auto report = proximal_gradient<Scalar>(smooth, prox, l1, problem.w_target, config);
  report.max_constraint_violation = level2_violation(problem, report.solution);
  return report;
}

/// Level 2 with the nuclear norm of the rows x cols matrix whose
/// column-major vectorization is x in place of ||x||_1.
template <typename Scalar>
SolveReport<Scalar> solve_level2_nuclear(const Level2Problem<Scalar>& problem, Eigen::Index rows, Eigen::Index cols,
                                         const SolverConfig& config) {
  detail::check_level2(problem);
  if (rows * cols != problem.A.cols()) throw std::invalid_argument("solve_level2_nuclear: shape does not match A");
  auto smooth = detail::level2_smooth(problem, static_cast<Scalar>(config.penalty_weight));
  auto prox = [rows, cols](const Vector<Scalar>& v, Scalar t) {
    const Matrix<Scalar> m = Eigen::Map<const Matrix<Scalar>>(v.data(), rows, cols);
    const Matrix<Scalar> shrunk = singular_value_threshold<Scalar>(m, t);
    return Vector<Scalar>(Eigen::Map<const Vector<Scalar>>(shrunk.data(), shrunk.size()));
  };
  auto nuc = [rows, cols](const Vector<Scalar>& x) {
    return nuclear_norm<Scalar>(Eigen::Map<const Matrix<Scalar>>(x.data(), rows, cols));
  };
  auto report = proximal_gradient<Scalar>(smooth, prox, nuc, problem.w_target, config);
  report.max_constraint_violation = level2_violation(problem, report.solution);
  return report;
}

/// Seeded Gaussian vector with standard deviation `scale`. Throws for scale <= 0.
template <typename Scalar = double>
Vector<Scalar> make_random_target(Eigen::Index dimension, Scalar scale, std::uint64_t seed) {
  if (!(scale > 0)) throw std::invalid_argument("make_random_target: scale must be positive");
  Rng rng(seed);
  Vector<Scalar> v(dimension);
  for (Eigen::Index i = 0; i < dimension; ++i) v[i] = scale * static_cast<Scalar>(rng.normal());
  return v;
}

/// Fraction of components with |x_i| < relative * max|x|.
template <typename Derived>
double sparsity_fraction(const Eigen::MatrixBase<Derived>& x, double relative = 1e-3) {
  if (x.size() == 0) return 0.0;
  const double cutoff = relative * static_cast<double>(x.cwiseAbs().maxCoeff());
  return static_cast<double>((x.array().abs().template cast<double>() < cutoff).count()) /
         static_cast<double>(x.size());
}

// ---------------------------------------------------------------------------
// Restricted isometry

template <typename Scalar = double>
struct RipEstimate {
  /// Largest |lambda - 1| over all sampled Gram matrices.
  Scalar delta = 0;
  Scalar min_eigenvalue = std::numeric_limits<Scalar>::infinity();
  Scalar max_eigenvalue = -std::numeric_limits<Scalar>::infinity();
  /// Column subsets that were examined, in sampling order.
  std::vector<std::vector<Eigen::Index>> subsets;
};

/// Copy of `a` with unit-norm columns; all-zero columns stay zero.
template <typename Scalar>
Matrix<Scalar> normalize_columns(const Matrix<Scalar>& a) {
  Matrix<Scalar> out = a;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const Scalar norm = out.col(j).norm();
    if (norm > 0) out.col(j) /= norm;
  }
  return out;
}

/// Monte Carlo estimate of the restricted isometry constant delta_k: the
/// columns of A are normalized, `trials` random k-column submatrices S are
/// drawn, and the extreme eigenvalues of S^T S are compared with 1.
template <typename Scalar>
RipEstimate<Scalar> rip_diagnostic(const Matrix<Scalar>& a, Eigen::Index k, int trials, std::uint64_t seed) {
  if (k < 1 || k > a.cols()) {
    throw std::invalid_argument("rip_diagnostic: k=" + std::to_string(k) + " must lie in [1, " +
                                std::to_string(a.cols()) + "]");
  }
  if (trials < 1) throw std::invalid_argument("rip_diagnostic: trials must be positive");
  const Matrix<Scalar> normalized = normalize_columns(a);
  Rng rng(seed);
  std::vector<Eigen::Index> pool(static_cast<std::size_t>(a.cols()));
  RipEstimate<Scalar> estimate;
  Matrix<Scalar> sub(a.rows(), k);
  for (int t = 0; t < trials; ++t) {
    std::iota(pool.begin(), pool.end(), Eigen::Index{0});
    std::vector<Eigen::Index> cols(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto pick = static_cast<std::size_t>(j) + rng.below(pool.size() - static_cast<std::size_t>(j));
      std::swap(pool[static_cast<std::size_t>(j)], pool[pick]);
      cols[static_cast<std::size_t>(j)] = pool[static_cast<std::size_t>(j)];
      sub.col(j) = normalized.col(pool[static_cast<std::size_t>(j)]);
    }
    const Matrix<Scalar> gram = sub.transpose() * sub;
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(gram, Eigen::EigenvaluesOnly);
    const auto& values = eig.eigenvalues();
    estimate.min_eigenvalue = std::min(estimate.min_eigenvalue, values.minCoeff());
    estimate.max_eigenvalue = std::max(estimate.max_eigenvalue, values.maxCoeff());
    estimate.subsets.push_back(std::move(cols));
  }
  estimate.delta = std::max(Scalar(1) - estimate.min_eigenvalue, estimate.max_eigenvalue - Scalar(1));
  return estimate;
}

extern template SolveReport<double> solve_level1<double>(const Level1Problem<double>&, const SolverConfig&);
extern template SolveReport<double> solve_level2<double>(const Level2Problem<double>&, const SolverConfig&);
extern template RipEstimate<double> rip_diagnostic<double>(const Matrix<double>&, Eigen::Index, int, std::uint64_t);

}  // namespace cil
