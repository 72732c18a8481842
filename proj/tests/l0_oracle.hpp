#pragma once

// Exhaustive sparsest-solution search for tiny instances. Test-only: cost is
// C(n, k) least-squares solves.

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace cil::testing {

/// Sparsest x with ||A x - y||_inf <= tol and at most max_k nonzeros, or
/// nothing when no support that small fits. Smaller supports are tried
/// first; among equal sizes the smallest residual wins.
inline std::optional<Eigen::VectorXd> sparsest_solution(const Eigen::MatrixXd& a, const Eigen::VectorXd& y,
                                                        int max_k, double tol = 1e-9) {
  const int n = static_cast<int>(a.cols());
  if (y.cwiseAbs().maxCoeff() <= tol) return Eigen::VectorXd::Zero(n);
  for (int k = 1; k <= max_k; ++k) {
    std::optional<Eigen::VectorXd> best;
    double best_residual = tol;
    std::vector<int> idx(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (;;) {
      Eigen::MatrixXd sub(a.rows(), k);
      for (int j = 0; j < k; ++j) sub.col(j) = a.col(idx[static_cast<std::size_t>(j)]);
      const Eigen::VectorXd coef = sub.colPivHouseholderQr().solve(y);
      const double residual = (sub * coef - y).cwiseAbs().maxCoeff();
      if (residual <= best_residual) {
        best_residual = residual;
        Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
        for (int j = 0; j < k; ++j) x[idx[static_cast<std::size_t>(j)]] = coef[j];
        best = x;
      }
      int pos = k - 1;
      while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == n - k + pos) --pos;
      if (pos < 0) break;
      ++idx[static_cast<std::size_t>(pos)];
      for (int j = pos + 1; j < k; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
    }
    if (best) return best;
  }
  return std::nullopt;
}

}  // namespace cil::testing
