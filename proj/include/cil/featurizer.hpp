#pragma once

#include "cil/cartpole.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace cil {

/// One random-Fourier-feature block approximating exp(-gamma * |u - v|^2).
/// Rows of `frequencies` are drawn from N(0, 2 * gamma * I); offsets are
/// uniform on [0, 2 pi).
struct RffBlock {
  double bandwidth = 1.0;
  Eigen::MatrixXd frequencies;  // components x 4
  Eigen::VectorXd offsets;      // components

  Eigen::Index components() const { return offsets.size(); }
};

inline constexpr int kDefaultComponentsPerBlock = 100;

/// Default kernel bandwidths (gamma values) of the five feature blocks.
std::vector<double> default_bandwidths();

/// Axis-aligned box of states used to draw fitting samples.
struct StateBox {
  State half_width = (State() << 2.4, 3.0, 0.21, 3.0).finished();
};

std::vector<State> sample_state_box(std::size_t count, std::uint64_t seed, const StateBox& box = {});

/// Standardize-then-RFF map from a 4-dim state to the expanded feature
/// vector. Immutable after construction; transform is thread-safe.
class Featurizer {
 public:
  Featurizer() = default;

  /// Assemble a model from explicit parts (hand-built tests, deserialization).
  Featurizer(State scaler_mean, State scaler_scale, std::vector<RffBlock> blocks);

  /// Fit the scaler to `samples` and draw every block from Rng(seed).
  /// Zero-variance components get scale 1 and a warning on stderr.
  static Featurizer fit(std::span<const State> samples, std::span<const double> bandwidths,
                        std::uint64_t seed, int components_per_block = kDefaultComponentsPerBlock);

  Eigen::VectorXd transform(const State& state) const;

  /// Row i of the result is transform(states[i]).
  Eigen::MatrixXd transform_rows(std::span<const State> states) const;

  Eigen::Index dimension() const { return dimension_; }
  const State& scaler_mean() const { return mean_; }
  const State& scaler_scale() const { return scale_; }
  const std::vector<RffBlock>& blocks() const { return blocks_; }

  friend bool operator==(const Featurizer& a, const Featurizer& b);

 private:
  void transform_into(const State& state, Eigen::Ref<Eigen::VectorXd> out) const;

  State mean_ = State::Zero();
  State scale_ = State::Ones();
  std::vector<RffBlock> blocks_;
  Eigen::Index dimension_ = 0;
};

}  // namespace cil
