#include "cil/featurizer.hpp"

#include "cil/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <stdexcept>

namespace cil {

std::vector<double> default_bandwidths() { return {1.0, 0.5, 0.2, 0.1, 0.05}; }

std::vector<State> sample_state_box(std::size_t count, std::uint64_t seed, const StateBox& box) {
  Rng rng(seed);
  std::vector<State> samples(count);
  for (auto& s : samples) {
    for (int i = 0; i < 4; ++i) s[i] = rng.uniform(-box.half_width[i], box.half_width[i]);
  }
  return samples;
}

Featurizer::Featurizer(State scaler_mean, State scaler_scale, std::vector<RffBlock> blocks)
    : mean_(std::move(scaler_mean)), scale_(std::move(scaler_scale)), blocks_(std::move(blocks)) {
  if (!(scale_.array() > 0.0).all()) {
    throw std::invalid_argument("featurizer: scaler scale must be strictly positive");
  }
  for (const auto& block : blocks_) {
    if (block.frequencies.cols() != 4 || block.frequencies.rows() != block.offsets.size()) {
      throw std::invalid_argument("featurizer: block shape mismatch");
    }
    dimension_ += block.components();
  }
}

Featurizer Featurizer::fit(std::span<const State> samples, std::span<const double> bandwidths,
                           std::uint64_t seed, int components_per_block) {
  if (samples.size() < 2) throw std::invalid_argument("featurizer fit: need at least 2 samples");
  if (bandwidths.empty()) throw std::invalid_argument("featurizer fit: no bandwidths given");
  if (components_per_block <= 0) throw std::invalid_argument("featurizer fit: components must be positive");

  State mean = State::Zero();
  for (const auto& s : samples) {
    if (!s.allFinite()) throw std::invalid_argument("featurizer fit: non-finite sample");
    mean += s;
  }
  mean /= static_cast<double>(samples.size());
  State variance = State::Zero();
  for (const auto& s : samples) variance += (s - mean).cwiseAbs2();
  variance /= static_cast<double>(samples.size());

  State scale = variance.cwiseSqrt();
  for (int i = 0; i < 4; ++i) {
    // Rounding leaves a constant column with a tiny nonzero spread.
    if (!(scale[i] > 1e-12 * std::max(1.0, std::abs(mean[i])))) {
      std::cerr << "warning: featurizer fit: component " << i << " has zero variance; scale clamped to 1\n";
      scale[i] = 1.0;
    }
  }

  Rng rng(seed);
  std::vector<RffBlock> blocks;
  blocks.reserve(bandwidths.size());
  for (const double gamma : bandwidths) {
    if (!(gamma > 0.0)) throw std::invalid_argument("featurizer fit: bandwidths must be positive");
    RffBlock block;
    block.bandwidth = gamma;
    block.frequencies.resize(components_per_block, 4);
    block.offsets.resize(components_per_block);
    const double stddev = std::sqrt(2.0 * gamma);
    for (int r = 0; r < components_per_block; ++r) {
      for (int c = 0; c < 4; ++c) block.frequencies(r, c) = stddev * rng.normal();
    }
    for (int r = 0; r < components_per_block; ++r) block.offsets[r] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    blocks.push_back(std::move(block));
  }
  return Featurizer(mean, scale, std::move(blocks));
}

void Featurizer::transform_into(const State& state, Eigen::Ref<Eigen::VectorXd> out) const {
  if (!state.allFinite()) throw std::invalid_argument("featurizer transform: non-finite state");
  const State standardized = (state - mean_).cwiseQuotient(scale_);
  Eigen::Index offset = 0;
  for (const auto& block : blocks_) {
    const Eigen::Index n = block.components();
    const double amplitude = std::sqrt(2.0 / static_cast<double>(n));
    out.segment(offset, n) = amplitude * (block.frequencies * standardized + block.offsets).array().cos();
    offset += n;
  }
}

Eigen::VectorXd Featurizer::transform(const State& state) const {
  Eigen::VectorXd phi(dimension_);
  transform_into(state, phi);
  return phi;
}

Eigen::MatrixXd Featurizer::transform_rows(std::span<const State> states) const {
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(states.size()), dimension_);
  Eigen::VectorXd phi(dimension_);
  for (std::size_t i = 0; i < states.size(); ++i) {
    transform_into(states[i], phi);
    rows.row(static_cast<Eigen::Index>(i)) = phi.transpose();
  }
  return rows;
}

bool operator==(const Featurizer& a, const Featurizer& b) {
  if (a.mean_ != b.mean_ || a.scale_ != b.scale_ || a.blocks_.size() != b.blocks_.size()) return false;
  for (std::size_t i = 0; i < a.blocks_.size(); ++i) {
    const auto& x = a.blocks_[i];
    const auto& y = b.blocks_[i];
    if (x.bandwidth != y.bandwidth || x.frequencies != y.frequencies || x.offsets != y.offsets) return false;
  }
  return true;
}

}  // namespace cil
