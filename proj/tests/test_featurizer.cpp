#include "cil/featurizer.hpp"
#include "cil/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

using namespace cil;

namespace {

const double kAmp = std::sqrt(2.0 / 100.0);

Featurizer fitted(std::uint64_t seed = 1) {
  const auto samples = sample_state_box(20000, seed);
  const std::vector<double> gammas = {5.0, 2.0, 1.0, 0.5, 0.1};
  return Featurizer::fit(samples, gammas, seed);
}

}  // namespace

TEST_SUITE("featurizer") {
  TEST_CASE("twenty thousand box samples and five kernels give 500 features") {
    const Featurizer f = fitted();
    CHECK(f.dimension() == 500);
    CHECK(f.blocks().size() == 5);
    CHECK(f.transform(State::Zero()).size() == 500);
  }

  TEST_CASE("scaler matches sample moments") {
    const auto samples = sample_state_box(5000, 3);
    State mean = State::Zero();
    for (const auto& s : samples) mean += s;
    mean /= 5000.0;
    State var = State::Zero();
    for (const auto& s : samples) var += (s - mean).cwiseAbs2();
    const State sd = (var / 5000.0).cwiseSqrt();
    const std::vector<double> gammas = {1.0};
    const Featurizer f = Featurizer::fit(samples, gammas, 0);
    CHECK((f.scaler_mean() - mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((f.scaler_scale() - sd).cwiseAbs().maxCoeff() < 1e-12);
    // Uniform on [-h, h] has standard deviation h / sqrt(3).
    CHECK(sd[0] == doctest::Approx(2.4 / std::sqrt(3.0)).epsilon(0.03));
  }

  TEST_CASE("constant samples clamp the scale to one") {
    const std::vector<State> samples(10, State(0.5, -1.0, 0.1, 2.0));
    const std::vector<double> gammas = {1.0, 2.0};
    const Featurizer f = Featurizer::fit(samples, gammas, 7);
    CHECK(f.scaler_scale() == State::Ones());
    CHECK((f.scaler_mean() - samples.front()).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("fit is deterministic") {
    CHECK(fitted(4) == fitted(4));
    CHECK_FALSE(fitted(4) == fitted(5));
  }

  TEST_CASE("invalid fits are rejected") {
    const auto samples = sample_state_box(10, 0);
    const std::vector<double> bad = {1.0, 0.0};
    const std::vector<double> good = {1.0};
    CHECK_THROWS_AS(Featurizer::fit(samples, bad, 0), std::invalid_argument);
    CHECK_THROWS_AS(Featurizer::fit(std::span(samples).first(1), good, 0), std::invalid_argument);
    std::vector<State> with_nan = samples;
    with_nan[3][2] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(Featurizer::fit(with_nan, good, 0), std::invalid_argument);
  }

  TEST_CASE("components are bounded by the amplitude") {
    const Featurizer f = fitted();
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
      const State s(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-1, 1), rng.uniform(-5, 5));
      CHECK(f.transform(s).cwiseAbs().maxCoeff() <= kAmp + 1e-15);
    }
  }

  TEST_CASE("zero frequencies and offsets give the amplitude everywhere") {
    RffBlock block{1.0, Eigen::MatrixXd::Zero(100, 4), Eigen::VectorXd::Zero(100)};
    const Featurizer f(State::Zero(), State::Ones(), {block});
    const Eigen::VectorXd phi = f.transform(State(0.3, -1, 0.1, 2));
    CHECK((phi.array() - kAmp).abs().maxCoeff() < 1e-15);
  }

  TEST_CASE("hand-built two-component block") {
    RffBlock block;
    block.bandwidth = 1.0;
    block.frequencies.resize(2, 4);
    block.frequencies << 1.0, 0.0, 2.0, 0.0,
                         0.0, -1.0, 0.0, 0.5;
    block.offsets = Eigen::Vector2d(0.5, 1.0);
    const Featurizer f(State(1.0, 0.0, 0.0, 0.0), State(2.0, 1.0, 1.0, 1.0), {block});
    // standardized (3, 0.5, 0.1, -2) -> ((3-1)/2, 0.5, 0.1, -2) = (1, 0.5, 0.1, -2)
    // row 0: 1*1 + 2*0.1 + 0.5 = 1.7;  row 1: -0.5 + 0.5*(-2) + 1 = -0.5
    const Eigen::VectorXd phi = f.transform(State(3.0, 0.5, 0.1, -2.0));
    REQUIRE(phi.size() == 2);
    CHECK(phi[0] == doctest::Approx(std::cos(1.7)).epsilon(1e-14));
    CHECK(phi[1] == doctest::Approx(std::cos(-0.5)).epsilon(1e-14));
  }

  TEST_CASE("each block approximates its gaussian kernel") {
    const Featurizer f = fitted(8);
    Rng rng(21);
    const auto anchors = sample_state_box(600, 77);
    for (std::size_t b = 0; b < f.blocks().size(); ++b) {
      const double gamma = f.blocks()[b].bandwidth;
      double total_error = 0.0;
      for (const auto& s : anchors) {
        // Nearby partner so kernel values cover the whole (0, 1] range.
        const State t = s + f.scaler_scale().cwiseProduct(
                                State(rng.normal(), rng.normal(), rng.normal(), rng.normal()) * (0.6 / std::sqrt(gamma)));
        const State ds = (s - t).cwiseQuotient(f.scaler_scale());
        const double kernel = std::exp(-gamma * ds.squaredNorm());
        const auto seg = [&](const State& x) -> Eigen::VectorXd {
          return f.transform(x).segment(100 * static_cast<Eigen::Index>(b), 100);
        };
        total_error += std::abs(seg(s).dot(seg(t)) - kernel);
      }
      CHECK(total_error / anchors.size() <= 0.15);
    }
  }

  TEST_CASE("transform_rows stacks transforms and rejects non-finite input") {
    const Featurizer f = fitted();
    const auto states = sample_state_box(5, 9);
    const Eigen::MatrixXd rows = f.transform_rows(states);
    for (int i = 0; i < 5; ++i) CHECK(rows.row(i).transpose() == f.transform(states[i]));
    State bad = State::Zero();
    bad[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(f.transform(bad), std::invalid_argument);
  }

  TEST_CASE("box samples stay in the box") {
    const StateBox box;
    for (const auto& s : sample_state_box(2000, 5, box)) {
      CHECK((s.cwiseAbs() - box.half_width).maxCoeff() <= 0.0);
    }
  }
}
