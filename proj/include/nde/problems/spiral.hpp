#pragma once

// Cubic spiral system dx/dt = A·x³ and its neural counterpart
// dx/dt = NN(x³) for a bias-free [2, 16, 2] network.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <type_traits>
#include <utility>

#include "nde/mlp.hpp"
#include "nde/ode.hpp"
#include "nde/ops.hpp"
#include "nde/shooting.hpp"

namespace nde {

struct SpiralSpec {
  Eigen::Matrix2d a = (Eigen::Matrix2d() << -0.1, 2.0, -2.0, -0.1).finished();
  Eigen::Vector2d x0{2.0, 0.0};
  std::pair<double, double> span{0.0, 6.0};
  double sample_interval = 0.1;
  double sigma = 0.2;  // noise standard deviation
  std::uint64_t seed = 0;
  double rtol = 1e-8;
  double atol = 1e-10;
};

inline Eigen::VectorXd spiral_rhs(const Eigen::VectorXd& x, const Eigen::Matrix2d& a) {
  if (x.size() != 2) throw InputError("spiral_rhs: state must have length 2");
  return a * x.array().cube().matrix();
}

inline Eigen::VectorXd spiral_rhs(const Eigen::VectorXd& x) { return spiral_rhs(x, SpiralSpec{}.a); }

inline OdeField spiral_true_field(const Eigen::Matrix2d& a = SpiralSpec{}.a) {
  return {[a](const Eigen::VectorXd& x, double) { return spiral_rhs(x, a); }, 2};
}

inline std::vector<double> spiral_sample_times(const SpiralSpec& spec) {
  const auto [t0, tf] = spec.span;
  const auto n = static_cast<long>(std::llround((tf - t0) / spec.sample_interval));
  std::vector<double> times;
  for (long k = 0; k <= n; ++k) times.push_back(t0 + (tf - t0) * static_cast<double>(k) / n);
  return times;
}

/// Noise-free samples of the true system.
inline TimeSeries spiral_clean(const SpiralSpec& spec) {
  if (!(spec.sample_interval > 0.0)) throw InputError("gen_spiral: sample interval must be positive");
  const auto times = spiral_sample_times(spec);
  AdaptiveOptions opts;
  opts.rtol = spec.rtol;
  opts.atol = spec.atol;
  const auto traj = integrate_adaptive(spiral_true_field(spec.a), spec.x0, spec.span, opts, times);
  return {traj.times, traj.states};
}

/// Samples of the true system plus N(0, σ²) noise on every component.
inline TimeSeries gen_spiral(const SpiralSpec& spec) {
  if (spec.sigma < 0.0) throw InputError("gen_spiral: sigma must be nonnegative");
  TimeSeries ts = spiral_clean(spec);
  if (spec.sigma > 0.0) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.sigma);
    for (Eigen::Index r = 0; r < ts.values.rows(); ++r)
      for (Eigen::Index c = 0; c < ts.values.cols(); ++c) ts.values(r, c) += noise(rng);
  }
  return ts;
}

/// dx/dt = NN(x³).
struct SpiralModel {
  Eigen::Index state_dim() const { return 2; }

  template <class Net>
  auto dynamics(const Net& net) const {
    return [&net](const auto& x, double) {
      using V = std::decay_t<decltype(x)>;
      return V(mlp_forward(net, V(ops::cube(x))));
    };
  }

  std::vector<double> breakpoints(double, double) const { return {}; }
};

inline void check_spiral_shape(const MlpParams& theta) {
  if (theta.input_size() != 2 || theta.output_size() != 2)
    throw ArchitectureError("spiral_field: network must map R^2 to R^2");
}

inline OdeField spiral_field(const MlpParams& theta) {
  check_spiral_shape(theta);
  return {[theta](const Eigen::VectorXd& x, double t) { return SpiralModel{}.dynamics(theta)(x, t); },
          2};
}

/// Plain neural ODE dx/dt = NN(x) for user-supplied series.
struct NeuralOdeModel {
  Eigen::Index dim = 1;

  Eigen::Index state_dim() const { return dim; }

  template <class Net>
  auto dynamics(const Net& net) const {
    return [&net](const auto& x, double) {
      using V = std::decay_t<decltype(x)>;
      return V(mlp_forward(net, x));
    };
  }

  std::vector<double> breakpoints(double, double) const { return {}; }
};

}  // namespace nde
