#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>

#include "nde/error.hpp"

namespace nde::optim {

struct AdamState {
  Eigen::VectorXd m;  // first moment
  Eigen::VectorXd v;  // second moment
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-3;
  bool nesterov = false;  // Nadam

  static AdamState adam(double lr) { AdamState s; s.learning_rate = lr; return s; }
  static AdamState nadam(double lr) { AdamState s = adam(lr); s.nesterov = true; return s; }
};

/// One Adam (or Nadam) update of z in place.
inline void adam_step(Eigen::VectorXd& z, const Eigen::VectorXd& g, AdamState& s) {
  if (g.size() != z.size()) throw InputError("adam_step: gradient length mismatch");
  if (!g.allFinite()) throw OptimizerError("adam_step: non-finite gradient");
  if (s.m.size() == 0) {
    s.m = Eigen::VectorXd::Zero(z.size());
    s.v = Eigen::VectorXd::Zero(z.size());
  }
  if (s.m.size() != z.size()) throw InputError("adam_step: state length mismatch");

  ++s.step;
  const double t = static_cast<double>(s.step);
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * g;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * g.cwiseAbs2();
  const double v_corr = 1.0 - std::pow(s.beta2, t);
  const Eigen::ArrayXd denom = (s.v.array() / v_corr).sqrt() + s.epsilon;

  if (!s.nesterov) {
    const double m_corr = 1.0 - std::pow(s.beta1, t);
    z.array() -= s.learning_rate * (s.m.array() / m_corr) / denom;
  } else {
    // Look-ahead: bias-corrected next-step momentum plus the current gradient.
    const double b1t = std::pow(s.beta1, t);
    const Eigen::ArrayXd m_hat =
        s.beta1 * s.m.array() / (1.0 - b1t * s.beta1) + (1.0 - s.beta1) * g.array() / (1.0 - b1t);
    z.array() -= s.learning_rate * m_hat / denom;
  }
}

/// Value-and-gradient callback: returns f(z) and writes ∇f(z) into grad.
using Objective = std::function<double(const Eigen::VectorXd& z, Eigen::VectorXd& grad)>;

/// Per-iteration observer: (iteration, z, value, gradient).
using Observer =
    std::function<void(long, const Eigen::VectorXd&, double, const Eigen::VectorXd&)>;

struct AdamResult {
  Eigen::VectorXd z;
  double value = 0.0;
  long iterations = 0;
};

/// Fixed-budget first-order descent. The reported value is f at the final z.
inline AdamResult adam_minimize(const Objective& f, Eigen::VectorXd z, AdamState& state,
                                long iterations, const Observer& observe = {}) {
  Eigen::VectorXd g(z.size());
  double value = f(z, g);
  if (!std::isfinite(value)) throw OptimizerError("adam_minimize: non-finite objective at start");
  for (long it = 0; it < iterations; ++it) {
    if (observe) observe(it, z, value, g);
    adam_step(z, g, state);
    value = f(z, g);
    if (!std::isfinite(value)) throw OptimizerError("adam_minimize: objective became non-finite");
  }
  if (observe) observe(iterations, z, value, g);
  return {std::move(z), value, iterations};
}

}  // namespace nde::optim
