#pragma once

// Explicit Runge–Kutta integration.
//
// Fixed-step integration is written once against the ops:: overload set so it
// runs on plain Eigen vectors and on taped ad::Var values alike; the taped run
// records the unrolled step sequence, which is what training differentiates.
// Adaptive integration (Dormand–Prince 5(4), PI control) is plain-only and is
// used for data generation and final evaluation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "nde/error.hpp"
#include "nde/ops.hpp"

namespace nde {

/// Right-hand side dx/dt = f(x, t) of a first-order system of dimension `dim`.
struct OdeField {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, double)> eval;
  Eigen::Index dim = 0;

  Eigen::VectorXd operator()(const Eigen::VectorXd& x, double t) const { return eval(x, t); }
};

struct Trajectory {
  std::vector<double> times;
  Eigen::MatrixXd states;  // one row per time
};

/// Nominal step size plus times every step sequence must land on exactly.
struct StepPlan {
  double step = 0.0;
  std::vector<double> boundaries;
};

namespace detail {

template <class V>
void check_finite(const V& x, double t, const char* what) {
  if (!ops::value(x).allFinite()) throw IntegrationError(std::string("non-finite ") + what, t);
}

inline std::vector<double> sorted_unique(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace detail

/// One classical four-stage Runge–Kutta step from (x, t) to t + h.
template <class Field, class V>
V rk4_step(const Field& field, const V& x, double t, double h) {
  if (!(h > 0.0)) throw InputError("rk4_step: step must be positive");
  detail::check_finite(x, t, "state");
  const double half = 0.5 * h;
  const V k1 = field(x, t);
  detail::check_finite(k1, t, "derivative");
  const V k2 = field(V(x + half * k1), t + half);
  detail::check_finite(k2, t + half, "derivative");
  const V k3 = field(V(x + half * k2), t + half);
  detail::check_finite(k3, t + half, "derivative");
  const V k4 = field(V(x + h * k3), t + h);
  detail::check_finite(k4, t + h, "derivative");
  V next = x + (h / 6.0) * V(V(k1 + k4) + 2.0 * V(k2 + k3));
  detail::check_finite(next, t + h, "state");
  return next;
}

/// Internal step times from t0 to tf: every boundary inside (t0, tf) is hit
/// exactly; each gap between consecutive landing points is split into the
/// fewest equal steps no longer than h.
inline std::vector<double> step_sequence(double t0, double tf, double h,
                                         std::span<const double> boundaries) {
  if (!(h > 0.0)) throw InputError("step_sequence: step must be positive");
  if (!(tf >= t0)) throw InputError("step_sequence: span is reversed");
  std::vector<double> marks{t0, tf};
  for (double b : boundaries)
    if (b > t0 && b < tf) marks.push_back(b);
  marks = detail::sorted_unique(std::move(marks));

  std::vector<double> times{t0};
  for (std::size_t k = 1; k < marks.size(); ++k) {
    const double a = marks[k - 1];
    const double b = marks[k];
    const auto n = static_cast<long>(std::max(1.0, std::ceil((b - a) / h - 1e-9)));
    for (long j = 1; j < n; ++j) times.push_back(a + (b - a) * static_cast<double>(j) / n);
    times.push_back(b);
  }
  return times;
}

/// States at `save_times` (sorted, within [t0, tf]) from repeated rk4_step.
template <class Field, class V>
std::vector<V> integrate_fixed_at(const Field& field, const V& x0, double t0, double tf,
                                  double h, std::span<const double> boundaries,
                                  std::span<const double> save_times) {
  std::vector<double> forced(boundaries.begin(), boundaries.end());
  forced.insert(forced.end(), save_times.begin(), save_times.end());
  for (std::size_t i = 0; i < save_times.size(); ++i) {
    if (save_times[i] < t0 || save_times[i] > tf)
      throw InputError("integrate_fixed: save time outside span");
    if (i > 0 && save_times[i] < save_times[i - 1])
      throw InputError("integrate_fixed: save times must be sorted");
  }
  const auto grid = step_sequence(t0, tf, h, forced);

  std::vector<V> out;
  out.reserve(save_times.size());
  std::size_t next_save = 0;
  V x = x0;
  detail::check_finite(x, t0, "state");
  auto flush = [&](double t) {
    while (next_save < save_times.size() && save_times[next_save] == t) {
      out.push_back(x);
      ++next_save;
    }
  };
  flush(grid.front());
  for (std::size_t k = 1; k < grid.size(); ++k) {
    x = rk4_step(field, x, grid[k - 1], grid[k] - grid[k - 1]);
    flush(grid[k]);
  }
  return out;
}

/// Fixed-step integration returning a Trajectory at `save_times`.
inline Trajectory integrate_fixed(const OdeField& field, const Eigen::VectorXd& x0,
                                  std::pair<double, double> span, const StepPlan& plan,
                                  std::span<const double> save_times) {
  if (x0.size() != field.dim) throw InputError("integrate_fixed: x0 has wrong dimension");
  const auto states = integrate_fixed_at(field, x0, span.first, span.second, plan.step,
                                         plan.boundaries, save_times);
  Trajectory traj;
  traj.times.assign(save_times.begin(), save_times.end());
  traj.states.resize(static_cast<Eigen::Index>(states.size()), field.dim);
  for (std::size_t i = 0; i < states.size(); ++i)
    traj.states.row(static_cast<Eigen::Index>(i)) = states[i].transpose();
  return traj;
}

struct AdaptiveOptions {
  double rtol = 1e-6;
  double atol = 1e-8;
  double safety = 0.9;
  double min_factor = 0.2;
  double max_factor = 5.0;
  long max_steps = 10'000'000;
};

struct AdaptiveStats {
  long accepted = 0;
  long rejected = 0;
};

/// Dormand–Prince 5(4) with PI step-size control. Steps are clipped so that
/// each save time is landed on exactly.
inline Trajectory integrate_adaptive(const OdeField& field, const Eigen::VectorXd& x0,
                                     std::pair<double, double> span,
                                     const AdaptiveOptions& opts,
                                     std::span<const double> save_times,
                                     AdaptiveStats* stats = nullptr) {
  if (!(opts.rtol > 0.0) || !(opts.atol > 0.0))
    throw InputError("integrate_adaptive: tolerances must be positive");
  if (x0.size() != field.dim) throw InputError("integrate_adaptive: x0 has wrong dimension");
  const auto [t0, tf] = span;
  if (!(tf >= t0)) throw InputError("integrate_adaptive: span is reversed");
  for (std::size_t i = 0; i < save_times.size(); ++i) {
    if (save_times[i] < t0 || save_times[i] > tf)
      throw InputError("integrate_adaptive: save time outside span");
    if (i > 0 && save_times[i] < save_times[i - 1])
      throw InputError("integrate_adaptive: save times must be sorted");
  }

  // Dormand–Prince tableau.
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                   a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                   a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                   b6 = 11.0 / 84;
  // b - b_hat for the embedded fourth-order solution.
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                   e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  Trajectory traj;
  traj.times.assign(save_times.begin(), save_times.end());
  traj.states.resize(static_cast<Eigen::Index>(save_times.size()), field.dim);
  std::size_t next_save = 0;

  Eigen::VectorXd x = x0;
  double t = t0;
  auto flush = [&] {
    while (next_save < save_times.size() && save_times[next_save] == t) {
      traj.states.row(static_cast<Eigen::Index>(next_save)) = x.transpose();
      ++next_save;
    }
  };
  flush();
  if (tf == t0 || next_save == save_times.size()) return traj;

  const double length = tf - t0;
  const double end = save_times.back();
  auto scale_of = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (opts.atol + opts.rtol * a.cwiseAbs().cwiseMax(b.cwiseAbs()).array()).matrix();
  };

  Eigen::VectorXd k1 = field(x, t);
  detail::check_finite(k1, t, "derivative");

  // Initial step from the derivative magnitude (Hairer, Nørsett & Wanner).
  double h;
  {
    const Eigen::VectorXd sc = scale_of(x, x);
    const double d0 = (x.array() / sc.array()).abs().maxCoeff();
    const double d1 = (k1.array() / sc.array()).abs().maxCoeff();
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, end - t);
    const Eigen::VectorXd x1 = x + h0 * k1;
    const Eigen::VectorXd f1 = field(x1, t + h0);
    const double d2 = ((f1 - k1).array() / sc.array()).abs().maxCoeff() / h0;
    const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                                : std::pow(0.01 / std::max(d1, d2), 1.0 / 5.0);
    h = std::min(100.0 * h0, h1);
    if (!std::isfinite(h) || h <= 0.0) h = 1e-6 * length;
  }

  constexpr double alpha = 0.7 / 5.0;
  constexpr double beta = 0.4 / 5.0;
  double err_prev = 1e-4;
  long steps = 0;
  while (next_save < save_times.size()) {
    if (++steps > opts.max_steps) throw IntegrationError("adaptive step budget exhausted", t);
    const double target = save_times[next_save];
    bool landing = false;
    double step = h;
    if (t + step >= target) {
      step = target - t;
      landing = true;
    }
    if (step < 1e-12 * length) throw IntegrationError("step size underflow", t);

    const Eigen::VectorXd k2 = field(x + step * (a21 * k1), t + c2 * step);
    const Eigen::VectorXd k3 = field(x + step * (a31 * k1 + a32 * k2), t + c3 * step);
    const Eigen::VectorXd k4 = field(x + step * (a41 * k1 + a42 * k2 + a43 * k3), t + c4 * step);
    const Eigen::VectorXd k5 =
        field(x + step * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), t + c5 * step);
    const Eigen::VectorXd k6 =
        field(x + step * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), t + step);
    const Eigen::VectorXd xn = x + step * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const Eigen::VectorXd k7 = field(xn, t + step);
    const Eigen::VectorXd err_vec =
        step * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double err = (err_vec.array() / scale_of(x, xn).array()).abs().maxCoeff();
    if (!std::isfinite(err) || !xn.allFinite()) {
      h = 0.25 * step;
      if (stats) ++stats->rejected;
      continue;
    }
    if (err <= 1.0) {
      t = landing ? target : t + step;
      x = xn;
      k1 = k7;
      if (stats) ++stats->accepted;
      flush();
      const double e = std::max(err, 1e-10);
      double factor = opts.safety * std::pow(e, -alpha) * std::pow(err_prev, beta);
      factor = std::clamp(factor, opts.min_factor, opts.max_factor);
      // A landing step may have been clipped; grow from the unclipped size.
      h = (landing ? std::max(step, h) : step) * factor;
      err_prev = e;
    } else {
      double factor = opts.safety * std::pow(err, -alpha);
      factor = std::clamp(factor, opts.min_factor, 1.0);
      h = step * factor;
      if (stats) ++stats->rejected;
    }
  }
  return traj;
}

}  // namespace nde
