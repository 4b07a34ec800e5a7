#pragma once

// Limited-memory BFGS with a strong-Wolfe bracketing/zoom line search.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>
#include <vector>

#include "nde/error.hpp"
#include "nde/optim/adam.hpp"

namespace nde::optim {

struct LbfgsOptions {
  int memory = 10;
  double c1 = 1e-4;  // sufficient decrease
  double c2 = 0.9;   // curvature
  long max_iterations = 200;
  long max_evaluations = 4000;
  int max_line_search = 40;
  double gradient_tolerance = 1e-8;  // on max-norm
};

enum class LbfgsStatus { gradient_tolerance, iteration_limit, evaluation_limit, line_search_failure };

inline const char* to_string(LbfgsStatus s) {
  switch (s) {
    case LbfgsStatus::gradient_tolerance: return "gradient tolerance";
    case LbfgsStatus::iteration_limit: return "iteration limit";
    case LbfgsStatus::evaluation_limit: return "evaluation limit";
    case LbfgsStatus::line_search_failure: return "line search failure";
  }
  return "unknown";
}

/// One accepted line-search step, kept so callers can audit the Wolfe conditions.
struct LineSearchRecord {
  double alpha = 0.0;
  double phi0 = 0.0;
  double dphi0 = 0.0;
  double phi = 0.0;
  double dphi = 0.0;
};

/// Curvature pairs (s, y) with sᵀy > 0; the oldest pair is dropped past capacity.
class CurvatureMemory {
 public:
  explicit CurvatureMemory(int capacity) : capacity_(static_cast<std::size_t>(capacity)) {}

  bool push(Eigen::VectorXd s, Eigen::VectorXd y) {
    const double sy = s.dot(y);
    if (!(sy > 1e-12 * s.norm() * y.norm()) || !std::isfinite(sy)) return false;
    pairs_.push_back({std::move(s), std::move(y), 1.0 / sy});
    if (pairs_.size() > capacity_) pairs_.pop_front();
    return true;
  }

  /// Two-loop recursion: returns H·g for the implicit inverse-Hessian H.
  Eigen::VectorXd apply(const Eigen::VectorXd& g) const {
    Eigen::VectorXd q = g;
    std::vector<double> alpha(pairs_.size());
    for (std::size_t k = pairs_.size(); k-- > 0;) {
      alpha[k] = pairs_[k].rho * pairs_[k].s.dot(q);
      q -= alpha[k] * pairs_[k].y;
    }
    if (!pairs_.empty()) {
      const auto& last = pairs_.back();
      q *= last.s.dot(last.y) / last.y.squaredNorm();
    }
    for (std::size_t k = 0; k < pairs_.size(); ++k) {
      const double beta = pairs_[k].rho * pairs_[k].y.dot(q);
      q += (alpha[k] - beta) * pairs_[k].s;
    }
    return q;
  }

  std::size_t size() const { return pairs_.size(); }
  void clear() { pairs_.clear(); }
  double min_curvature() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& p : pairs_) m = std::min(m, p.s.dot(p.y));
    return m;
  }

 private:
  struct Pair {
    Eigen::VectorXd s, y;
    double rho;
  };
  std::size_t capacity_;
  std::deque<Pair> pairs_;
};

struct LbfgsResult {
  Eigen::VectorXd z;
  double value = 0.0;
  Eigen::VectorXd gradient;
  LbfgsStatus status = LbfgsStatus::iteration_limit;
  long iterations = 0;
  long evaluations = 0;
  std::vector<LineSearchRecord> steps;
};

namespace detail {

/// Minimizer of the cubic interpolating (a, fa, da) and (b, fb, db), kept
/// inside the safeguarded interior of [a, b]; bisection as the fallback.
inline double cubic_step(double a, double fa, double da, double b, double fb, double db) {
  const double lo = std::min(a, b), hi = std::max(a, b);
  const double margin = 0.1 * (hi - lo);
  const double mid = 0.5 * (a + b);
  if (!std::isfinite(fb) || !std::isfinite(db)) return mid;
  const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - da * db;
  if (disc < 0.0) return mid;
  const double d2 = std::copysign(std::sqrt(disc), b - a);
  const double t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
  if (!std::isfinite(t) || t < lo + margin || t > hi - margin) return mid;
  return t;
}

}  // namespace detail

inline LbfgsResult lbfgs_minimize(const Objective& f, Eigen::VectorXd z0,
                                  const LbfgsOptions& opts = {}, const Observer& observe = {}) {
  LbfgsResult res;
  res.z = std::move(z0);
  res.gradient.resize(res.z.size());
  res.value = f(res.z, res.gradient);
  res.evaluations = 1;
  if (!std::isfinite(res.value) || !res.gradient.allFinite())
    throw OptimizerError("lbfgs: non-finite objective or gradient at the starting point");

  CurvatureMemory memory(opts.memory);
  Eigen::VectorXd trial(res.z.size());
  Eigen::VectorXd trial_grad(res.z.size());

  // Evaluates φ(α) = f(z + α d) and φ'(α). Non-finite values read as +inf.
  auto phi = [&](double alpha, const Eigen::VectorXd& d, double& dphi) {
    trial = res.z + alpha * d;
    double v;
    try {
      v = f(trial, trial_grad);
    } catch (const IntegrationError&) {
      v = std::numeric_limits<double>::infinity();
    }
    ++res.evaluations;
    if (!std::isfinite(v) || !trial_grad.allFinite()) {
      dphi = std::numeric_limits<double>::quiet_NaN();
      return std::numeric_limits<double>::infinity();
    }
    dphi = trial_grad.dot(d);
    return v;
  };

  for (long iter = 0;; ++iter) {
    if (observe) observe(iter, res.z, res.value, res.gradient);
    if (res.gradient.lpNorm<Eigen::Infinity>() <= opts.gradient_tolerance) {
      res.status = LbfgsStatus::gradient_tolerance;
      return res;
    }
    if (iter >= opts.max_iterations) {
      res.status = LbfgsStatus::iteration_limit;
      return res;
    }
    if (res.evaluations >= opts.max_evaluations) {
      res.status = LbfgsStatus::evaluation_limit;
      return res;
    }

    Eigen::VectorXd d = -memory.apply(res.gradient);
    double dphi0 = res.gradient.dot(d);
    if (!(dphi0 < 0.0) || !std::isfinite(dphi0)) {
      memory.clear();
      d = -res.gradient;
      dphi0 = res.gradient.dot(d);
    }
    const double phi0 = res.value;
    double alpha = memory.size() == 0
                       ? std::min(1.0, 1.0 / std::max(1e-300, res.gradient.lpNorm<Eigen::Infinity>()))
                       : 1.0;

    // Bracketing phase, then zoom.
    double a_prev = 0.0, f_prev = phi0, d_prev = dphi0;
    double a_acc = -1.0, f_acc = 0.0, d_acc = 0.0;
    Eigen::VectorXd z_acc, g_acc;
    auto accept = [&](double a, double fa, double da) {
      a_acc = a;
      f_acc = fa;
      d_acc = da;
      z_acc = trial;
      g_acc = trial_grad;
    };
    auto zoom = [&](double lo, double flo, double dlo, double hi, double fhi, double dhi) {
      for (int k = 0; k < opts.max_line_search; ++k) {
        const double a = detail::cubic_step(lo, flo, dlo, hi, fhi, dhi);
        double da;
        const double fa = phi(a, d, da);
        if (fa > phi0 + opts.c1 * a * dphi0 || fa >= flo) {
          hi = a;
          fhi = fa;
          dhi = da;
        } else {
          if (std::abs(da) <= -opts.c2 * dphi0) {
            accept(a, fa, da);
            return;
          }
          if (da * (hi - lo) >= 0.0) {
            hi = lo;
            fhi = flo;
            dhi = dlo;
          }
          lo = a;
          flo = fa;
          dlo = da;
        }
        if (std::abs(hi - lo) <= 1e-16 * std::max(1.0, std::abs(lo))) return;
      }
    };

    for (int k = 0; k < opts.max_line_search; ++k) {
      double da;
      const double fa = phi(alpha, d, da);
      if (fa > phi0 + opts.c1 * alpha * dphi0 || (k > 0 && fa >= f_prev)) {
        zoom(a_prev, f_prev, d_prev, alpha, fa, da);
        break;
      }
      if (std::abs(da) <= -opts.c2 * dphi0) {
        accept(alpha, fa, da);
        break;
      }
      if (da >= 0.0) {
        zoom(alpha, fa, da, a_prev, f_prev, d_prev);
        break;
      }
      a_prev = alpha;
      f_prev = fa;
      d_prev = da;
      alpha *= 2.0;
    }

    if (a_acc <= 0.0) {
      res.status = LbfgsStatus::line_search_failure;
      res.iterations = iter;
      return res;
    }

    res.steps.push_back({a_acc, phi0, dphi0, f_acc, d_acc});
    memory.push(z_acc - res.z, g_acc - res.gradient);
    res.z = std::move(z_acc);
    res.gradient = std::move(g_acc);
    res.value = f_acc;
    res.iterations = iter + 1;
  }
}

}  // namespace nde::optim
