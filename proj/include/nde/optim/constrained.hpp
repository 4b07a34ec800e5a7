#pragma once

// Equality-constrained minimization of C(z) s.t. h(z) = 0 through the
// penalty objective φ = C + ρ·Q(h) and the augmented Lagrangian
// φ = C + hᵀv + ρ·hᵀh with an outer multiplier/penalty update loop.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "nde/error.hpp"
#include "nde/optim/adam.hpp"
#include "nde/optim/lbfgs.hpp"

namespace nde::optim {

/// Cost and defects at z, plus the vector-Jacobian product
/// (w_c, w_h) ↦ w_c·∇C + ∇hᵀ·w_h at the same z.
struct Linearization {
  double cost = 0.0;
  Eigen::VectorXd defects;
  std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)> pullback;
};

using ConstrainedProblem = std::function<Linearization(const Eigen::VectorXd&)>;

enum class PenaltyKind { quadratic, l1, l2, linf };

inline PenaltyKind penalty_kind_from(const std::string& s) {
  if (s == "quadratic") return PenaltyKind::quadratic;
  if (s == "l1") return PenaltyKind::l1;
  if (s == "l2") return PenaltyKind::l2;
  if (s == "linf") return PenaltyKind::linf;
  throw ConfigError("unknown penalty kind '" + s + "'");
}

inline const char* to_string(PenaltyKind k) {
  switch (k) {
    case PenaltyKind::quadratic: return "quadratic";
    case PenaltyKind::l1: return "l1";
    case PenaltyKind::l2: return "l2";
    case PenaltyKind::linf: return "linf";
  }
  return "unknown";
}

inline double max_abs(const Eigen::VectorXd& h) {
  return h.size() == 0 ? 0.0 : h.lpNorm<Eigen::Infinity>();
}

inline double penalty_objective(double cost, const Eigen::VectorXd& h, double rho,
                                PenaltyKind kind) {
  if (rho < 0.0) throw InputError("penalty_objective: rho must be nonnegative");
  switch (kind) {
    case PenaltyKind::quadratic: return cost + rho * h.squaredNorm();
    case PenaltyKind::l1: return cost + rho * h.lpNorm<1>();
    case PenaltyKind::l2: return cost + rho * h.norm();
    case PenaltyKind::linf: return cost + rho * max_abs(h);
  }
  return cost;
}

/// ∂φ/∂h for penalty_objective; a subgradient where Q is not differentiable.
inline Eigen::VectorXd penalty_gradient_h(const Eigen::VectorXd& h, double rho, PenaltyKind kind) {
  switch (kind) {
    case PenaltyKind::quadratic:
      return 2.0 * rho * h;
    case PenaltyKind::l1:
      return rho * h.unaryExpr([](double x) { return double((x > 0) - (x < 0)); });
    case PenaltyKind::l2: {
      const double n = h.norm();
      return n > 0.0 ? Eigen::VectorXd(rho * h / n) : Eigen::VectorXd::Zero(h.size());
    }
    case PenaltyKind::linf: {
      Eigen::VectorXd g = Eigen::VectorXd::Zero(h.size());
      if (h.size() == 0) return g;
      Eigen::Index k = 0;
      h.cwiseAbs().maxCoeff(&k);
      g[k] = rho * double((h[k] > 0) - (h[k] < 0));
      return g;
    }
  }
  return Eigen::VectorXd::Zero(h.size());
}

inline double auglag_objective(double cost, const Eigen::VectorXd& h, const Eigen::VectorXd& v,
                               double rho) {
  if (h.size() != v.size()) throw InputError("auglag_objective: multiplier length mismatch");
  return cost + h.dot(v) + rho * h.squaredNorm();
}

inline Eigen::VectorXd auglag_gradient_h(const Eigen::VectorXd& h, const Eigen::VectorXd& v,
                                         double rho) {
  return v + 2.0 * rho * h;
}

enum class InnerMethod { lbfgs, adam, nadam };

inline InnerMethod inner_method_from(const std::string& s) {
  if (s == "lbfgs") return InnerMethod::lbfgs;
  if (s == "adam") return InnerMethod::adam;
  if (s == "nadam") return InnerMethod::nadam;
  throw ConfigError("unknown inner optimizer '" + s + "'");
}

inline const char* to_string(InnerMethod m) {
  switch (m) {
    case InnerMethod::lbfgs: return "lbfgs";
    case InnerMethod::adam: return "adam";
    case InnerMethod::nadam: return "nadam";
  }
  return "unknown";
}

struct InnerOptions {
  InnerMethod method = InnerMethod::lbfgs;
  LbfgsOptions lbfgs;
  double learning_rate = 1e-3;
  long first_order_iterations = 2000;
};

struct AugLagState {
  Eigen::VectorXd multipliers;  // v; sized on first use
  double rho = 0.0;
  long outer_iteration = 0;
  double tolerance = 1e-3;  // on max|h|
  double previous_violation = std::numeric_limits<double>::infinity();
  double initial_rho = 1.0;
  double growth = 10.0;
  double decrease_ratio = 0.25;
  long max_outer = 30;
};

/// One row of the training log.
struct LogRecord {
  long outer = 0;
  long inner = 0;
  double objective = 0.0;  // φ
  double cost = 0.0;       // C
  double max_defect = 0.0;
  double rho = 0.0;
  double gradient_norm = 0.0;  // max-norm of ∇φ
};

using Logger = std::function<void(const LogRecord&)>;

struct OuterRecord {
  long outer = 0;
  double cost = 0.0;
  double max_defect = 0.0;
  double rho = 0.0;
  std::string inner_status;
  long inner_iterations = 0;
};

struct SolveReport {
  bool converged = false;
  std::vector<OuterRecord> outer;
};

struct SolveResult {
  Eigen::VectorXd z;
  double cost = 0.0;
  Eigen::VectorXd defects;
  SolveReport report;
};

namespace detail {

/// Minimizes C + P(h) with the configured inner method. `weights` maps h to
/// (P(h), ∂P/∂h). Every evaluation is remembered so the logger can report C
/// and max|h| at each accepted iterate.
template <class Weights>
std::pair<Eigen::VectorXd, OuterRecord> inner_solve(const ConstrainedProblem& problem,
                                                    Eigen::VectorXd z0, const InnerOptions& inner,
                                                    Weights&& weights, long outer, double rho,
                                                    const Logger& log) {
  double last_cost = 0.0;
  double last_defect = 0.0;
  Objective phi = [&](const Eigen::VectorXd& z, Eigen::VectorXd& g) {
    Linearization lin = problem(z);
    const auto [penalty, dh] = weights(lin.defects);
    g = lin.pullback(1.0, dh);
    last_cost = lin.cost;
    last_defect = max_abs(lin.defects);
    return lin.cost + penalty;
  };
  Observer observe;
  if (log) {
    observe = [&](long it, const Eigen::VectorXd&, double value, const Eigen::VectorXd& g) {
      log({outer, it, value, last_cost, last_defect, rho, g.lpNorm<Eigen::Infinity>()});
    };
  }

  OuterRecord rec;
  rec.outer = outer;
  rec.rho = rho;
  Eigen::VectorXd z;
  if (inner.method == InnerMethod::lbfgs) {
    auto r = lbfgs_minimize(phi, std::move(z0), inner.lbfgs, observe);
    rec.inner_status = to_string(r.status);
    rec.inner_iterations = r.iterations;
    z = std::move(r.z);
  } else {
    AdamState state = inner.method == InnerMethod::nadam ? AdamState::nadam(inner.learning_rate)
                                                         : AdamState::adam(inner.learning_rate);
    auto r = adam_minimize(phi, std::move(z0), state, inner.first_order_iterations, observe);
    rec.inner_status = "iteration budget";
    rec.inner_iterations = r.iterations;
    z = std::move(r.z);
  }
  return {std::move(z), rec};
}

}  // namespace detail

/// Outer loop: minimize the augmented Lagrangian, stop when max|h| ≤ tolerance,
/// otherwise v ← v + 2ρh and grow ρ by `growth` when max|h| did not shrink by
/// `decrease_ratio`. The first inner solve runs with v = 0, ρ = 0.
inline SolveResult auglag_solve(const ConstrainedProblem& problem, Eigen::VectorXd z0,
                                const InnerOptions& inner, AugLagState& state,
                                const Logger& log = {}) {
  SolveResult result;
  Eigen::VectorXd z = std::move(z0);
  while (true) {
    ++state.outer_iteration;
    const Eigen::VectorXd* v = &state.multipliers;
    const double rho = state.rho;
    auto weights = [&](const Eigen::VectorXd& h) {
      if (state.multipliers.size() != h.size()) state.multipliers = Eigen::VectorXd::Zero(h.size());
      return std::pair<double, Eigen::VectorXd>{h.dot(*v) + rho * h.squaredNorm(),
                                                auglag_gradient_h(h, *v, rho)};
    };
    auto [z_new, rec] =
        detail::inner_solve(problem, std::move(z), inner, weights, state.outer_iteration, rho, log);
    z = std::move(z_new);

    const Linearization lin = problem(z);
    const double violation = max_abs(lin.defects);
    rec.cost = lin.cost;
    rec.max_defect = violation;
    result.report.outer.push_back(rec);
    result.cost = lin.cost;
    result.defects = lin.defects;
    if (state.multipliers.size() != lin.defects.size())
      state.multipliers = Eigen::VectorXd::Zero(lin.defects.size());

    if (violation <= state.tolerance) {
      result.report.converged = true;
      break;
    }
    if (state.outer_iteration >= state.max_outer) break;

    state.multipliers += 2.0 * state.rho * lin.defects;
    if (state.rho == 0.0)
      state.rho = state.initial_rho;
    else if (violation > state.decrease_ratio * state.previous_violation)
      state.rho *= state.growth;
    state.previous_violation = violation;
  }
  result.z = std::move(z);
  return result;
}

/// Single minimization of the penalty objective C + ρ·Q(h).
inline SolveResult penalty_solve(const ConstrainedProblem& problem, Eigen::VectorXd z0,
                                 const InnerOptions& inner, double rho, PenaltyKind kind,
                                 double tolerance, const Logger& log = {}) {
  auto weights = [&](const Eigen::VectorXd& h) {
    return std::pair<double, Eigen::VectorXd>{penalty_objective(0.0, h, rho, kind),
                                              penalty_gradient_h(h, rho, kind)};
  };
  auto [z, rec] = detail::inner_solve(problem, std::move(z0), inner, weights, 1, rho, log);
  const Linearization lin = problem(z);
  rec.cost = lin.cost;
  rec.max_defect = max_abs(lin.defects);
  SolveResult result;
  result.z = std::move(z);
  result.cost = lin.cost;
  result.defects = lin.defects;
  result.report.outer.push_back(rec);
  result.report.converged = rec.max_defect <= tolerance;
  return result;
}

}  // namespace nde::optim
