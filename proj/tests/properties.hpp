#pragma once

// Randomized property checks shared by the unit tests and the acceptance
// runner. Each returns the number of cases run and a description of the
// first failing case (empty when all pass).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "nde/mlp.hpp"
#include "nde/optim/constrained.hpp"
#include "nde/problems/spiral.hpp"
#include "nde/shooting.hpp"

namespace nde::props {

struct Outcome {
  int cases = 0;
  std::string failure;
  bool ok() const { return failure.empty(); }
};

namespace detail {

inline std::vector<int> random_sizes(std::mt19937_64& rng, int in, int out) {
  std::uniform_int_distribution<int> depth(1, 3);
  std::uniform_int_distribution<int> width(1, 20);
  std::vector<int> sizes{in};
  for (int d = depth(rng); d > 0; --d) sizes.push_back(width(rng));
  sizes.push_back(out);
  return sizes;
}

/// Random sorted observation times on [t0, tf] that include both ends.
inline std::vector<double> random_times(std::mt19937_64& rng, double t0, double tf, int n) {
  std::uniform_int_distribution<int> tick(1, 999);
  std::vector<double> t{t0, tf};
  while (static_cast<int>(t.size()) < n) {
    t.push_back(t0 + (tf - t0) * tick(rng) / 1000.0);
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
  }
  return t;
}

struct RandomCase {
  NeuralOdeModel model;
  MlpParams theta;
  TimeSeries data;
  double step = 0.0;
  RegSpec reg;
};

/// A small smooth neural ODE with contracting-scale weights and random data.
inline RandomCase random_case(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim(1, 3);
  std::uniform_int_distribution<int> count(5, 40);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> span(0.5, 4.0);
  std::uniform_real_distribution<double> step(0.02, 0.3);
  RandomCase c;
  c.model.dim = dim(rng);
  const auto nx = static_cast<int>(c.model.dim);
  c.theta = mlp_new(random_sizes(rng, nx, nx), rng() % 2 == 0, rng());
  for (auto& b : c.theta.biases) b = 0.1 * Eigen::VectorXd::NullaryExpr(b.size(), [&] { return unit(rng); });
  c.data.times = random_times(rng, 0.0, span(rng), count(rng));
  c.data.values = Eigen::MatrixXd::NullaryExpr(static_cast<Eigen::Index>(c.data.times.size()), nx,
                                               [&] { return unit(rng); });
  c.step = step(rng);
  c.reg = {rng() % 2 == 0 ? RegKind::spectral_sum : RegKind::l2, std::abs(unit(rng)), 25};
  return c;
}

/// Grid with n intervals whose interior boundaries are distinct random data times.
inline ShootingGrid random_grid(std::mt19937_64& rng, const std::vector<double>& t, int n) {
  std::vector<double> interior(t.begin() + 1, t.end() - 1);
  std::shuffle(interior.begin(), interior.end(), rng);
  interior.resize(static_cast<std::size_t>(n - 1));
  std::sort(interior.begin(), interior.end());
  ShootingGrid grid{{t.front()}};
  grid.boundaries.insert(grid.boundaries.end(), interior.begin(), interior.end());
  grid.boundaries.push_back(t.back());
  return grid;
}

inline Eigen::VectorXd random_state(std::mt19937_64& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  return Eigen::VectorXd::NullaryExpr(n, [&] { return unit(rng); });
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace detail

/// Bias-free networks map 0 to exactly 0.
inline Outcome zero_map(int cases, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Outcome out;
  for (; out.cases < cases; ++out.cases) {
    std::uniform_int_distribution<int> io(1, 6);
    const auto sizes = detail::random_sizes(rng, io(rng), io(rng));
    const auto p = mlp_new(sizes, false, rng());
    const Eigen::VectorXd y = mlp_forward(p, Eigen::VectorXd(Eigen::VectorXd::Zero(p.input_size())));
    if (!(y.array() == 0.0).all()) {
      out.failure = "case " + std::to_string(out.cases) + ": nonzero output at the origin";
      return out;
    }
  }
  return out;
}

/// One interval reproduces a direct single-IVP SSE (plus regularizer).
inline Outcome single_shooting_equivalence(int cases, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Outcome out;
  for (; out.cases < cases; ++out.cases) {
    auto c = detail::random_case(rng);
    const auto& t = c.data.times;
    const Eigen::VectorXd x0 = detail::random_state(rng, c.model.dim);
    ShootingOptions opts;
    opts.step = c.step;
    ShootingProblem problem(c.model, c.theta, c.data, ShootingGrid{{t.front(), t.back()}}, c.reg, opts);
    ShootingDecision d{c.theta, {x0}};
    const auto ev = problem.evaluate(problem.pack(d));

    const OdeField field{[&](const Eigen::VectorXd& x, double) { return mlp_forward(c.theta, x); },
                         c.model.dim};
    const auto traj = integrate_fixed(field, x0, {t.front(), t.back()}, {c.step, {}}, t);
    const double direct = sse(traj.states, c.data.values) + c.reg.weight * regularizer(c.theta, c.reg);
    if (detail::rel(ev.cost, direct) > 1e-12 || ev.defects.size() != 0) {
      std::ostringstream msg;
      msg << "case " << out.cases << ": cost " << ev.cost << " vs direct " << direct;
      out.failure = msg.str();
      return out;
    }
  }
  return out;
}

/// With shooting states taken from one continuous solve, defects vanish and
/// the per-interval states match that solve.
inline Outcome zero_defect_continuity(int cases, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Outcome out;
  for (; out.cases < cases; ++out.cases) {
    auto c = detail::random_case(rng);
    const auto& t = c.data.times;
    std::uniform_int_distribution<int> pick(2, std::min<int>(8, static_cast<int>(t.size()) - 1));
    const auto grid = detail::random_grid(rng, t, pick(rng));
    const Eigen::VectorXd x0 = detail::random_state(rng, c.model.dim);

    std::vector<double> save = t;
    save.insert(save.end(), grid.boundaries.begin(), grid.boundaries.end());
    std::sort(save.begin(), save.end());
    save.erase(std::unique(save.begin(), save.end()), save.end());
    const OdeField field{[&](const Eigen::VectorXd& x, double) { return mlp_forward(c.theta, x); },
                         c.model.dim};
    const auto whole = integrate_fixed(field, x0, {t.front(), t.back()}, {c.step, {}}, save);
    auto at = [&](double time) {
      const auto k = std::lower_bound(save.begin(), save.end(), time) - save.begin();
      return Eigen::VectorXd(whole.states.row(k).transpose());
    };

    ShootingOptions opts;
    opts.step = c.step;
    ShootingProblem problem(c.model, c.theta, c.data, grid, c.reg, opts);
    ShootingDecision d{c.theta, {}};
    for (std::size_t i = 0; i < grid.intervals(); ++i) d.states.push_back(at(grid.boundaries[i]));
    const auto ev = problem.evaluate(problem.pack(d));

    double worst = optim::max_abs(ev.defects);
    for (std::size_t r = 0; r < ev.stitched.times.size(); ++r)
      worst = std::max(worst, (ev.stitched.states.row(static_cast<Eigen::Index>(r)).transpose() -
                               at(ev.stitched.times[r]))
                                  .lpNorm<Eigen::Infinity>());
    if (worst > 1e-8) {
      out.failure = "case " + std::to_string(out.cases) + ": mismatch " + std::to_string(worst);
      return out;
    }
  }
  return out;
}

/// Every observation is charged to exactly one interval, the one whose
/// half-open window contains it (the final boundary belongs to the last).
inline Outcome partition_count(int cases, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Outcome out;
  for (; out.cases < cases; ++out.cases) {
    auto c = detail::random_case(rng);
    const auto& t = c.data.times;
    const int n_max = static_cast<int>(t.size()) - 1;
    std::uniform_int_distribution<int> pick(1, n_max);
    const auto grid = detail::random_grid(rng, t, pick(rng));
    ShootingOptions opts;
    opts.step = c.step;
    ShootingProblem problem(c.model, c.theta, c.data, grid, c.reg, opts);
    ShootingDecision d{c.theta, std::vector<Eigen::VectorXd>(grid.intervals(),
                                                              Eigen::VectorXd::Zero(c.model.dim))};
    const auto ev = problem.evaluate(problem.pack(d));
    const auto owned = problem.ownership();
    std::size_t total = 0;
    for (auto k : owned) total += k;
    bool ok = ev.residual_count == t.size() && total == t.size();
    std::size_t k = 0;
    for (std::size_t i = 0; ok && i < owned.size(); ++i)
      for (std::size_t j = 0; j < owned[i]; ++j, ++k) {
        const bool last = i + 1 == owned.size();
        const double lo = grid.boundaries[i], hi = grid.boundaries[i + 1];
        ok = ok && t[k] >= lo && (t[k] < hi || (last && t[k] == hi));
      }
    if (!ok) {
      out.failure = "case " + std::to_string(out.cases) + ": residual count " +
                    std::to_string(ev.residual_count) + " for " + std::to_string(t.size()) + " times";
      return out;
    }
  }
  return out;
}

/// Termwise identities of the penalty and augmented-Lagrangian objectives.
inline Outcome penalty_identities(int cases, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len(1, 12);
  std::uniform_real_distribution<double> unit(-2.0, 2.0);
  std::uniform_real_distribution<double> pos(0.0, 50.0);
  Outcome out;
  auto fail = [&](const std::string& what) {
    out.failure = "case " + std::to_string(out.cases) + ": " + what;
  };
  using optim::PenaltyKind;
  for (; out.cases < cases; ++out.cases) {
    const Eigen::Index n = len(rng);
    const double c = unit(rng), rho = pos(rng);
    const Eigen::VectorXd h = Eigen::VectorXd::NullaryExpr(n, [&] { return unit(rng); });
    const Eigen::VectorXd v = Eigen::VectorXd::NullaryExpr(n, [&] { return unit(rng); });
    const double phi = optim::auglag_objective(c, h, v, rho);
    const double scale = 1.0 + std::abs(c) + h.cwiseAbs().dot(v.cwiseAbs()) + rho * h.squaredNorm();
    if (std::abs(phi - (c + h.dot(v) + rho * h.squaredNorm())) > 1e-12 * scale) return fail("AL value"), out;
    if (optim::auglag_objective(c, Eigen::VectorXd::Zero(n), v, rho) != c) return fail("AL at h=0"), out;
    if (std::abs(optim::auglag_objective(c, h, Eigen::VectorXd::Zero(n), rho) -
                 optim::penalty_objective(c, h, rho, PenaltyKind::quadratic)) > 1e-12 * scale)
      return fail("AL with v=0 vs quadratic penalty"), out;
    // The objective is affine in ρ and in each v_i, so unit differences are exact derivatives.
    const double d_rho = optim::auglag_objective(c, h, v, rho + 1.0) - phi;
    if (std::abs(d_rho - h.squaredNorm()) > 1e-12 * scale) return fail("d/dρ"), out;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd v1 = v;
      v1[i] += 1.0;
      if (std::abs(optim::auglag_objective(c, h, v1, rho) - phi - h[i]) > 1e-12 * scale)
        return fail("d/dv"), out;
    }
    for (auto kind : {PenaltyKind::quadratic, PenaltyKind::l1, PenaltyKind::l2, PenaltyKind::linf}) {
      if (optim::penalty_objective(c, Eigen::VectorXd::Zero(n), rho, kind) != c)
        return fail(std::string("penalty at h=0, ") + optim::to_string(kind)), out;
      if (!(optim::penalty_objective(c, h, rho + 0.5, kind) > optim::penalty_objective(c, h, rho, kind)))
        return fail(std::string("penalty not increasing in ρ, ") + optim::to_string(kind)), out;
    }
  }
  return out;
}

}  // namespace nde::props
