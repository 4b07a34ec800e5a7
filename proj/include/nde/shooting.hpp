#pragma once

// Single- and multiple-shooting objectives.
//
// The span is cut at grid boundaries τ_0 < … < τ_N. Interval i starts from a
// free shooting state s_i at τ_{i-1} and owns the observations in
// [τ_{i-1}, τ_i) (the last interval also owns τ_N), so every observation is
// charged exactly once for any N. The defect of interval i < N is its end
// state minus s_{i+1}.
//
// Decision vector layout: [θ ; s_1 ; … ; s_N], with s_1 omitted when pinned.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nde/ad.hpp"
#include "nde/error.hpp"
#include "nde/mlp.hpp"
#include "nde/ode.hpp"
#include "nde/optim/constrained.hpp"
#include "nde/parallel.hpp"

namespace nde {

struct TimeSeries {
  std::vector<double> times;
  Eigen::MatrixXd values;  // n_times × n_obs

  Eigen::Index size() const { return static_cast<Eigen::Index>(times.size()); }
  Eigen::Index observed() const { return values.cols(); }

  void validate() const {
    if (static_cast<Eigen::Index>(times.size()) != values.rows())
      throw InputError("TimeSeries: times and values disagree in length");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1])) throw InputError("TimeSeries: times must be strictly increasing");
    if (!values.allFinite()) throw InputError("TimeSeries: values must be finite");
  }

  /// Rows with times in [t0, t1].
  TimeSeries window(double t0, double t1) const {
    TimeSeries out;
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < times.size(); ++i)
      if (times[i] >= t0 && times[i] <= t1) rows.push_back(static_cast<Eigen::Index>(i));
    out.values.resize(static_cast<Eigen::Index>(rows.size()), values.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      out.times.push_back(times[static_cast<std::size_t>(rows[k])]);
      out.values.row(static_cast<Eigen::Index>(k)) = values.row(rows[k]);
    }
    return out;
  }
};

struct ShootingGrid {
  std::vector<double> boundaries;
  std::size_t intervals() const { return boundaries.size() - 1; }
};

/// Uniform boundaries on [t0, tf] snapped to the nearest data time.
inline ShootingGrid make_grid(double t0, double tf, int n_intervals,
                              std::span<const double> data_times) {
  if (n_intervals < 1) throw GridError("make_grid: need at least one interval");
  if (!(tf > t0)) throw GridError("make_grid: empty span");
  if (data_times.empty()) throw GridError("make_grid: no data times");
  auto nearest = [&](double t) {
    auto it = std::lower_bound(data_times.begin(), data_times.end(), t);
    if (it == data_times.end()) return data_times.back();
    if (it == data_times.begin()) return *it;
    const double hi = *it, lo = *(it - 1);
    return (t - lo) <= (hi - t) ? lo : hi;
  };
  ShootingGrid grid;
  for (int k = 0; k <= n_intervals; ++k) {
    const double raw = t0 + (tf - t0) * static_cast<double>(k) / n_intervals;
    grid.boundaries.push_back(nearest(raw));
  }
  for (std::size_t k = 1; k < grid.boundaries.size(); ++k)
    if (!(grid.boundaries[k] > grid.boundaries[k - 1]))
      throw GridError("make_grid: " + std::to_string(n_intervals) +
                      " intervals are too many for distinct snapped boundaries");
  return grid;
}

enum class InitStrategy { replicate_x0, data_at_boundaries };

inline InitStrategy init_strategy_from(const std::string& s) {
  if (s == "replicate_x0") return InitStrategy::replicate_x0;
  if (s == "data_at_boundaries") return InitStrategy::data_at_boundaries;
  throw ConfigError("unknown shooting init strategy '" + s + "'");
}

struct ShootingDecision {
  MlpParams theta;
  std::vector<Eigen::VectorXd> states;  // s_1 … s_N
};

/// Initial shooting states. Unobserved state components get `fallback`.
inline ShootingDecision init_decision(const ShootingGrid& grid, const TimeSeries& data,
                                      InitStrategy strategy, const MlpParams& theta0,
                                      Eigen::Index state_dim, double fallback = 0.0) {
  if (data.size() == 0) throw InitializationError("init_decision: empty data");
  if (data.observed() > state_dim)
    throw InitializationError("init_decision: more observed components than states");
  auto state_from_row = [&](Eigen::Index row) {
    Eigen::VectorXd s = Eigen::VectorXd::Constant(state_dim, fallback);
    s.head(data.observed()) = data.values.row(row).transpose();
    return s;
  };
  ShootingDecision d{theta0, {}};
  for (std::size_t i = 0; i < grid.intervals(); ++i) {
    if (strategy == InitStrategy::replicate_x0) {
      d.states.push_back(state_from_row(0));
      continue;
    }
    const double tau = grid.boundaries[i];
    const double tol = 1e-9 * std::max(1.0, std::abs(tau));
    auto it = std::find_if(data.times.begin(), data.times.end(),
                           [&](double t) { return std::abs(t - tau) <= tol; });
    if (it == data.times.end())
      throw InitializationError("init_decision: no observation at boundary t=" + std::to_string(tau));
    d.states.push_back(state_from_row(static_cast<Eigen::Index>(it - data.times.begin())));
  }
  return d;
}

inline double sse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& obs) {
  if (pred.rows() != obs.rows() || pred.cols() != obs.cols())
    throw InputError("sse: shape mismatch");
  return (pred - obs).squaredNorm();
}

inline double rmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& obs) {
  if (pred.size() != obs.size()) throw InputError("rmse: length mismatch");
  if (pred.size() == 0) throw InputError("rmse: empty input");
  return std::sqrt((pred - obs).squaredNorm() / static_cast<double>(pred.size()));
}

struct ShootingOptions {
  double step = 0.05;
  bool pin_initial = false;
  Eigen::VectorXd pinned_state;  // used when pin_initial
  int threads = 1;
  /// Evaluation order of intervals (empty = natural). Results never depend on it.
  std::vector<std::size_t> order;
};

struct ShootingEvaluation {
  double cost = 0.0;  // data_sse + weight · R
  double data_sse = 0.0;
  double regularization = 0.0;  // unscaled R
  Eigen::VectorXd defects;
  Eigen::MatrixXd predictions;  // one row per observation, observed components
  std::size_t residual_count = 0;
  Trajectory stitched;                  // owned data times plus interior endpoints
  std::vector<std::size_t> owner;       // interval (1-based) of each stitched row
  std::vector<double> defect_times;     // τ_1 … τ_{N-1}
};

/// A dynamics model for the shooting problem. Requirements:
///   Eigen::Index state_dim() const;
///   template <class Net> auto dynamics(const Net&) const;   // (const V& x, double t) -> V
///   std::vector<double> breakpoints(double t0, double tf) const;
template <class Model>
class ShootingProblem {
 public:
  ShootingProblem(Model model, MlpParams shape, TimeSeries data, ShootingGrid grid, RegSpec reg,
                  ShootingOptions opts)
      : model_(std::move(model)),
        shape_(std::move(shape)),
        data_(std::move(data)),
        grid_(std::move(grid)),
        reg_(reg),
        opts_(std::move(opts)) {
    data_.validate();
    nx_ = model_.state_dim();
    if (data_.observed() > nx_) throw InputError("ShootingProblem: more observed components than states");
    if (grid_.boundaries.size() < 2) throw GridError("ShootingProblem: grid needs two boundaries");
    if (data_.size() == 0) throw InputError("ShootingProblem: empty data");
    if (data_.times.front() < grid_.boundaries.front() || data_.times.back() > grid_.boundaries.back())
      throw InputError("ShootingProblem: data extends beyond the shooting grid");
    if (opts_.pin_initial && opts_.pinned_state.size() != nx_)
      throw InputError("ShootingProblem: pinned state has wrong dimension");
    if (!(opts_.step > 0.0)) throw InputError("ShootingProblem: step must be positive");
    build_intervals();
  }

  const Model& model() const { return model_; }
  const MlpParams& shape() const { return shape_; }
  const TimeSeries& data() const { return data_; }
  const ShootingGrid& grid() const { return grid_; }
  const RegSpec& reg() const { return reg_; }
  const ShootingOptions& options() const { return opts_; }
  Eigen::Index state_dim() const { return nx_; }
  std::size_t intervals() const { return grid_.intervals(); }

  Eigen::Index theta_size() const { return shape_.parameter_count(); }
  Eigen::Index decision_size() const {
    const auto free_states = static_cast<Eigen::Index>(intervals()) - (opts_.pin_initial ? 1 : 0);
    return theta_size() + free_states * nx_;
  }
  Eigen::Index defect_size() const { return static_cast<Eigen::Index>(intervals() - 1) * nx_; }

  /// Offset of s_{i+1} (0-based i) in z, or −1 when pinned.
  Eigen::Index state_offset(std::size_t i) const {
    if (opts_.pin_initial && i == 0) return -1;
    const auto slot = static_cast<Eigen::Index>(i) - (opts_.pin_initial ? 1 : 0);
    return theta_size() + slot * nx_;
  }

  Eigen::VectorXd pack(const ShootingDecision& d) const {
    if (d.states.size() != intervals()) throw InputError("pack: wrong number of shooting states");
    Eigen::VectorXd z(decision_size());
    z.head(theta_size()) = d.theta.flatten();
    for (std::size_t i = 0; i < intervals(); ++i) {
      if (d.states[i].size() != nx_) throw InputError("pack: shooting state has wrong dimension");
      if (const auto off = state_offset(i); off >= 0) z.segment(off, nx_) = d.states[i];
    }
    return z;
  }

  ShootingDecision unpack(const Eigen::VectorXd& z) const {
    check_decision(z);
    ShootingDecision d{shape_, {}};
    d.theta.assign(z.head(theta_size()));
    for (std::size_t i = 0; i < intervals(); ++i) d.states.push_back(state(z, i));
    return d;
  }

  /// Plain (untaped) evaluation of cost, defects and the stitched trajectory.
  ShootingEvaluation evaluate(const Eigen::VectorXd& z) const {
    check_decision(z);
    MlpParams theta = shape_;
    theta.assign(z.head(theta_size()));
    const auto field = model_.dynamics(theta);

    std::vector<std::vector<Eigen::VectorXd>> states(intervals());
    run_intervals([&](std::size_t i) {
      const auto& iv = intervals_[i];
      states[i] = integrate_fixed_at(field, state(z, i), iv.t0, iv.t1, opts_.step, iv.breaks,
                                     iv.save_times);
    });

    ShootingEvaluation ev;
    const auto n_obs = data_.observed();
    ev.predictions.resize(data_.size(), n_obs);
    ev.defects.resize(defect_size());
    std::vector<Eigen::VectorXd> rows;
    for (std::size_t i = 0; i < intervals(); ++i) {
      const auto& iv = intervals_[i];
      for (std::size_t k = 0; k < iv.owned(); ++k) {
        const auto row = static_cast<Eigen::Index>(iv.first + k);
        ev.predictions.row(row) = states[i][k].head(n_obs).transpose();
        ev.stitched.times.push_back(iv.save_times[k]);
        rows.push_back(states[i][k]);
        ev.owner.push_back(i + 1);
        ++ev.residual_count;
      }
      if (i + 1 < intervals()) {
        const Eigen::VectorXd& end = states[i].back();
        ev.defects.segment(static_cast<Eigen::Index>(i) * nx_, nx_) = end - state(z, i + 1);
        ev.defect_times.push_back(iv.t1);
        ev.stitched.times.push_back(iv.t1);
        rows.push_back(end);
        ev.owner.push_back(i + 1);
      }
    }
    ev.stitched.states.resize(static_cast<Eigen::Index>(rows.size()), nx_);
    for (std::size_t r = 0; r < rows.size(); ++r)
      ev.stitched.states.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();

    // Same per-interval summation order as the taped path.
    for (std::size_t i = 0; i < intervals(); ++i) {
      const auto& iv = intervals_[i];
      double s = 0.0;
      for (std::size_t k = 0; k < iv.owned(); ++k) {
        const auto row = static_cast<Eigen::Index>(iv.first + k);
        s += (ev.predictions.row(row) - data_.values.row(row)).squaredNorm();
      }
      ev.data_sse += s;
    }
    ev.regularization = reg_.weight != 0.0 ? regularizer(theta, reg_) : 0.0;
    ev.cost = ev.data_sse + reg_.weight * ev.regularization;
    return ev;
  }

  /// Taped evaluation; one tape per interval plus one for the regularizer.
  optim::Linearization linearize(const Eigen::VectorXd& z) const {
    check_decision(z);
    auto tapes = std::make_shared<std::vector<IntervalTape>>(intervals());
    run_intervals([&](std::size_t i) { (*tapes)[i] = record_interval(z, i); });

    optim::Linearization lin;
    lin.defects.resize(defect_size());
    for (std::size_t i = 0; i < intervals(); ++i) {
      lin.cost += (*tapes)[i].sse.scalar();
      if (i + 1 < intervals())
        lin.defects.segment(static_cast<Eigen::Index>(i) * nx_, nx_) = (*tapes)[i].defect.value();
    }

    std::shared_ptr<IntervalTape> reg_tape;
    if (reg_.weight != 0.0) {
      reg_tape = std::make_shared<IntervalTape>();
      reg_tape->tape = std::make_unique<ad::Tape>();
      reg_tape->z = reg_tape->tape->variable(z);
      reg_tape->sse = regularizer(bind(reg_tape->z, shape_, 0), reg_);
      lin.cost += reg_.weight * reg_tape->sse.scalar();
    }

    const auto n = intervals();
    const auto nx = nx_;
    const auto weight = reg_.weight;
    const int threads = opts_.threads;
    const auto size = decision_size();
    lin.pullback = [tapes, reg_tape, n, nx, weight, threads, size](
                       double wc, const Eigen::VectorXd& wh) -> Eigen::VectorXd {
      if (wh.size() != static_cast<Eigen::Index>(n - 1) * nx)
        throw InputError("pullback: defect weight has wrong length");
      std::vector<Eigen::VectorXd> parts(n);
      parallel_for(n, threads, [&](std::size_t i) {
        auto& it = (*tapes)[i];
        it.tape->clear_adjoints();
        it.tape->seed(it.sse, wc);
        if (i + 1 < n) it.tape->seed(it.defect, wh.segment(static_cast<Eigen::Index>(i) * nx, nx));
        it.tape->backward();
        parts[i] = it.tape->adjoint(it.z);
      });
      Eigen::VectorXd g = Eigen::VectorXd::Zero(size);
      for (const auto& p : parts) g += p;
      if (reg_tape) {
        reg_tape->tape->clear_adjoints();
        reg_tape->tape->seed(reg_tape->sse, wc * weight);
        reg_tape->tape->backward();
        g += reg_tape->tape->adjoint(reg_tape->z);
      }
      return g;
    };
    return lin;
  }

  /// Adapter for the constrained solvers.
  optim::ConstrainedProblem as_constrained() const {
    return [this](const Eigen::VectorXd& z) { return linearize(z); };
  }

  Eigen::VectorXd state(const Eigen::VectorXd& z, std::size_t i) const {
    const auto off = state_offset(i);
    return off < 0 ? opts_.pinned_state : Eigen::VectorXd(z.segment(off, nx_));
  }

  /// Number of observations owned by each interval.
  std::vector<std::size_t> ownership() const {
    std::vector<std::size_t> out;
    for (const auto& iv : intervals_) out.push_back(iv.owned());
    return out;
  }

 private:
  struct Interval {
    double t0 = 0.0, t1 = 0.0;
    std::size_t first = 0, last = 0;  // owned observations [first, last)
    std::vector<double> save_times;   // owned times, then t1 when not owned
    std::vector<double> breaks;
    std::size_t owned() const { return last - first; }
  };

  struct IntervalTape {
    std::unique_ptr<ad::Tape> tape;
    ad::Var z;
    ad::Var sse;
    ad::Var defect;
  };

  void check_decision(const Eigen::VectorXd& z) const {
    if (z.size() != decision_size())
      throw InputError("shooting: decision vector has length " + std::to_string(z.size()) +
                       ", expected " + std::to_string(decision_size()));
  }

  void build_intervals() {
    const auto& b = grid_.boundaries;
    const std::size_t n = b.size() - 1;
    intervals_.resize(n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      auto& iv = intervals_[i];
      iv.t0 = b[i];
      iv.t1 = b[i + 1];
      iv.first = k;
      const bool last = i + 1 == n;
      while (k < data_.times.size() && (data_.times[k] < iv.t1 || (last && data_.times[k] <= iv.t1)))
        iv.save_times.push_back(data_.times[k++]);
      iv.last = k;
      if (!last) iv.save_times.push_back(iv.t1);
      else if (iv.save_times.empty() || iv.save_times.back() != iv.t1) iv.save_times.push_back(iv.t1);
      iv.breaks = model_.breakpoints(iv.t0, iv.t1);
    }
    if (k != data_.times.size()) throw InputError("ShootingProblem: observations not covered by the grid");
  }

  template <class Fn>
  void run_intervals(Fn&& fn) const {
    if (!opts_.order.empty()) {
      if (opts_.order.size() != intervals()) throw InputError("shooting: order has wrong length");
      for (std::size_t i : opts_.order) wrap(fn, i);
      return;
    }
    parallel_for(intervals(), opts_.threads, [&](std::size_t i) { wrap(fn, i); });
  }

  template <class Fn>
  void wrap(Fn& fn, std::size_t i) const {
    try {
      fn(i);
    } catch (const IntegrationError& e) {
      throw IntegrationError("interval " + std::to_string(i + 1) + ": " + e.what(), e.time());
    }
  }

  IntervalTape record_interval(const Eigen::VectorXd& z, std::size_t i) const {
    const auto& iv = intervals_[i];
    IntervalTape out;
    out.tape = std::make_unique<ad::Tape>();
    ad::Tape& tape = *out.tape;
    out.z = tape.variable(z);
    const TapedMlp net = bind(out.z, shape_, 0);
    const auto field = model_.dynamics(net);
    const auto off = state_offset(i);
    const ad::Var s0 = off < 0 ? tape.constant(opts_.pinned_state) : ad::slice(out.z, off, nx_);
    const auto states = integrate_fixed_at(field, s0, iv.t0, iv.t1, opts_.step, iv.breaks, iv.save_times);

    const auto n_obs = data_.observed();
    for (std::size_t k = 0; k < iv.owned(); ++k) {
      const auto row = static_cast<Eigen::Index>(iv.first + k);
      const ad::Var pred = n_obs == nx_ ? states[k] : ad::slice(states[k], 0, n_obs);
      const ad::Var term = ad::sum_squares(pred - Eigen::VectorXd(data_.values.row(row).transpose()));
      out.sse = out.sse.valid() ? out.sse + term : term;
    }
    if (!out.sse.valid()) out.sse = tape.constant(0.0);
    if (i + 1 < intervals()) out.defect = states.back() - ad::slice(out.z, state_offset(i + 1), nx_);
    return out;
  }

  Model model_;
  MlpParams shape_;
  TimeSeries data_;
  ShootingGrid grid_;
  RegSpec reg_;
  ShootingOptions opts_;
  Eigen::Index nx_ = 0;
  std::vector<Interval> intervals_;
};

// ---------------------------------------------------------------------------
// CSV export

/// `t,state_0,...,state_k,interval`
inline void write_trajectory_csv(const std::string& path, const Trajectory& traj,
                                 const std::vector<std::size_t>& owner) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  out << "t";
  for (Eigen::Index c = 0; c < traj.states.cols(); ++c) out << ",state_" << c;
  out << ",interval\n";
  for (std::size_t r = 0; r < traj.times.size(); ++r) {
    out << traj.times[r];
    for (Eigen::Index c = 0; c < traj.states.cols(); ++c)
      out << ',' << traj.states(static_cast<Eigen::Index>(r), c);
    out << ',' << (r < owner.size() ? owner[r] : 1) << '\n';
  }
}

/// `boundary_time,component,defect`
inline void write_defect_csv(const std::string& path, const std::vector<double>& boundary_times,
                             const Eigen::VectorXd& defects, Eigen::Index state_dim) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  out << "boundary_time,component,defect\n";
  for (std::size_t i = 0; i < boundary_times.size(); ++i)
    for (Eigen::Index c = 0; c < state_dim; ++c)
      out << boundary_times[i] << ',' << c << ','
          << defects[static_cast<Eigen::Index>(i) * state_dim + c] << '\n';
}

}  // namespace nde
