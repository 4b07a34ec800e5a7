#pragma once

// Cascaded-tanks benchmark: data loading and the five-feature neural model
//   dy/dt = NN(u(t), y, √y, u(t − τ_d), ∫_{t−τ_i}^{t} u).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "nde/mlp.hpp"
#include "nde/ode.hpp"
#include "nde/ops.hpp"
#include "nde/problems/signal.hpp"
#include "nde/shooting.hpp"

namespace nde {

inline constexpr double kTanksPeriod = 4.0;
inline constexpr std::size_t kTanksSamples = 1024;
inline constexpr double kSqrtFloor = 1e-12;

struct TanksSpec {
  double tau_d = 79.0;   // delay, s
  double tau_i = 164.0;  // integral window, s
  double rho_l2 = 5.96e-2;
  double split = 2048.0;  // train/validation boundary, s
};

/// One input/output record of the benchmark.
struct TanksSeries {
  TimeSeries y;
  ControlSignal u;
};

struct TanksData {
  TanksSeries estimation;
  TanksSeries test;
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r\"");
    const auto e = cell.find_last_not_of(" \t\r\"");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  return out;
}

inline TanksSeries make_series(const std::vector<double>& u, const std::vector<double>& y) {
  TanksSeries s;
  s.u = ControlSignal(u, kTanksPeriod);
  s.y.values.resize(static_cast<Eigen::Index>(y.size()), 1);
  for (std::size_t k = 0; k < y.size(); ++k) {
    s.y.times.push_back(kTanksPeriod * static_cast<double>(k));
    s.y.values(static_cast<Eigen::Index>(k), 0) = y[k];
  }
  return s;
}
}  // namespace detail

/// Reads a CSV with header columns uEst,yEst,uVal,yVal (any order; other
/// columns such as a time column are ignored) and exactly 1024 data rows.
/// Times are rebuilt from the 4 s sampling period.
inline TanksData load_tanks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("tanks: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError("tanks: empty file");
  const auto header = detail::split_csv_line(line);
  const char* names[] = {"uEst", "yEst", "uVal", "yVal"};
  int col[4];
  for (int c = 0; c < 4; ++c) {
    const auto it = std::find(header.begin(), header.end(), names[c]);
    if (it == header.end()) throw FormatError(std::string("tanks: missing column '") + names[c] + "'");
    col[c] = static_cast<int>(it - header.begin());
  }
  std::vector<double> cols[4];
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    for (int c = 0; c < 4; ++c) {
      if (static_cast<std::size_t>(col[c]) >= cells.size())
        throw FormatError("tanks: row " + std::to_string(row) + " is missing column '" + names[c] + "'");
      double v;
      try {
        std::size_t used = 0;
        v = std::stod(cells[static_cast<std::size_t>(col[c])], &used);
      } catch (const std::exception&) {
        throw FormatError("tanks: row " + std::to_string(row) + " has a non-numeric '" + names[c] + "'");
      }
      if (!std::isfinite(v))
        throw FormatError("tanks: row " + std::to_string(row) + " has a non-finite '" + names[c] + "'");
      cols[c].push_back(v);
    }
  }
  if (row != kTanksSamples)
    throw FormatError("tanks: expected " + std::to_string(kTanksSamples) + " rows, found " +
                      std::to_string(row));
  return {detail::make_series(cols[0], cols[1]), detail::make_series(cols[2], cols[3])};
}

inline void write_tanks_csv(const std::string& path, const TanksData& data) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  out << "uEst,yEst,uVal,yVal\n";
  for (std::size_t k = 0; k < data.estimation.u.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    out << data.estimation.u.samples()[k] << ',' << data.estimation.y.values(r, 0) << ','
        << data.test.u.samples()[k] << ',' << data.test.y.values(r, 0) << '\n';
  }
}

/// Raw feature vector [u(t), y, √y, u(t − τ_d), ∫_{t−τ_i}^t u].
inline Eigen::VectorXd tanks_features(const ControlSignal& u, const TanksSpec& spec, double y,
                                      double t) {
  Eigen::VectorXd f(5);
  f << u.value(t), y, std::sqrt(std::max(y, kSqrtFloor)), u.value(t - spec.tau_d),
      u.integral(t, spec.tau_i);
  return f;
}

/// Scalar neural ODE on the five tank features. `input_scale` multiplies the
/// features before the first layer; it is fixed, not trained.
struct TanksModel {
  ControlSignal u;
  TanksSpec spec;
  Eigen::VectorXd input_scale = Eigen::VectorXd::Ones(5);

  Eigen::Index state_dim() const { return 1; }

  template <class Net>
  auto dynamics(const Net& net) const {
    return [&net, this](const auto& y, double t) {
      using V = std::decay_t<decltype(y)>;
      Eigen::VectorXd exo(5);
      exo << u.value(t), 0.0, 0.0, u.value(t - spec.tau_d), u.integral(t, spec.tau_i);
      exo = exo.cwiseProduct(input_scale);
      const V lin = ops::scale_by(y, input_scale.segment(1, 1));
      const V root = ops::scale_by(ops::sqrt_floor(y, kSqrtFloor), input_scale.segment(2, 1));
      const V features = ops::add_constant(V(ops::embed(lin, 1, 5) + ops::embed(root, 2, 5)), exo);
      return V(mlp_forward(net, features));
    };
  }

  /// Input cells and their delayed copies, plus the kinks of the windowed integral.
  std::vector<double> breakpoints(double t0, double tf) const {
    std::vector<double> out;
    const double p = u.period();
    for (double shift : {0.0, spec.tau_d, spec.tau_i}) {
      const auto k0 = static_cast<long>(std::floor((t0 - shift) / p));
      for (long k = std::max(k0, 0L);; ++k) {
        const double b = static_cast<double>(k) * p + shift;
        if (b >= tf) break;
        if (b > t0) out.push_back(b);
        if (k > static_cast<long>(u.size())) break;
      }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
};

inline void check_tanks_shape(const MlpParams& theta) {
  if (theta.input_size() != 5 || theta.output_size() != 1)
    throw ArchitectureError("tanks_field: network must map R^5 to R");
}

inline OdeField tanks_field(const MlpParams& theta, const ControlSignal& u, const TanksSpec& spec,
                            const Eigen::VectorXd& input_scale = Eigen::VectorXd::Ones(5)) {
  check_tanks_shape(theta);
  TanksModel model{u, spec, input_scale};
  return {[theta, model](const Eigen::VectorXd& y, double t) { return model.dynamics(theta)(y, t); }, 1};
}

/// Per-feature scale 1/max|f_j| over the observed samples, so every network
/// input starts in [-1, 1]. Zero columns keep scale 1.
inline Eigen::VectorXd tanks_input_scale(const ControlSignal& u, const TanksSpec& spec,
                                         const TimeSeries& y) {
  Eigen::VectorXd peak = Eigen::VectorXd::Zero(5);
  for (Eigen::Index k = 0; k < y.size(); ++k)
    peak = peak.cwiseMax(tanks_features(u, spec, y.values(k, 0), y.times[static_cast<std::size_t>(k)]).cwiseAbs());
  return peak.unaryExpr([](double p) { return p > 0.0 ? 1.0 / p : 1.0; });
}

// ---------------------------------------------------------------------------
// Synthetic tank surrogate for dataset-free testing: one tank with square-root
// outflow fed by a pump whose flow arrives after a transport delay,
//   dy/dt = inflow · u(t − delay) − outflow · √y.

struct TankSurrogateSpec {
  std::uint64_t seed = 0;
  double sigma = 0.05;     // output noise standard deviation
  double inflow = 0.06;    // pump gain
  double outflow = 0.143;  // outflow coefficient
  double delay = 79.0;     // s
  double u_low = 2.5;
  double u_high = 7.5;
  int min_hold = 8;   // samples
  int max_hold = 30;  // samples
};

namespace detail {
inline std::vector<double> scripted_input(std::mt19937_64& rng, const TankSurrogateSpec& spec) {
  std::uniform_real_distribution<double> level(spec.u_low, spec.u_high);
  std::uniform_int_distribution<int> hold(spec.min_hold, spec.max_hold);
  std::vector<double> u;
  while (u.size() < kTanksSamples) {
    const double v = level(rng);
    for (int k = hold(rng); k > 0 && u.size() < kTanksSamples; --k) u.push_back(v);
  }
  return u;
}

inline TanksSeries surrogate_series(std::mt19937_64& rng, const TankSurrogateSpec& spec) {
  const ControlSignal u(scripted_input(rng, spec), kTanksPeriod);
  const OdeField truth{[&u, &spec](const Eigen::VectorXd& x, double t) {
                         Eigen::VectorXd d(1);
                         d[0] = spec.inflow * u.value(t - spec.delay) -
                                spec.outflow * std::sqrt(std::max(x[0], 0.0));
                         return d;
                       },
                       1};
  // Start at the steady state of the first input level.
  const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, std::pow(spec.inflow * u.samples().front() / spec.outflow, 2));
  std::vector<double> times;
  for (std::size_t k = 0; k < kTanksSamples; ++k) times.push_back(kTanksPeriod * static_cast<double>(k));
  std::vector<double> breaks;
  for (std::size_t k = 1; k < kTanksSamples; ++k) breaks.push_back(times[k] + spec.delay);
  AdaptiveOptions opts;
  opts.rtol = 1e-10;
  opts.atol = 1e-12;
  // Integrate cell by cell so the solver never steps across an input jump.
  std::vector<double> marks = times;
  marks.insert(marks.end(), breaks.begin(), breaks.end());
  std::sort(marks.begin(), marks.end());
  marks.erase(std::unique(marks.begin(), marks.end()), marks.end());
  while (!marks.empty() && marks.back() > times.back()) marks.pop_back();
  std::vector<double> y;
  Eigen::VectorXd x = x0;
  std::normal_distribution<double> noise(0.0, spec.sigma);
  std::size_t next = 0;
  for (std::size_t m = 0; m < marks.size(); ++m) {
    if (m > 0) {
      const std::vector<double> end{marks[m]};
      x = integrate_adaptive(truth, x, {marks[m - 1], marks[m]}, opts, end).states.row(0).transpose();
    }
    if (next < times.size() && marks[m] == times[next]) {
      y.push_back(x[0] + (spec.sigma > 0 ? noise(rng) : 0.0));
      ++next;
    }
  }
  return make_series(u.samples(), y);
}
}  // namespace detail

/// Benchmark-shaped data (two 1024-sample records) from the surrogate tank
/// driven by a random piecewise-constant input.
inline TanksData make_tank_surrogate(const TankSurrogateSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  TanksData d;
  d.estimation = detail::surrogate_series(rng, spec);
  d.test = detail::surrogate_series(rng, spec);
  return d;
}

}  // namespace nde
