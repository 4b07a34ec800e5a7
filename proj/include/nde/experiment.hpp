#pragma once

// Experiment driver behind the command-line tool: configuration, data
// loading, training, evaluation and hyperparameter sweeps.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nde/error.hpp"
#include "nde/mlp.hpp"
#include "nde/ode.hpp"
#include "nde/optim/constrained.hpp"
#include "nde/parallel.hpp"
#include "nde/problems/spiral.hpp"
#include "nde/problems/tanks.hpp"
#include "nde/shooting.hpp"

namespace nde::experiment {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

inline json default_config(const std::string& problem) {
  json solver = {{"constraint", "auglag"},
                 {"penalty_kind", "quadratic"},
                 {"penalty_weight", 100.0},
                 {"inner", "lbfgs"},
                 {"inner_iterations", 200},
                 {"lbfgs_memory", 10},
                 {"gradient_tolerance", 1e-8},
                 {"learning_rate", 1e-3},
                 {"first_order_iterations", 2000},
                 {"outer_iterations", 30},
                 {"tolerance", 1e-3},
                 {"initial_rho", 1.0},
                 {"growth", 10.0},
                 {"decrease_ratio", 0.25}};
  json base = {{"problem", problem},
               {"seed", 0},
               {"solver", solver},
               {"eval", {{"rtol", 1e-6}, {"atol", 1e-8}}},
               {"output_dir", "out"},
               {"log_every", 10}};
  if (problem == "spiral") {
    base["data"] = {{"path", ""},   {"sigma", 0.2},  {"sample_interval", 0.1}, {"span", {0.0, 6.0}},
                    {"x0", {2.0, 0.0}}, {"rtol", 1e-8}, {"atol", 1e-10}};
    base["network"] = {{"hidden", {16}}, {"use_bias", false}, {"seed", nullptr}};
    base["regularization"] = {{"kind", "spectral_sum"}, {"weight", 1.0}, {"power_iterations", 25}};
    base["shooting"] = {{"method", "multiple"}, {"intervals", 20},   {"init", "replicate_x0"},
                        {"pin_initial", false}, {"step", 0.05},      {"threads", 1},
                        {"fallback_state", 0.0}};
  } else if (problem == "tanks") {
    base["data"] = {{"path", ""}};
    base["network"] = {{"hidden", {64}}, {"use_bias", false}, {"seed", nullptr}};
    base["regularization"] = {{"kind", "l2"}, {"weight", 5.96e-2}, {"power_iterations", 25}};
    base["shooting"] = {{"method", "multiple"}, {"intervals", 16},   {"init", "data_at_boundaries"},
                        {"pin_initial", false}, {"step", 1.0},       {"threads", 1},
                        {"fallback_state", 0.0}};
    base["tanks"] = {{"tau_d", 79.0},
                     {"tau_i", 164.0},
                     {"split", 2048.0},
                     {"input_scale", "auto"},
                     {"test_initial", "first_observation"}};
  } else if (problem == "custom") {
    base["data"] = {{"path", ""}};
    base["network"] = {{"hidden", {32}}, {"use_bias", false}, {"seed", nullptr}};
    base["regularization"] = {{"kind", "l2"}, {"weight", 1e-3}, {"power_iterations", 25}};
    base["shooting"] = {{"method", "multiple"}, {"intervals", 10},   {"init", "data_at_boundaries"},
                        {"pin_initial", false}, {"step", 0.05},      {"threads", 1},
                        {"fallback_state", 0.0}};
    base["custom"] = {{"state_dim", nullptr}};
  } else {
    throw ConfigError("unknown problem '" + problem + "' (expected spiral, tanks or custom)");
  }
  return base;
}

namespace detail {
inline void check_keys(const json& user, const json& defaults, const std::string& where) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = where + "/" + it.key();
    if (where.empty() && it.key() == "sweep") continue;
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    const json& d = defaults.at(it.key());
    if (d.is_object()) {
      if (!it->is_object()) throw ConfigError("config key '" + path + "' must be an object");
      check_keys(*it, d, path);
    }
  }
}

// Like merge-patch, except a null in the overlay is kept as a value.
inline void overlay(json& base, const json& top) {
  for (auto it = top.begin(); it != top.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object())
      overlay(base[it.key()], *it);
    else
      base[it.key()] = *it;
  }
}
}  // namespace detail

/// Defaults for the problem named in `user` (spiral if absent) patched with `user`.
inline json resolve_config(const json& user) {
  if (user.is_null()) return resolve_config(json::object());
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  const std::string problem = user.value("problem", std::string("spiral"));
  json out = default_config(problem);
  detail::check_keys(user, out, "");
  detail::overlay(out, user);
  return out;
}

inline json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
}

/// Sets the value at a JSON pointer ("/solver/tolerance").
inline void set_pointer(json& j, const std::string& pointer, const json& value) {
  try {
    j[json::json_pointer(pointer)] = value;
  } catch (const json::exception& e) {
    throw ConfigError("bad config pointer '" + pointer + "': " + e.what());
  }
}

/// Parses "pointer=value"; the value is read as JSON, falling back to a string.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like /key=value");
  std::string key = assignment.substr(0, eq);
  if (key.front() != '/') {
    for (auto& c : key)
      if (c == '.') c = '/';
    key = "/" + key;
  }
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  set_pointer(j, key, value);
}

struct Config {
  json resolved;
  std::string problem;
  std::uint64_t seed = 0;
  std::string data_path;
  SpiralSpec spiral;
  TanksSpec tanks;
  std::optional<Eigen::VectorXd> input_scale;  // tanks; empty means derive from data
  bool test_from_fitted = false;
  std::optional<Eigen::Index> custom_state_dim;
  std::vector<int> hidden;
  bool use_bias = false;
  std::uint64_t network_seed = 0;
  RegSpec reg;
  bool multiple = true;
  int intervals = 1;
  InitStrategy init = InitStrategy::replicate_x0;
  bool pin_initial = false;
  double step = 0.05;
  int threads = 1;
  double fallback_state = 0.0;
  bool use_penalty = false;
  optim::PenaltyKind penalty_kind = optim::PenaltyKind::quadratic;
  double penalty_weight = 100.0;
  optim::InnerOptions inner;
  optim::AugLagState auglag;
  double eval_rtol = 1e-6;
  double eval_atol = 1e-8;
  std::string output_dir;
  long log_every = 10;
};

namespace detail {
template <class T>
T get(const json& j, const std::string& pointer) {
  try {
    return j.at(json::json_pointer(pointer)).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + pointer + "': " + e.what());
  }
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}
}  // namespace detail

inline Config parse_config(const json& resolved) {
  using detail::get;
  using detail::require;
  Config c;
  c.resolved = resolved;
  c.problem = get<std::string>(resolved, "/problem");
  c.seed = get<std::uint64_t>(resolved, "/seed");
  c.data_path = get<std::string>(resolved, "/data/path");
  if (!c.data_path.empty())
    require(fs::exists(c.data_path), "data file '" + c.data_path + "' does not exist");
  if (c.problem != "spiral") require(!c.data_path.empty(), c.problem + ": data.path is required");

  if (c.problem == "spiral") {
    c.spiral.seed = c.seed;
    c.spiral.sigma = get<double>(resolved, "/data/sigma");
    c.spiral.sample_interval = get<double>(resolved, "/data/sample_interval");
    const auto span = get<std::vector<double>>(resolved, "/data/span");
    require(span.size() == 2 && span[1] > span[0], "data.span must be [t0, tf] with tf > t0");
    c.spiral.span = {span[0], span[1]};
    const auto x0 = get<std::vector<double>>(resolved, "/data/x0");
    require(x0.size() == 2, "data.x0 must have two entries");
    c.spiral.x0 = {x0[0], x0[1]};
    c.spiral.rtol = get<double>(resolved, "/data/rtol");
    c.spiral.atol = get<double>(resolved, "/data/atol");
    require(c.spiral.sigma >= 0.0, "data.sigma must be nonnegative");
    require(c.spiral.sample_interval > 0.0, "data.sample_interval must be positive");
  }
  if (c.problem == "tanks") {
    c.tanks.tau_d = get<double>(resolved, "/tanks/tau_d");
    c.tanks.tau_i = get<double>(resolved, "/tanks/tau_i");
    c.tanks.split = get<double>(resolved, "/tanks/split");
    require(c.tanks.tau_d >= 0.0 && c.tanks.tau_i >= 0.0, "tanks.tau_d and tanks.tau_i must be nonnegative");
    const json& scale = resolved.at("tanks").at("input_scale");
    if (!(scale.is_string() && scale.get<std::string>() == "auto")) {
      const auto v = get<std::vector<double>>(resolved, "/tanks/input_scale");
      require(v.size() == 5, "tanks.input_scale must be \"auto\" or five numbers");
      c.input_scale = Eigen::Map<const Eigen::VectorXd>(v.data(), 5);
    }
    const auto init = get<std::string>(resolved, "/tanks/test_initial");
    require(init == "first_observation" || init == "fitted",
            "tanks.test_initial must be first_observation or fitted");
    c.test_from_fitted = init == "fitted";
  }
  // null means derive
  auto is_unset = [&](const std::string& pointer) {
    const json::json_pointer p(pointer);
    return !resolved.contains(p) || resolved.at(p).is_null();
  };
  if (c.problem == "custom" && !is_unset("/custom/state_dim")) {
    c.custom_state_dim = get<Eigen::Index>(resolved, "/custom/state_dim");
    require(*c.custom_state_dim >= 1, "custom.state_dim must be positive");
  }

  c.hidden = get<std::vector<int>>(resolved, "/network/hidden");
  for (int h : c.hidden) require(h > 0, "network.hidden sizes must be positive");
  c.use_bias = get<bool>(resolved, "/network/use_bias");
  c.network_seed = is_unset("/network/seed") ? c.seed : get<std::uint64_t>(resolved, "/network/seed");

  c.reg.kind = reg_kind_from(get<std::string>(resolved, "/regularization/kind"));
  c.reg.weight = get<double>(resolved, "/regularization/weight");
  c.reg.power_iterations = get<int>(resolved, "/regularization/power_iterations");
  require(c.reg.weight >= 0.0, "regularization.weight must be nonnegative");
  require(c.reg.power_iterations > 0, "regularization.power_iterations must be positive");

  const auto method = get<std::string>(resolved, "/shooting/method");
  require(method == "single" || method == "multiple", "shooting.method must be single or multiple");
  c.multiple = method == "multiple";
  c.intervals = c.multiple ? get<int>(resolved, "/shooting/intervals") : 1;
  require(c.intervals >= 1, "shooting.intervals must be at least 1");
  c.init = init_strategy_from(get<std::string>(resolved, "/shooting/init"));
  c.pin_initial = get<bool>(resolved, "/shooting/pin_initial");
  c.step = get<double>(resolved, "/shooting/step");
  require(c.step > 0.0, "shooting.step must be positive");
  c.threads = thread_count(get<int>(resolved, "/shooting/threads"));
  c.fallback_state = get<double>(resolved, "/shooting/fallback_state");

  const auto constraint = get<std::string>(resolved, "/solver/constraint");
  require(constraint == "auglag" || constraint == "penalty", "solver.constraint must be auglag or penalty");
  c.use_penalty = constraint == "penalty";
  c.penalty_kind = optim::penalty_kind_from(get<std::string>(resolved, "/solver/penalty_kind"));
  c.penalty_weight = get<double>(resolved, "/solver/penalty_weight");
  require(c.penalty_weight >= 0.0, "solver.penalty_weight must be nonnegative");
  c.inner.method = optim::inner_method_from(get<std::string>(resolved, "/solver/inner"));
  c.inner.lbfgs.max_iterations = get<long>(resolved, "/solver/inner_iterations");
  c.inner.lbfgs.memory = get<int>(resolved, "/solver/lbfgs_memory");
  c.inner.lbfgs.gradient_tolerance = get<double>(resolved, "/solver/gradient_tolerance");
  c.inner.learning_rate = get<double>(resolved, "/solver/learning_rate");
  c.inner.first_order_iterations = get<long>(resolved, "/solver/first_order_iterations");
  require(c.inner.lbfgs.max_iterations > 0 && c.inner.first_order_iterations > 0,
          "solver iteration budgets must be positive");
  c.inner.lbfgs.max_evaluations = 20 * c.inner.lbfgs.max_iterations;
  require(c.inner.lbfgs.memory > 0, "solver.lbfgs_memory must be positive");
  require(c.inner.learning_rate > 0.0, "solver.learning_rate must be positive");
  c.auglag.max_outer = get<long>(resolved, "/solver/outer_iterations");
  c.auglag.tolerance = get<double>(resolved, "/solver/tolerance");
  c.auglag.initial_rho = get<double>(resolved, "/solver/initial_rho");
  c.auglag.growth = get<double>(resolved, "/solver/growth");
  c.auglag.decrease_ratio = get<double>(resolved, "/solver/decrease_ratio");
  require(c.auglag.max_outer > 0, "solver.outer_iterations must be positive");
  require(c.auglag.tolerance > 0.0, "solver.tolerance must be positive");
  require(c.auglag.initial_rho > 0.0, "solver.initial_rho must be positive");
  require(c.auglag.growth > 1.0, "solver.growth must exceed 1");
  require(c.auglag.decrease_ratio > 0.0 && c.auglag.decrease_ratio <= 1.0,
          "solver.decrease_ratio must lie in (0, 1]");

  c.eval_rtol = get<double>(resolved, "/eval/rtol");
  c.eval_atol = get<double>(resolved, "/eval/atol");
  require(c.eval_rtol > 0.0 && c.eval_atol > 0.0, "eval tolerances must be positive");
  c.output_dir = get<std::string>(resolved, "/output_dir");
  require(!c.output_dir.empty(), "output_dir must not be empty");
  c.log_every = get<long>(resolved, "/log_every");
  require(c.log_every >= 0, "log_every must be nonnegative");
  return c;
}

// ---------------------------------------------------------------------------
// Data

/// CSV with a header row; first column is time, the rest are observed states.
inline TimeSeries load_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty file");
  const auto header = nde::detail::split_csv_line(line);
  if (header.size() < 2) throw FormatError(path + ": need a time column and at least one value column");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = nde::detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw FormatError(path + ": row " + std::to_string(rows.size() + 1) + " has the wrong number of columns");
    std::vector<double> row;
    for (const auto& cell : cells) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError(path + ": non-numeric cell '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path + ": no data rows");
  TimeSeries ts;
  ts.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header.size() - 1));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    ts.times.push_back(rows[r][0]);
    for (std::size_t c = 1; c < header.size(); ++c)
      ts.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) = rows[r][c];
  }
  try {
    ts.validate();
  } catch (const InputError& e) {
    throw FormatError(path + ": " + e.what());
  }
  return ts;
}

inline void write_series_csv(const std::string& path, const TimeSeries& ts, const std::string& prefix = "x_") {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out.precision(17);
  out << "t";
  for (Eigen::Index c = 0; c < ts.observed(); ++c) out << ',' << prefix << c;
  out << '\n';
  for (std::size_t r = 0; r < ts.times.size(); ++r) {
    out << ts.times[r];
    for (Eigen::Index c = 0; c < ts.observed(); ++c) out << ',' << ts.values(static_cast<Eigen::Index>(r), c);
    out << '\n';
  }
}

struct Dataset {
  TimeSeries train;
  TimeSeries validation;  // empty unless the problem defines a split
  std::optional<TanksData> tanks;
};

inline Dataset load_dataset(const Config& c) {
  Dataset d;
  if (c.problem == "spiral") {
    d.train = c.data_path.empty() ? gen_spiral(c.spiral) : load_series_csv(c.data_path);
    if (d.train.observed() != 2) throw FormatError("spiral data must have two value columns");
  } else if (c.problem == "tanks") {
    d.tanks = load_tanks(c.data_path);
    const auto& y = d.tanks->estimation.y;
    d.train = y.window(y.times.front(), std::nextafter(c.tanks.split, -INFINITY));
    d.validation = y.window(c.tanks.split, y.times.back());
    if (d.train.size() < 2) throw ConfigError("tanks.split leaves fewer than two training samples");
  } else {
    d.train = load_series_csv(c.data_path);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Models

inline Eigen::Index state_dim_of(const Config& c, const Dataset& d) {
  if (c.problem == "spiral") return 2;
  if (c.problem == "tanks") return 1;
  const Eigen::Index n = c.custom_state_dim.value_or(d.train.observed());
  if (n < d.train.observed()) throw ConfigError("custom.state_dim is smaller than the observed columns");
  return n;
}

inline std::vector<int> layer_sizes(const Config& c, Eigen::Index state_dim) {
  std::vector<int> sizes{c.problem == "tanks" ? 5 : static_cast<int>(state_dim)};
  sizes.insert(sizes.end(), c.hidden.begin(), c.hidden.end());
  sizes.push_back(static_cast<int>(state_dim));
  return sizes;
}

inline Eigen::VectorXd resolve_input_scale(const Config& c, const Dataset& d) {
  if (c.problem != "tanks") return {};
  if (c.input_scale) return *c.input_scale;
  return tanks_input_scale(d.tanks->estimation.u, c.tanks, d.train);
}

/// Calls fn with the dynamics model of the configured problem.
template <class Fn>
decltype(auto) with_model(const Config& c, const Dataset& d, const Eigen::VectorXd& input_scale, Fn&& fn) {
  if (c.problem == "spiral") return fn(SpiralModel{});
  if (c.problem == "tanks") return fn(TanksModel{d.tanks->estimation.u, c.tanks, input_scale});
  return fn(NeuralOdeModel{state_dim_of(c, d)});
}

template <class Model>
OdeField field_of(Model model, MlpParams theta) {
  const Eigen::Index dim = model.state_dim();
  return {[model = std::move(model), theta = std::move(theta)](const Eigen::VectorXd& x, double t) -> Eigen::VectorXd {
            return model.dynamics(theta)(x, t);
          },
          dim};
}

template <class Model>
ShootingProblem<Model> make_problem(const Config& c, const Dataset& d, Model model, const MlpParams& shape) {
  const auto& t = d.train.times;
  const auto grid = make_grid(t.front(), t.back(), c.intervals, t);
  ShootingOptions opts;
  opts.step = c.step;
  opts.threads = c.threads;
  opts.pin_initial = c.pin_initial;
  if (c.pin_initial) {
    const Eigen::Index nx = model.state_dim();
    if (c.problem == "spiral") {
      opts.pinned_state = c.spiral.x0;
    } else {
      opts.pinned_state = Eigen::VectorXd::Constant(nx, c.fallback_state);
      opts.pinned_state.head(d.train.observed()) = d.train.values.row(0).transpose();
    }
  }
  return ShootingProblem<Model>(std::move(model), shape, d.train, grid, c.reg, opts);
}

// ---------------------------------------------------------------------------
// Metrics from free-running (adaptive) simulation

inline Trajectory simulate(const OdeField& field, const Eigen::VectorXd& x0, double t0,
                           const std::vector<double>& save, const Config& c) {
  AdaptiveOptions opts;
  opts.rtol = c.eval_rtol;
  opts.atol = c.eval_atol;
  return integrate_adaptive(field, x0, {t0, save.back()}, opts, save);
}

inline Eigen::VectorXd flat_residual_rows(const Trajectory& traj, const TimeSeries& data) {
  const Eigen::MatrixXd pred = traj.states.leftCols(data.observed());
  return Eigen::Map<const Eigen::VectorXd>(pred.data(), pred.size());
}

/// SSE and RMSE per split of the model started from s_1 at the first data time.
inline json simulation_metrics(const Config& c, const Dataset& d, const MlpParams& theta,
                               const Eigen::VectorXd& s1, const Eigen::VectorXd& input_scale) {
  json m;
  auto score = [](const Trajectory& traj, const TimeSeries& data) {
    const Eigen::MatrixXd pred = traj.states.leftCols(data.observed());
    const Eigen::MatrixXd diff = pred - data.values;
    const double s = diff.squaredNorm();
    return json{{"sse", s}, {"rmse", std::sqrt(s / static_cast<double>(diff.size()))}, {"count", data.size()}};
  };
  if (c.problem == "tanks") {
    const auto& est = d.tanks->estimation;
    const auto run = simulate(field_of(TanksModel{est.u, c.tanks, input_scale}, theta), s1, est.y.times.front(),
                              est.y.times, c);
    const auto n_train = static_cast<Eigen::Index>(d.train.size());
    Trajectory head{d.train.times, run.states.topRows(n_train)};
    Trajectory tail{d.validation.times, run.states.bottomRows(d.validation.size())};
    m["train"] = score(head, d.train);
    if (d.validation.size() > 0) m["validation"] = score(tail, d.validation);
    const auto& test = d.tanks->test;
    const Eigen::VectorXd x0 = c.test_from_fitted ? s1 : Eigen::VectorXd::Constant(1, test.y.values(0, 0));
    const auto tr = simulate(field_of(TanksModel{test.u, c.tanks, input_scale}, theta), x0, test.y.times.front(),
                             test.y.times, c);
    m["test"] = score(tr, test.y);
  } else {
    auto run = with_model(c, d, input_scale, [&](auto model) {
      return simulate(field_of(model, theta), s1, d.train.times.front(), d.train.times, c);
    });
    m["train"] = score(run, d.train);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline json make_checkpoint(const Config& c, const MlpParams& theta, const ShootingGrid& grid,
                            const std::vector<Eigen::VectorXd>& states, const Eigen::VectorXd& input_scale) {
  json j = to_json(theta);
  j["problem"] = c.problem;
  json st = json::array();
  for (const auto& s : states) st.push_back(std::vector<double>(s.data(), s.data() + s.size()));
  j["shooting"] = {{"boundaries", grid.boundaries}, {"states", st}};
  if (input_scale.size() > 0)
    j["input_scale"] = std::vector<double>(input_scale.data(), input_scale.data() + input_scale.size());
  return j;
}

struct Checkpoint {
  MlpParams theta;
  std::vector<double> boundaries;
  std::vector<Eigen::VectorXd> states;
  Eigen::VectorXd input_scale;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint '" + path + "': " + e.what());
  }
  Checkpoint cp;
  cp.theta = mlp_from_json(j);
  try {
    cp.boundaries = j.at("shooting").at("boundaries").get<std::vector<double>>();
    for (const auto& s : j.at("shooting").at("states")) {
      const auto v = s.get<std::vector<double>>();
      cp.states.emplace_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    if (j.contains("input_scale")) {
      const auto v = j.at("input_scale").get<std::vector<double>>();
      cp.input_scale = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
  } catch (const json::exception& e) {
    throw FormatError("checkpoint '" + path + "': " + e.what());
  }
  if (cp.states.empty()) throw FormatError("checkpoint '" + path + "' has no shooting states");
  return cp;
}

// ---------------------------------------------------------------------------
// Commands

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setw(2) << j << '\n';
}

inline fs::path prepare_output(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory '" + dir + "'");
  return fs::path(dir);
}

/// Writes the spiral CSV and a sidecar with the generation settings.
inline fs::path cmd_gen_spiral(const Config& c) {
  if (c.problem != "spiral") throw ConfigError("gen-spiral needs a spiral config");
  const auto series = gen_spiral(c.spiral);
  const auto dir = prepare_output(c.output_dir);
  const auto csv = dir / "spiral.csv";
  write_series_csv(csv.string(), series);
  json side = {{"seed", c.spiral.seed},
               {"sigma", c.spiral.sigma},
               {"sample_interval", c.spiral.sample_interval},
               {"span", {c.spiral.span.first, c.spiral.span.second}},
               {"x0", {c.spiral.x0[0], c.spiral.x0[1]}},
               {"a", {{c.spiral.a(0, 0), c.spiral.a(0, 1)}, {c.spiral.a(1, 0), c.spiral.a(1, 1)}}},
               {"rtol", c.spiral.rtol},
               {"atol", c.spiral.atol},
               {"rows", series.size()}};
  write_json(dir / "spiral.json", side);
  return csv;
}

/// Writes a benchmark-shaped tanks CSV from the synthetic surrogate.
inline fs::path cmd_gen_tanks_surrogate(const TankSurrogateSpec& spec, const std::string& out_dir) {
  const auto data = make_tank_surrogate(spec);
  const auto dir = prepare_output(out_dir);
  const auto csv = dir / "tanks.csv";
  write_tanks_csv(csv.string(), data);
  write_json(dir / "tanks.json", {{"seed", spec.seed},
                                  {"sigma", spec.sigma},
                                  {"inflow", spec.inflow},
                                  {"outflow", spec.outflow},
                                  {"delay", spec.delay},
                                  {"u_range", {spec.u_low, spec.u_high}},
                                  {"hold_samples", {spec.min_hold, spec.max_hold}}});
  return csv;
}

struct TrainResult {
  bool converged = false;
  json summary;
  Eigen::VectorXd z;
};

inline TrainResult cmd_train(const Config& c, std::ostream& console = std::cout) {
  const Dataset data = load_dataset(c);  // before any output exists
  const Eigen::VectorXd input_scale = resolve_input_scale(c, data);
  const Eigen::Index nx = state_dim_of(c, data);
  const MlpParams theta0 = mlp_new(layer_sizes(c, nx), c.use_bias, c.network_seed);

  return with_model(c, data, input_scale, [&](auto model) {
    auto problem = make_problem(c, data, std::move(model), theta0);
    const auto decision = init_decision(problem.grid(), data.train, c.init, theta0, nx, c.fallback_state);
    const Eigen::VectorXd z0 = problem.pack(decision);

    const auto dir = prepare_output(c.output_dir);
    write_json(dir / "config.json", c.resolved);
    std::ofstream log_csv(dir / "training_log.csv");
    if (!log_csv) throw Error("cannot write training log");
    log_csv.precision(12);
    log_csv << "outer,inner,objective,cost,max_defect,rho,gradient_norm\n";
    const optim::Logger log = [&](const optim::LogRecord& r) {
      log_csv << r.outer << ',' << r.inner << ',' << r.objective << ',' << r.cost << ',' << r.max_defect << ','
              << r.rho << ',' << r.gradient_norm << '\n';
      if (c.log_every > 0 && r.inner % c.log_every == 0)
        console << "outer " << r.outer << " inner " << r.inner << "  phi " << r.objective << "  cost " << r.cost
                << "  max|h| " << r.max_defect << "  rho " << r.rho << "  |g| " << r.gradient_norm << '\n';
    };

    const auto start = std::chrono::steady_clock::now();
    optim::SolveResult result;
    if (c.use_penalty) {
      result = optim::penalty_solve(problem.as_constrained(), z0, c.inner, c.penalty_weight, c.penalty_kind,
                                    c.auglag.tolerance, log);
    } else {
      optim::AugLagState state = c.auglag;
      result = optim::auglag_solve(problem.as_constrained(), z0, c.inner, state, log);
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const auto ev = problem.evaluate(result.z);
    const auto fitted = problem.unpack(result.z);
    write_json(dir / "checkpoint.json", make_checkpoint(c, fitted.theta, problem.grid(), fitted.states, input_scale));
    write_trajectory_csv((dir / "trajectory.csv").string(), ev.stitched, ev.owner);
    write_defect_csv((dir / "defects.csv").string(), ev.defect_times, ev.defects, nx);

    json outer = json::array();
    for (const auto& r : result.report.outer)
      outer.push_back({{"outer", r.outer},
                       {"cost", r.cost},
                       {"max_defect", r.max_defect},
                       {"rho", r.rho},
                       {"inner_status", r.inner_status},
                       {"inner_iterations", r.inner_iterations}});
    json summary = {{"converged", result.report.converged},
                    {"cost", ev.cost},
                    {"data_sse", ev.data_sse},
                    {"regularization", ev.regularization},
                    {"max_defect", optim::max_abs(ev.defects)},
                    {"residual_count", ev.residual_count},
                    {"intervals", problem.intervals()},
                    {"decision_size", problem.decision_size()},
                    {"outer_iterations", result.report.outer.size()},
                    {"outer", outer},
                    {"wall_time_s", wall},
                    {"config", c.resolved}};
    try {
      summary["simulation"] = simulation_metrics(c, data, fitted.theta, fitted.states.front(), input_scale);
    } catch (const IntegrationError& e) {
      summary["simulation"] = {{"error", e.what()}};
    }
    write_json(dir / "summary.json", summary);
    console << (result.report.converged ? "converged" : "NOT converged") << ": cost " << ev.cost << ", data SSE "
            << ev.data_sse << ", max defect " << optim::max_abs(ev.defects) << ", " << wall << " s\n";
    return TrainResult{result.report.converged, summary, result.z};
  });
}

struct EvalResult {
  json metrics;
};

/// Re-evaluates a checkpoint: the shooting objective on the training step
/// plan, free-run metrics per split, and optionally a trajectory over `span`.
inline EvalResult cmd_eval(const Config& c, const std::string& checkpoint_path,
                           std::optional<std::pair<double, double>> span, std::ostream& console = std::cout) {
  const Checkpoint cp = load_checkpoint(checkpoint_path);
  const Dataset data = load_dataset(c);
  const Eigen::Index nx = state_dim_of(c, data);
  const auto expected = layer_sizes(c, nx);
  if (cp.theta.layer_sizes != expected || cp.theta.use_bias != c.use_bias)
    throw ArchitectureError("incompatible checkpoint: network shape differs from the config");
  for (const auto& s : cp.states)
    if (s.size() != nx) throw ArchitectureError("incompatible checkpoint: shooting state has wrong dimension");
  const Eigen::VectorXd input_scale =
      c.problem == "tanks" ? (cp.input_scale.size() == 5 ? cp.input_scale : resolve_input_scale(c, data))
                           : Eigen::VectorXd();

  json metrics;
  with_model(c, data, input_scale, [&](auto model) {
    auto problem = make_problem(c, data, std::move(model), cp.theta);
    if (cp.states.size() != problem.intervals() || cp.boundaries != problem.grid().boundaries)
      throw ArchitectureError("incompatible checkpoint: shooting grid differs from the config");
    const auto ev = problem.evaluate(problem.pack({cp.theta, cp.states}));
    metrics["shooting"] = {{"cost", ev.cost},
                           {"data_sse", ev.data_sse},
                           {"regularization", ev.regularization},
                           {"max_defect", optim::max_abs(ev.defects)}};
    return 0;
  });
  metrics["simulation"] = simulation_metrics(c, data, cp.theta, cp.states.front(), input_scale);

  const auto dir = prepare_output(c.output_dir);
  const double t_start = data.train.times.front();
  std::vector<double> save;
  if (span) {
    const auto [a, b] = *span;
    if (!(b > a)) throw ConfigError("--span needs T1 > T0");
    if (a < t_start) throw ConfigError("--span must start at or after the first data time");
    const double dt = c.problem == "spiral" ? c.spiral.sample_interval
                                            : (data.train.times.back() - t_start) / static_cast<double>(data.train.size() - 1);
    const auto n = static_cast<long>(std::ceil((b - a) / dt - 1e-9));
    for (long k = 0; k <= n; ++k) save.push_back(std::min(b, a + dt * static_cast<double>(k)));
    save.erase(std::unique(save.begin(), save.end()), save.end());
  } else {
    save = data.train.times;
  }
  const auto traj = with_model(c, data, input_scale, [&](auto model) {
    return simulate(field_of(model, cp.theta), cp.states.front(), t_start, save, c);
  });
  write_trajectory_csv((dir / "eval_trajectory.csv").string(), traj, std::vector<std::size_t>(traj.times.size(), 1));
  metrics["trajectory"] = {{"t0", save.front()},
                           {"t1", save.back()},
                           {"points", save.size()},
                           {"max_norm", traj.states.cwiseAbs().maxCoeff()},
                           {"initial_norm", traj.states.row(0).norm()},
                           {"final_norm", traj.states.row(traj.states.rows() - 1).norm()}};
  write_json(dir / "eval.json", metrics);

  const auto& sh = metrics["shooting"];
  console << "shooting objective: cost " << sh["cost"].get<double>() << ", data SSE " << sh["data_sse"].get<double>()
          << ", max defect " << sh["max_defect"].get<double>() << '\n';
  for (const char* split : {"train", "validation", "test"})
    if (metrics["simulation"].contains(split))
      console << split << ": SSE " << metrics["simulation"][split]["sse"].get<double>() << ", RMSE "
              << metrics["simulation"][split]["rmse"].get<double>() << '\n';
  console << "trajectory [" << save.front() << ", " << save.back() << "]: max-norm "
          << metrics["trajectory"]["max_norm"].get<double>() << ", |x(end)| "
          << metrics["trajectory"]["final_norm"].get<double>() << '\n';
  return {metrics};
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepRow {
  std::size_t index = 0;
  std::vector<json> values;
  std::string status;  // ok, not_converged, error: ...
  double cost = NAN;
  double max_defect = NAN;
  double train_rmse = NAN;
  double validation_rmse = NAN;
  double metric = NAN;  // validation RMSE when available, else train RMSE
  bool best = false;
};

struct SweepResult {
  std::vector<std::string> keys;
  std::vector<SweepRow> rows;
  std::optional<std::size_t> best;
};

/// Points of the sweep section: {"mode": "grid"|"random", "parameters":
/// {pointer: [values] | {"min", "max", "log"}}, "samples", "seed"}.
inline std::pair<std::vector<std::string>, std::vector<std::vector<json>>> sweep_points(const json& sweep) {
  if (!sweep.is_object() || !sweep.contains("parameters") || !sweep["parameters"].is_object())
    throw ConfigError("sweep: missing 'parameters' object");
  const std::string mode = sweep.value("mode", std::string("grid"));
  std::vector<std::string> keys;
  std::vector<json> specs;
  for (auto it = sweep["parameters"].begin(); it != sweep["parameters"].end(); ++it) {
    keys.push_back(it.key());
    specs.push_back(*it);
  }
  if (keys.empty()) throw ConfigError("sweep: empty parameter grid");
  std::vector<std::vector<json>> points;
  if (mode == "grid") {
    points.push_back({});
    for (const auto& s : specs) {
      if (!s.is_array() || s.empty()) throw ConfigError("sweep: grid parameters need a nonempty list of values");
      std::vector<std::vector<json>> next;
      for (const auto& p : points)
        for (const auto& v : s) {
          auto q = p;
          q.push_back(v);
          next.push_back(std::move(q));
        }
      points = std::move(next);
    }
  } else if (mode == "random") {
    const long samples = sweep.value("samples", 0L);
    if (samples <= 0) throw ConfigError("sweep: random mode needs a positive sample count");
    std::mt19937_64 rng(sweep.value("seed", std::uint64_t{0}));
    for (long k = 0; k < samples; ++k) {
      std::vector<json> p;
      for (const auto& s : specs) {
        if (s.is_array() && !s.empty()) {
          std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
          p.push_back(s[pick(rng)]);
        } else if (s.is_object() && s.contains("min") && s.contains("max")) {
          const double lo = s["min"].get<double>(), hi = s["max"].get<double>();
          if (!(hi >= lo)) throw ConfigError("sweep: max below min");
          std::uniform_real_distribution<double> u(0.0, 1.0);
          const double r = u(rng);
          if (s.value("log", false)) {
            if (!(lo > 0.0)) throw ConfigError("sweep: log range needs positive bounds");
            p.push_back(std::exp(std::log(lo) + r * (std::log(hi) - std::log(lo))));
          } else {
            p.push_back(lo + r * (hi - lo));
          }
        } else {
          throw ConfigError("sweep: parameters need a list or a {min, max} range");
        }
      }
      points.push_back(std::move(p));
    }
  } else {
    throw ConfigError("sweep: mode must be grid or random");
  }
  return {keys, points};
}

inline SweepResult cmd_sweep(const json& resolved, std::ostream& console = std::cout) {
  if (!resolved.contains("sweep")) throw ConfigError("sweep: config has no 'sweep' section");
  const auto [keys, points] = sweep_points(resolved.at("sweep"));
  const std::string root = resolved.value("output_dir", std::string("out"));
  SweepResult out;
  out.keys = keys;
  for (std::size_t k = 0; k < points.size(); ++k) {
    SweepRow row;
    row.index = k;
    row.values = points[k];
    json cfg = resolved;
    cfg.erase("sweep");
    std::ostringstream sub;
    sub << "point_" << std::setw(3) << std::setfill('0') << k;
    cfg["output_dir"] = (fs::path(root) / sub.str()).string();
    try {
      for (std::size_t i = 0; i < keys.size(); ++i) set_pointer(cfg, keys[i], points[k][i]);
      const Config c = parse_config(resolve_config(cfg));
      std::ostringstream quiet;
      const auto tr = cmd_train(c, quiet);
      row.status = tr.converged ? "ok" : "not_converged";
      row.cost = tr.summary["cost"].get<double>();
      row.max_defect = tr.summary["max_defect"].get<double>();
      const auto& sim = tr.summary["simulation"];
      if (sim.contains("train")) row.train_rmse = sim["train"]["rmse"].get<double>();
      if (sim.contains("validation")) row.validation_rmse = sim["validation"]["rmse"].get<double>();
      if (sim.contains("error")) row.status = "error: " + sim["error"].get<std::string>();
      row.metric = std::isfinite(row.validation_rmse) ? row.validation_rmse : row.train_rmse;
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
    }
    console << sub.str() << ": " << row.status << ", metric " << row.metric << '\n';
    if (std::isfinite(row.metric) && row.status.rfind("error", 0) != 0 &&
        (!out.best || row.metric < out.rows[*out.best].metric))
      out.best = k;
    out.rows.push_back(std::move(row));
  }
  if (out.best) out.rows[*out.best].best = true;

  const auto dir = prepare_output(root);
  std::ofstream csv(dir / "sweep.csv");
  if (!csv) throw Error("cannot write sweep table");
  csv.precision(12);
  csv << "point";
  for (const auto& k : keys) csv << ',' << k;
  csv << ",status,cost,max_defect,train_rmse,validation_rmse,metric,best\n";
  for (const auto& r : out.rows) {
    csv << r.index;
    for (const auto& v : r.values) csv << ',' << v.dump();
    std::string status = r.status;
    for (auto& ch : status)
      if (ch == ',' || ch == '\n') ch = ';';
    csv << ',' << status << ',' << r.cost << ',' << r.max_defect << ',' << r.train_rmse << ',' << r.validation_rmse
        << ',' << r.metric << ',' << (r.best ? 1 : 0) << '\n';
  }
  if (out.best)
    console << "best: point_" << std::setw(3) << std::setfill('0') << *out.best << std::setfill(' ') << " (metric "
            << out.rows[*out.best].metric << ")\n";
  return out;
}

}  // namespace nde::experiment
