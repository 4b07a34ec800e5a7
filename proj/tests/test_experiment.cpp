#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "nde/experiment.hpp"

namespace ex = nde::experiment;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("nde_test_experiment_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

// Small spiral run that finishes in well under a second.
json quick_spiral(const fs::path& out) {
  return {{"problem", "spiral"},
          {"output_dir", out.string()},
          {"log_every", 0},
          {"shooting", {{"intervals", 5}}},
          {"solver", {{"inner_iterations", 40}, {"outer_iterations", 3}}}};
}

ex::Config parse(const json& user) { return ex::parse_config(ex::resolve_config(user)); }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(NDE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, DefaultsPerProblem) {
  const auto c = parse({{"problem", "spiral"}});
  EXPECT_EQ(c.intervals, 20);
  EXPECT_DOUBLE_EQ(c.step, 0.05);
  EXPECT_EQ(c.init, nde::InitStrategy::replicate_x0);
  EXPECT_EQ(c.reg.kind, nde::RegKind::spectral_sum);
  EXPECT_DOUBLE_EQ(c.auglag.tolerance, 1e-3);
  EXPECT_EQ(c.auglag.max_outer, 30);
  EXPECT_EQ(c.inner.lbfgs.max_iterations, 200);
  EXPECT_EQ(c.inner.lbfgs.memory, 10);
  EXPECT_EQ(ex::layer_sizes(c, 2), (std::vector<int>{2, 16, 2}));

  const auto d = ex::resolve_config({{"problem", "tanks"}});
  EXPECT_EQ(d["shooting"]["intervals"], 16);
  EXPECT_DOUBLE_EQ(d["shooting"]["step"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(d["tanks"]["tau_d"].get<double>(), 79.0);
  EXPECT_DOUBLE_EQ(d["tanks"]["tau_i"].get<double>(), 164.0);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(ex::resolve_config({{"problem", "pendulum"}}), nde::ConfigError);
  EXPECT_THROW(ex::resolve_config({{"solvr", {}}}), nde::ConfigError);
  EXPECT_THROW(ex::resolve_config({{"solver", {{"tolerence", 1}}}}), nde::ConfigError);
  EXPECT_THROW(parse({{"shooting", {{"step", -0.1}}}}), nde::ConfigError);
  EXPECT_THROW(parse({{"shooting", {{"intervals", 0}}}}), nde::ConfigError);
  EXPECT_THROW(parse({{"solver", {{"growth", 1.0}}}}), nde::ConfigError);
  EXPECT_THROW(parse({{"solver", {{"inner", "sgd"}}}}), nde::Error);
  EXPECT_THROW(parse({{"problem", "tanks"}}), nde::ConfigError);  // no data path
  EXPECT_THROW(parse({{"problem", "custom"}, {"data", {{"path", "/nonexistent/x.csv"}}}}), nde::ConfigError);
}

TEST(Config, SingleShootingUsesOneInterval) {
  const auto c = parse({{"shooting", {{"method", "single"}, {"intervals", 20}}}});
  EXPECT_FALSE(c.multiple);
  EXPECT_EQ(c.intervals, 1);
}

TEST(Config, Overrides) {
  json j = json::object();
  ex::apply_override(j, "/solver/tolerance=1e-4");
  ex::apply_override(j, "shooting.init=data_at_boundaries");
  ex::apply_override(j, "/network/hidden=[8,8]");
  EXPECT_DOUBLE_EQ(j["solver"]["tolerance"].get<double>(), 1e-4);
  EXPECT_EQ(j["shooting"]["init"], "data_at_boundaries");
  EXPECT_EQ(j["network"]["hidden"], json({8, 8}));
  EXPECT_THROW(ex::apply_override(j, "no_equals"), nde::ConfigError);
}

TEST(GenSpiral, WritesCsvAndSidecar) {
  const auto dir = scratch("gen");
  const auto csv = ex::cmd_gen_spiral(parse({{"output_dir", dir.string()}}));
  EXPECT_EQ(line_count(csv), 62u);  // header plus t = 0, 0.1, ..., 6
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "t,x_0,x_1");
  const auto side = json::parse(slurp(dir / "spiral.json"));
  EXPECT_EQ(side["rows"], 61);
  EXPECT_DOUBLE_EQ(side["sigma"].get<double>(), 0.2);

  const auto series = ex::load_series_csv(csv.string());
  const auto direct = nde::gen_spiral(parse({}).spiral);
  EXPECT_EQ(series.times, direct.times);
  EXPECT_EQ(series.values, direct.values);  // 17 significant digits round-trip exactly
}

TEST(GenSpiral, NoiselessFileIndependentOfSeed) {
  const auto a = scratch("clean_a"), b = scratch("clean_b");
  ex::cmd_gen_spiral(parse({{"seed", 1}, {"data", {{"sigma", 0.0}}}, {"output_dir", a.string()}}));
  ex::cmd_gen_spiral(parse({{"seed", 99}, {"data", {{"sigma", 0.0}}}, {"output_dir", b.string()}}));
  EXPECT_EQ(slurp(a / "spiral.csv"), slurp(b / "spiral.csv"));
}

TEST(GenSpiral, SeedDeterminism) {
  const auto a = scratch("seed_a"), b = scratch("seed_b"), c = scratch("seed_c");
  ex::cmd_gen_spiral(parse({{"seed", 5}, {"output_dir", a.string()}}));
  ex::cmd_gen_spiral(parse({{"seed", 5}, {"output_dir", b.string()}}));
  ex::cmd_gen_spiral(parse({{"seed", 6}, {"output_dir", c.string()}}));
  EXPECT_EQ(slurp(a / "spiral.csv"), slurp(b / "spiral.csv"));
  EXPECT_NE(slurp(a / "spiral.csv"), slurp(c / "spiral.csv"));
}

TEST(SeriesCsv, Malformed) {
  const auto dir = scratch("csv");
  fs::create_directories(dir);
  const auto p = dir / "bad.csv";
  std::ofstream(p) << "t,x_0\n0,1\n0.1\n";
  EXPECT_THROW(ex::load_series_csv(p.string()), nde::FormatError);
  std::ofstream(p) << "t,x_0\n0,1\n0.1,abc\n";
  EXPECT_THROW(ex::load_series_csv(p.string()), nde::FormatError);
  std::ofstream(p) << "t,x_0\n0.1,1\n0.0,2\n";
  EXPECT_THROW(ex::load_series_csv(p.string()), nde::FormatError);
  EXPECT_THROW(ex::load_series_csv((dir / "missing.csv").string()), nde::FormatError);
}

TEST(Train, WritesArtifactsAndEvalReproducesCost) {
  const auto dir = scratch("train");
  const auto cfg = parse(quick_spiral(dir));
  std::ostringstream log;
  const auto tr = ex::cmd_train(cfg, log);
  for (const char* f : {"config.json", "checkpoint.json", "training_log.csv", "trajectory.csv", "defects.csv",
                        "summary.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  // 61 data times plus both ends of each of the 4 interior boundaries, and a header
  EXPECT_EQ(line_count(dir / "trajectory.csv"), 66u);
  EXPECT_EQ(line_count(dir / "defects.csv"), 9u);  // header plus 4 boundaries x 2 components
  EXPECT_EQ(json::parse(slurp(dir / "config.json")), cfg.resolved);
  EXPECT_EQ(ex::parse_config(ex::resolve_config(cfg.resolved)).resolved, cfg.resolved);

  const auto summary = json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(summary["cost"].get<double>(), tr.summary["cost"].get<double>());
  EXPECT_EQ(summary["converged"].get<bool>(), tr.converged);

  const auto ev = ex::cmd_eval(cfg, (dir / "checkpoint.json").string(), std::nullopt, log);
  EXPECT_EQ(ev.metrics["shooting"]["cost"].get<double>(), summary["cost"].get<double>());
  EXPECT_EQ(ev.metrics["shooting"]["max_defect"].get<double>(), summary["max_defect"].get<double>());
  EXPECT_TRUE(fs::exists(dir / "eval.json"));
  EXPECT_TRUE(fs::exists(dir / "eval_trajectory.csv"));
}

TEST(Train, FileBackedDataMatchesInMemory) {
  const auto gen = scratch("file_gen"), a = scratch("file_a"), b = scratch("file_b");
  const auto csv = ex::cmd_gen_spiral(parse({{"output_dir", gen.string()}}));
  auto with_file = quick_spiral(b);
  with_file["data"] = {{"path", csv.string()}};
  std::ostringstream log;
  const auto ra = ex::cmd_train(parse(quick_spiral(a)), log);
  const auto rb = ex::cmd_train(parse(with_file), log);
  EXPECT_EQ(ra.summary["cost"].get<double>(), rb.summary["cost"].get<double>());
}

TEST(Train, PenaltyAndSingleShooting) {
  std::ostringstream log;
  auto pen = quick_spiral(scratch("penalty"));
  pen["solver"]["constraint"] = "penalty";
  EXPECT_NO_THROW(ex::cmd_train(parse(pen), log));

  auto single = quick_spiral(scratch("single"));
  single["shooting"] = {{"method", "single"}};
  single["solver"] = {{"inner", "nadam"}, {"first_order_iterations", 50}};
  const auto r = ex::cmd_train(parse(single), log);
  EXPECT_EQ(r.summary["intervals"], 1);
  EXPECT_EQ(r.summary["max_defect"].get<double>(), 0.0);
}

TEST(Train, MissingDatasetIsHardErrorWithoutOutputs) {
  const auto dir = scratch("missing");
  const auto data = scratch("missing_data");
  fs::create_directories(data);
  const auto csv = data / "d.csv";
  std::ofstream(csv) << "t,x_0\n0,1\n1,2\n2,3\n";
  json user = {{"problem", "custom"}, {"data", {{"path", csv.string()}}}, {"output_dir", dir.string()}};
  const auto cfg = parse(user);
  fs::remove(csv);
  std::ostringstream log;
  EXPECT_THROW(ex::cmd_train(cfg, log), nde::FormatError);
  EXPECT_FALSE(fs::exists(dir));
}

TEST(Eval, IncompatibleCheckpoint) {
  const auto dir = scratch("incompat");
  std::ostringstream log;
  ex::cmd_train(parse(quick_spiral(dir)), log);
  const auto ckpt = (dir / "checkpoint.json").string();

  auto wider = quick_spiral(dir);
  wider["network"] = {{"hidden", {8}}};
  EXPECT_THROW(ex::cmd_eval(parse(wider), ckpt, std::nullopt, log), nde::ArchitectureError);

  auto more = quick_spiral(dir);
  more["shooting"]["intervals"] = 6;
  EXPECT_THROW(ex::cmd_eval(parse(more), ckpt, std::nullopt, log), nde::ArchitectureError);
}

TEST(Eval, SpanOverride) {
  const auto dir = scratch("span");
  std::ostringstream log;
  const auto cfg = parse(quick_spiral(dir));
  ex::cmd_train(cfg, log);
  const auto ev = ex::cmd_eval(cfg, (dir / "checkpoint.json").string(), std::make_pair(0.0, 20.0), log);
  EXPECT_EQ(ev.metrics["trajectory"]["points"], 201);
  EXPECT_EQ(line_count(dir / "eval_trajectory.csv"), 202u);
  EXPECT_THROW(ex::cmd_eval(cfg, (dir / "checkpoint.json").string(), std::make_pair(5.0, 1.0), log),
               nde::ConfigError);
}

TEST(Sweep, GridRowsAndBestFlag) {
  const auto dir = scratch("sweep");
  auto user = quick_spiral(dir);
  user["sweep"] = {{"mode", "grid"},
                   {"parameters", {{"/regularization/weight", {0.1, 1.0}}, {"/shooting/intervals", {4, 5, 6}}}}};
  std::ostringstream log;
  const auto r = ex::cmd_sweep(ex::resolve_config(user), log);
  ASSERT_EQ(r.rows.size(), 6u);
  EXPECT_EQ(line_count(dir / "sweep.csv"), 7u);
  int best = 0;
  for (const auto& row : r.rows) {
    best += row.best ? 1 : 0;
    EXPECT_TRUE(fs::exists(dir / ("point_00" + std::to_string(row.index)) / "summary.json"));
  }
  EXPECT_EQ(best, 1);
  ASSERT_TRUE(r.best.has_value());
  for (const auto& row : r.rows) EXPECT_LE(r.rows[*r.best].metric, row.metric);
}

TEST(Sweep, FailedPointIsRecorded) {
  const auto dir = scratch("sweep_fail");
  auto user = quick_spiral(dir);
  user["sweep"] = {{"parameters", {{"/shooting/step", {0.05, -1.0}}}}};
  std::ostringstream log;
  const auto r = ex::cmd_sweep(ex::resolve_config(user), log);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[1].status.rfind("error", 0), 0u);
  EXPECT_TRUE(r.rows[0].best);
}

TEST(Sweep, RandomSamplesWithinRange) {
  json s = {{"mode", "random"},
            {"samples", 7},
            {"seed", 3},
            {"parameters", {{"/regularization/weight", {{"min", 0.01}, {"max", 10.0}, {"log", true}}},
                            {"/shooting/intervals", {10, 20}}}}};
  const auto [keys, points] = ex::sweep_points(s);
  ASSERT_EQ(points.size(), 7u);
  for (const auto& p : points) {
    EXPECT_GE(p[0].get<double>(), 0.01);
    EXPECT_LE(p[0].get<double>(), 10.0);
    EXPECT_TRUE(p[1] == 10 || p[1] == 20);
  }
  EXPECT_EQ(ex::sweep_points(s).second, points);
}

TEST(Sweep, EmptyGridIsError) {
  EXPECT_THROW(ex::sweep_points({{"parameters", json::object()}}), nde::ConfigError);
  EXPECT_THROW(ex::sweep_points({{"parameters", {{"/seed", json::array()}}}}), nde::ConfigError);
  EXPECT_THROW(ex::sweep_points(json::object()), nde::ConfigError);
  EXPECT_THROW(ex::cmd_sweep(ex::resolve_config(json::object())), nde::ConfigError);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  EXPECT_EQ(run_cli("gen-spiral --out " + dir.string()), 0);
  EXPECT_TRUE(fs::exists(dir / "spiral.csv"));
  // one outer iteration with a tiny inner budget cannot meet the tolerance
  EXPECT_EQ(run_cli("train --out " + (dir / "short").string() +
                    " --set /solver/outer_iterations=1 --set /solver/inner_iterations=5 --set /log_every=0"),
            2);
  EXPECT_EQ(run_cli("train --out " + (dir / "bad").string() + " --set /shooting/step=-1"), 1);
  EXPECT_EQ(run_cli("train --config /nonexistent.json"), 1);
  EXPECT_EQ(run_cli("eval --out " + dir.string() + " --checkpoint /nonexistent.json"), 1);
  EXPECT_FALSE(fs::exists(dir / "bad"));
}
