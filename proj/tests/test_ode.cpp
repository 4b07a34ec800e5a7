#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "nde/ode.hpp"
#include "nde/problems/spiral.hpp"

namespace {

using Eigen::VectorXd;

nde::OdeField decay() {
  return {[](const VectorXd& x, double) -> VectorXd { return -x; }, 1};
}

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

double fixed_decay_error(double h) {
  const std::vector<double> save{1.0};
  const auto traj = nde::integrate_fixed(decay(), vec({1.0}), {0.0, 1.0}, {h, {}}, save);
  return std::abs(traj.states(0, 0) - std::exp(-1.0));
}

TEST(Rk4Step, ExponentialGrowthMatchesClosedForm) {
  const nde::OdeField grow{[](const VectorXd& x, double) -> VectorXd { return x; }, 1};
  const VectorXd x = nde::rk4_step(grow, vec({1.0}), 0.0, 0.1);
  EXPECT_NEAR(x[0], 1.10517083, 1e-8);
  EXPECT_LE(std::abs(x[0] - std::exp(0.1)), 1e-7);
}

TEST(Rk4Step, ZeroFieldIsFixedPoint) {
  const nde::OdeField zero{[](const VectorXd& x, double) -> VectorXd { return VectorXd::Zero(x.size()); }, 2};
  for (double h : {1e-3, 0.5, 17.0}) {
    const VectorXd x = nde::rk4_step(zero, vec({2.0, 0.0}), 0.0, h);
    EXPECT_EQ(x, vec({2.0, 0.0}));
  }
}

TEST(Rk4Step, ConstantFieldIsLinear) {
  const nde::OdeField one{[](const VectorXd&, double) -> VectorXd { return vec({1.0}); }, 1};
  EXPECT_DOUBLE_EQ(nde::rk4_step(one, vec({0.0}), 0.0, 0.5)[0], 0.5);
}

TEST(Rk4Step, NonFiniteDerivativeNamesTime) {
  const nde::OdeField bad{[](const VectorXd& x, double t) -> VectorXd {
                            return t > 1.01 ? VectorXd::Constant(1, NAN) : x;
                          },
                          1};
  try {
    nde::rk4_step(bad, vec({1.0}), 1.0, 0.1);
    FAIL() << "expected IntegrationError";
  } catch (const nde::IntegrationError& e) {
    EXPECT_NEAR(e.time(), 1.05, 1e-12);
  }
  EXPECT_THROW(nde::rk4_step(decay(), vec({1.0}), 0.0, 0.0), nde::InputError);
}

TEST(IntegrateFixed, DecayEndpoint) {
  const std::vector<double> save{0.0, 1.0};
  const auto traj = nde::integrate_fixed(decay(), vec({1.0}), {0.0, 1.0}, {0.01, {}}, save);
  ASSERT_EQ(traj.states.rows(), 2);
  EXPECT_EQ(traj.times.front(), 0.0);
  EXPECT_EQ(traj.times.back(), 1.0);
  EXPECT_NEAR(traj.states(1, 0), 0.3678794, 1e-6);
}

TEST(IntegrateFixed, InitialConditionReturnedVerbatim) {
  const std::vector<double> save{0.0};
  const auto traj =
      nde::integrate_fixed(nde::spiral_true_field(), vec({2.0, 0.0}), {0.0, 6.0}, {0.05, {}}, save);
  EXPECT_EQ(traj.states(0, 0), 2.0);
  EXPECT_EQ(traj.states(0, 1), 0.0);
}

TEST(IntegrateFixed, CosineQuadrature) {
  const nde::OdeField cosine{[](const VectorXd&, double t) -> VectorXd { return vec({std::cos(t)}); }, 1};
  const double pi = std::numbers::pi;
  const std::vector<double> save{pi};
  const auto traj = nde::integrate_fixed(cosine, vec({0.0}), {0.0, pi}, {pi / 100, {}}, save);
  EXPECT_NEAR(traj.states(0, 0), 0.0, 1e-6);
}

TEST(IntegrateFixed, FourthOrderConvergence) {
  const double e1 = fixed_decay_error(0.1);
  const double e2 = fixed_decay_error(0.05);
  const double e3 = fixed_decay_error(0.025);
  EXPECT_GE(e1 / e2, 14.0);
  EXPECT_LE(e1 / e2, 18.0);
  EXPECT_GE(e2 / e3, 14.0);
  EXPECT_LE(e2 / e3, 18.0);
}

TEST(IntegrateFixed, Deterministic) {
  const std::vector<double> save{0.0, 0.7, 1.3, 6.0};
  const auto a =
      nde::integrate_fixed(nde::spiral_true_field(), vec({2.0, 0.0}), {0.0, 6.0}, {0.05, {0.33}}, save);
  const auto b =
      nde::integrate_fixed(nde::spiral_true_field(), vec({2.0, 0.0}), {0.0, 6.0}, {0.05, {0.33}}, save);
  EXPECT_EQ(a.states, b.states);
}

TEST(IntegrateFixed, RejectsSaveTimesOutsideSpan) {
  const std::vector<double> save{1.5};
  EXPECT_THROW(nde::integrate_fixed(decay(), vec({1.0}), {0.0, 1.0}, {0.1, {}}, save), nde::InputError);
}

TEST(StepSequence, LandsExactlyOnBoundaries) {
  const std::vector<double> boundaries{0.123, 0.5, 0.9999, 2.0 /* outside */};
  const double h = 0.07;
  const auto seq = nde::step_sequence(0.0, 1.0, h, boundaries);
  EXPECT_EQ(seq.front(), 0.0);
  EXPECT_EQ(seq.back(), 1.0);
  for (double b : {0.123, 0.5, 0.9999})
    EXPECT_NE(std::find(seq.begin(), seq.end(), b), seq.end()) << b;
  for (std::size_t k = 1; k < seq.size(); ++k) {
    EXPECT_GT(seq[k], seq[k - 1]);
    EXPECT_LE(seq[k] - seq[k - 1], h * (1 + 1e-9));
  }
}

TEST(IntegrateAdaptive, DecayEndpoint) {
  const std::vector<double> save{1.0};
  nde::AdaptiveOptions opts;
  opts.rtol = 1e-6;
  opts.atol = 1e-8;
  const auto traj = nde::integrate_adaptive(decay(), vec({1.0}), {0.0, 1.0}, opts, save);
  EXPECT_NEAR(traj.states(0, 0), 0.3678794, 1e-5);
}

TEST(IntegrateAdaptive, ZeroFieldConstant) {
  const nde::OdeField zero{[](const VectorXd& x, double) -> VectorXd { return VectorXd::Zero(x.size()); }, 2};
  const std::vector<double> save{0.0, 1.0, 5.0};
  for (double rtol : {1e-3, 1e-9}) {
    nde::AdaptiveOptions opts;
    opts.rtol = rtol;
    const auto traj = nde::integrate_adaptive(zero, vec({2.0, -1.0}), {0.0, 5.0}, opts, save);
    for (Eigen::Index r = 0; r < 3; ++r) EXPECT_EQ(VectorXd(traj.states.row(r).transpose()), vec({2.0, -1.0}));
  }
}

TEST(IntegrateAdaptive, SpiralStaysBoundedAndMatchesReference) {
  std::vector<double> save;
  for (int k = 0; k <= 600; ++k) save.push_back(6.0 * k / 600);
  nde::AdaptiveOptions loose;
  loose.rtol = 1e-6;
  nde::AdaptiveOptions tight;
  tight.rtol = 1e-10;
  tight.atol = 1e-12;
  const auto traj = nde::integrate_adaptive(nde::spiral_true_field(), vec({2.0, 0.0}), {0.0, 6.0}, loose, save);
  const auto ref = nde::integrate_adaptive(nde::spiral_true_field(), vec({2.0, 0.0}), {0.0, 6.0}, tight, save);
  // Reference run is contractive: its max-norm never exceeds the initial 2.
  EXPECT_LE(ref.states.cwiseAbs().maxCoeff(), 2.0 + 1e-9);
  EXPECT_LE(traj.states.cwiseAbs().maxCoeff(), 2.1);
  EXPECT_LE((traj.states - ref.states).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(IntegrateAdaptive, AgreesWithFixedStepOnSpiral) {
  std::vector<double> save;
  for (int k = 0; k <= 60; ++k) save.push_back(6.0 * k / 60);
  nde::AdaptiveOptions opts;
  opts.rtol = 1e-8;
  opts.atol = 1e-10;
  const auto adaptive =
      nde::integrate_adaptive(nde::spiral_true_field(), vec({2.0, 0.0}), {0.0, 6.0}, opts, save);
  const auto fixed =
      nde::integrate_fixed(nde::spiral_true_field(), vec({2.0, 0.0}), {0.0, 6.0}, {1e-3, {}}, save);
  EXPECT_LE((adaptive.states - fixed.states).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(IntegrateAdaptive, BlowUpIsReported) {
  const nde::OdeField blowup{[](const VectorXd& x, double) -> VectorXd { return x.cwiseAbs2(); }, 1};
  const std::vector<double> save{2.0};
  EXPECT_THROW(nde::integrate_adaptive(blowup, vec({1.0}), {0.0, 2.0}, {}, save), nde::IntegrationError);
}

TEST(IntegrateAdaptive, RejectsBadTolerances) {
  nde::AdaptiveOptions opts;
  opts.rtol = 0.0;
  const std::vector<double> save{1.0};
  EXPECT_THROW(nde::integrate_adaptive(decay(), vec({1.0}), {0.0, 1.0}, opts, save), nde::InputError);
}

TEST(Rk4Step, TapedStepMatchesPlain) {
  nde::ad::Tape tape;
  const auto x = tape.variable(vec({1.5, -0.5}));
  const auto field = [](const auto& v, double) {
    using V = std::decay_t<decltype(v)>;
    return V(nde::ops::tanh(nde::ops::cube(v)));
  };
  const auto taped = nde::rk4_step(field, x, 0.0, 0.1);
  const VectorXd plain = nde::rk4_step(field, vec({1.5, -0.5}), 0.0, 0.1);
  EXPECT_LE((taped.value() - plain).cwiseAbs().maxCoeff(), 1e-15);
}

}  // namespace
