#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mjnn/simulation.hpp"
#include "mjnn/synthesis.hpp"
#include "toy.hpp"

using namespace mjnn;

namespace {

const SynthesisResult& fixture_design() {
  static const SynthesisResult r = [] {
    const auto f = test::fixture();
    return ccl_synthesize(f.model, f.protocol, 1.0);
  }();
  return r;
}

TransitionCompletion completion(const MjnnModel& m) { return TransitionCompletion::uniform_fill(m.transitions); }

double naive_v(const Trajectory& tr, const Certificate& c, const MjnnModel& model, long k) {
  const auto& s = tr.steps[static_cast<std::size_t>(k)];
  auto q = [&](long d) { return tr.eta_at(d).dot(c.Z * tr.eta_at(d)); };
  double v = s.eta.dot(c.P(s.mode) * s.eta);
  for (long d = k - s.delay; d <= k - 1; ++d) v += q(d);
  for (long l = k - model.delay.tau_max + 1; l <= k - model.delay.tau_min; ++l) {
    for (long d = l; d <= k - 1; ++d) v += q(d);
  }
  return v;
}

std::vector<Vector> history(int count, double value) {
  std::vector<Vector> h;
  for (int k = 0; k < count; ++k) h.push_back(Vector::Constant(2, value * (1.0 + 0.5 * k)));
  return h;
}

}  // namespace

TEST(Simulation, ZeroEquilibrium) {
  const auto f = test::fixture();
  SimConfig cfg;
  cfg.horizon = 50;
  const auto tr = simulate(f.model, f.protocol, test::reference_gains(), completion(f.model), DisturbanceSignal::zero(), cfg);
  ASSERT_EQ(tr.steps.size(), 51u);
  for (const auto& s : tr.steps) {
    EXPECT_EQ(s.eta.squaredNorm(), 0.0);
    EXPECT_EQ(s.node, 0u);
  }
  EXPECT_EQ(tr.sup_z_sq, 0.0);
  EXPECT_EQ(tr.w_energy, 0.0);
}

TEST(Simulation, ErrorIsStateMinusEstimate) {
  const auto f = test::fixture();
  SimConfig cfg;
  cfg.horizon = 60;
  cfg.seed = 3;
  cfg.initial_history = history(4, 0.7);
  const auto tr = simulate(f.model, f.protocol, fixture_design().gains, completion(f.model),
                           DisturbanceSignal::decaying_sinusoid(), cfg);
  std::size_t transmissions = 0;
  for (const auto& s : tr.steps) {
    EXPECT_EQ(s.e, s.x_bar - s.x_hat);
    EXPECT_EQ(s.eta.head(4), s.x_bar);
    EXPECT_GE(s.delay, 1);
    EXPECT_LE(s.delay, 3);
  }
  for (auto c : tr.node_counts) transmissions += c;
  EXPECT_EQ(transmissions, cfg.horizon);
}

TEST(Simulation, SingleNodeProtocol) {
  const auto f = test::fixture();
  const auto proto = test::single_node(2);
  EstimatorGains k(4, 1, 4, 2);
  SimConfig cfg;
  cfg.horizon = 40;
  const auto tr = simulate(f.model, proto, k, completion(f.model), DisturbanceSignal::decaying_sinusoid(), cfg);
  EXPECT_EQ(tr.node_counts, std::vector<std::size_t>{40});
  for (const auto& s : tr.steps) EXPECT_EQ(s.node, 0u);
}

TEST(Simulation, Reproducible) {
  const auto f = test::fixture();
  SimConfig cfg;
  cfg.horizon = 100;
  cfg.seed = 7;
  cfg.initial_history = history(4, 1.0);
  const auto& k = fixture_design().gains;
  const auto a = simulate(f.model, f.protocol, k, completion(f.model), DisturbanceSignal::decaying_sinusoid(), cfg);
  const auto b = simulate(f.model, f.protocol, k, completion(f.model), DisturbanceSignal::decaying_sinusoid(), cfg);
  std::ostringstream sa, sb;
  write_trajectory_csv(sa, a);
  write_trajectory_csv(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  cfg.seed = 8;
  const auto c = simulate(f.model, f.protocol, k, completion(f.model), DisturbanceSignal::decaying_sinusoid(), cfg);
  std::ostringstream sc;
  write_trajectory_csv(sc, c);
  EXPECT_NE(sa.str(), sc.str());
}

TEST(Simulation, CsvLayout) {
  const auto f = test::fixture();
  SimConfig cfg;
  cfg.horizon = 2;
  const auto tr = simulate(f.model, f.protocol, fixture_design().gains, completion(f.model),
                           DisturbanceSignal::decaying_sinusoid(), cfg);
  std::ostringstream os;
  write_trajectory_csv(os, tr);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "k,mode,node,x1,x2,e1,e2,ztilde_sq,V");
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 2), "0,");
  EXPECT_EQ(line.back(), ',');
  EXPECT_EQ(fmt17(0.1), "0.10000000000000001");
}

TEST(Simulation, DisturbanceSignals) {
  const auto d = DisturbanceSignal::decaying_sinusoid();
  EXPECT_EQ(d.w(0, 2), Vector::Zero(2));
  EXPECT_EQ(d.v(0, 2), Vector::Constant(2, 2.0));
  EXPECT_NEAR(d.w(10, 1)(0), std::exp(-0.5) * std::sin(10.0), 1e-15);
  const auto lit = DisturbanceSignal::decaying_sinusoid(true);
  EXPECT_NEAR(lit.envelope(0), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(lit.envelope(50), 1.0, 1e-15);
  const auto ts = DisturbanceSignal::time_series({Vector::Ones(2)}, {Vector::Ones(2)});
  const auto f = test::fixture();
  SimConfig cfg;
  cfg.horizon = 3;
  EXPECT_THROW(simulate(f.model, f.protocol, test::reference_gains(), completion(f.model), ts, cfg), Error);
}

TEST(Simulation, OverflowIsReported) {
  test::ScalarToy t;
  t.a = 1.5;
  const auto model = test::scalar_model(t);
  SimConfig cfg;
  cfg.horizon = 200;
  cfg.initial_history = {Vector::Ones(1), Vector::Ones(1)};
  EstimatorGains k(1, 1, 2, 1);
  try {
    simulate(model, test::single_node(1), k, completion(model), DisturbanceSignal::zero(), cfg);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NumericOverflow);
  }
}

TEST(Simulation, EnsembleDegenerateRatios) {
  const auto f = test::fixture();
  const auto& k = fixture_design().gains;
  const auto zero = empirical_l2linf(f.model, f.protocol, k, completion(f.model), DisturbanceSignal::zero(), 3, 20, 1);
  EXPECT_FALSE(zero.ratio.has_value());
  EXPECT_FALSE(zero.ratio_single.has_value());
  const auto h0 = empirical_l2linf(f.model, f.protocol, k, completion(f.model), DisturbanceSignal::decaying_sinusoid(), 3, 0, 1);
  ASSERT_TRUE(h0.ratio.has_value());
  EXPECT_EQ(*h0.ratio, 0.0);
  const auto k0 = EstimatorGains::zeros(f.model, f.protocol);
  const auto h1 = empirical_l2linf(f.model, f.protocol, k0, completion(f.model), DisturbanceSignal::decaying_sinusoid(), 3, 1, 1);
  EXPECT_EQ(*h1.ratio, 0.0);
  EXPECT_THROW(empirical_l2linf(f.model, f.protocol, k, completion(f.model), DisturbanceSignal::zero(), 0, 5, 1), Error);
}

TEST(Simulation, EnsembleAccounting) {
  const auto f = test::fixture();
  const auto m = empirical_l2linf(f.model, f.protocol, fixture_design().gains, completion(f.model),
                                  DisturbanceSignal::decaying_sinusoid(), 10, 50, 2);
  std::size_t total = 0;
  for (auto c : m.node_counts) total += c;
  EXPECT_EQ(total, 10u * 50u);
  ASSERT_TRUE(m.ratio && m.ratio_single);
  EXPECT_GE(*m.ratio, 0.0);
  EXPECT_NEAR(*m.ratio_single, 2.0 * *m.ratio, 1e-15);
  EXPECT_EQ(m.ms_eta.size(), 51u);
  double energy = 0.0;
  const auto d = DisturbanceSignal::decaying_sinusoid();
  for (std::size_t k = 0; k <= 50; ++k) energy += 2.0 * (d.w(k, 2).squaredNorm() + d.v(k, 2).squaredNorm());
  EXPECT_NEAR(m.w_energy, energy, 1e-12 * energy);
}

TEST(Simulation, FixtureErrorConverges) {
  const auto f = test::fixture();
  SimConfig cfg;
  cfg.horizon = 200;
  cfg.seed = 1;
  const auto tr = simulate(f.model, f.protocol, fixture_design().gains, completion(f.model),
                           DisturbanceSignal::decaying_sinusoid(), cfg);
  double peak = 0.0;
  for (const auto& s : tr.steps) peak = std::max(peak, s.e.norm());
  EXPECT_GT(peak, 0.0);
  EXPECT_LT(tr.steps.back().e.norm(), 1e-3 * peak);
}

TEST(Simulation, MeanSquareDecay) {
  const auto f = test::fixture();
  const auto rep = mean_square_decay(f.model, f.protocol, fixture_design().gains, completion(f.model), 50, 500, 4, 1.0);
  ASSERT_TRUE(rep.threshold_step.has_value());
  EXPECT_LE(*rep.threshold_step, 500u);

  test::ScalarToy t;
  t.a = 1.5;
  const auto toy = test::scalar_model(t);
  EstimatorGains k(1, 1, 2, 1);
  const auto bad = mean_square_decay(toy, test::single_node(1), k, completion(toy), 5, 40, 4, 1.0);
  EXPECT_FALSE(bad.threshold_step.has_value());
  EXPECT_GT(bad.ms_eta.back(), bad.ms_eta.front());

  const auto flat = mean_square_decay(f.model, f.protocol, fixture_design().gains, completion(f.model), 3, 10, 4, 0.0);
  ASSERT_TRUE(flat.threshold_step.has_value());
  EXPECT_EQ(*flat.threshold_step, 0u);
}

TEST(Simulation, LyapunovZeroTrajectory) {
  const auto f = test::fixture();
  const auto& cert = *fixture_design().verification->certificate;
  SimConfig cfg;
  cfg.horizon = 20;
  const auto tr = simulate(f.model, f.protocol, fixture_design().gains, completion(f.model), DisturbanceSignal::zero(), cfg);
  const auto rep = lyapunov_delta_check(tr, cert, f.model, completion(f.model));
  for (double d : rep.delta) EXPECT_EQ(d, 0.0);
  for (double d : rep.expected_delta) EXPECT_EQ(d, 0.0);
}

TEST(Simulation, LyapunovMatchesNaiveSums) {
  const auto& cert = *fixture_design().verification->certificate;
  for (DelaySpec delay : {DelaySpec{2, 2}, DelaySpec{1, 3}}) {
    auto f = test::fixture();
    f.model.delay = delay;
    SimConfig cfg;
    cfg.horizon = 30;
    cfg.seed = 9;
    cfg.initial_history = history(delay.tau_max + 1, 0.8);
    const auto tr = simulate(f.model, f.protocol, fixture_design().gains, completion(f.model),
                             DisturbanceSignal::zero(), cfg);
    const auto rep = lyapunov_delta_check(tr, cert, f.model, completion(f.model));
    for (long k = 0; k <= 30; ++k) {
      const double expected = naive_v(tr, cert, f.model, k);
      EXPECT_NEAR(rep.V[static_cast<std::size_t>(k)], expected, 1e-12 * std::max(1.0, std::abs(expected)));
    }
  }
}

TEST(Simulation, LyapunovDimensionCheck) {
  const auto f = test::fixture();
  SimConfig cfg;
  cfg.horizon = 5;
  const auto tr = simulate(f.model, f.protocol, test::reference_gains(), completion(f.model), DisturbanceSignal::zero(), cfg);
  auto cert = *fixture_design().verification->certificate;
  cert.Z = Matrix::Identity(3, 3);
  EXPECT_THROW(lyapunov_delta_check(tr, cert, f.model, completion(f.model)), Error);
}

TEST(Simulation, LyapunovDecreasesInExpectation) {
  const auto f = test::fixture();
  const auto& cert = *fixture_design().verification->certificate;
  const auto ens = lyapunov_ensemble(f.model, f.protocol, fixture_design().gains, completion(f.model), cert, 40, 60, 5, 1.0);
  std::size_t negative = 0;
  std::size_t counted = 0;
  for (std::size_t k = 5; k < ens.mean_expected_delta.size(); ++k) {
    ++counted;
    if (ens.mean_expected_delta[k] < 0.0) ++negative;
  }
  EXPECT_GE(static_cast<double>(negative), 0.99 * static_cast<double>(counted));
}
