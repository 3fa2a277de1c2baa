#include <gtest/gtest.h>

#include "mjnn/conditions.hpp"
#include "mjnn/sdp.hpp"
#include "mjnn/synthesis.hpp"
#include "toy.hpp"

using namespace mjnn;

namespace {

std::size_t count_prefix(const LmiProblem& p, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& c : p.constraints()) {
    if (c.label.rfind(prefix, 0) == 0) ++n;
  }
  return n;
}

TransitionSpec partial_mask() {
  TransitionSpec s(4);
  s.set(0, 0, 0.3);
  s.set(0, 2, 0.1);
  s.set(1, 3, 0.2);
  s.set(2, 0, 0.1);
  s.set(2, 2, 0.5);
  s.set(3, 2, 0.1);
  s.set(3, 3, 0.5);
  return s;
}

EstimatorGains scalar_gain(double k1, double k2) {
  EstimatorGains g(1, 1, 2, 1);
  g.at(0, 0) << k1, k2;
  return g;
}

}  // namespace

TEST(Conditions, ScalarToyStable) {
  test::ScalarToy t;
  t.a = 0.5;
  const auto model = test::scalar_model(t);
  const auto r = verify_stability(model, test::single_node(1), scalar_gain(0, 0));
  EXPECT_EQ(r.outcome.status, SolveStatus::Feasible);
  ASSERT_TRUE(r.certificate.has_value());
  EXPECT_GT(linalg::lambda_min(r.certificate->P1[0]), 0.0);
}

TEST(Conditions, ScalarToyUnstable) {
  test::ScalarToy t;
  t.a = 1.5;
  const auto model = test::scalar_model(t);
  EXPECT_EQ(verify_stability(model, test::single_node(1), scalar_gain(0, 0)).outcome.status, SolveStatus::Infeasible);
  t.d1 = 0.1;
  t.e = 1.0;
  const auto noisy = test::scalar_model(t);
  EXPECT_FALSE(verify_gains(noisy, test::single_node(1), scalar_gain(0, 0), 1e3).feasible());
}

TEST(Conditions, KnownMaskMatchesKnownAssembly) {
  const auto f = test::fixture();
  const auto k = EstimatorGains::zeros(f.model, f.protocol);
  const auto known = assemble_analysis_known(f.model, f.protocol, k);
  const auto partial = assemble_analysis_partial(f.model, f.protocol, k);
  ASSERT_EQ(known.problem.constraints().size(), partial.problem.constraints().size());
  for (std::size_t c = 0; c < known.problem.constraints().size(); ++c) {
    const auto& a = known.problem.constraints()[c];
    const auto& b = partial.problem.constraints()[c];
    EXPECT_EQ(a.constant, b.constant);
    ASSERT_EQ(a.coefficients.size(), b.coefficients.size());
    for (const auto& [coord, m] : a.coefficients) EXPECT_EQ(m, b.coefficients.at(coord));
  }
  EXPECT_EQ(count_prefix(known.problem, "stability"), 8u);
}

TEST(Conditions, KnownAssemblyRequiresFullRows) {
  auto f = test::fixture();
  f.model.transitions = partial_mask();
  EXPECT_THROW(assemble_analysis_known(f.model, f.protocol, EstimatorGains::zeros(f.model, f.protocol)), Error);
}

TEST(Conditions, FullyUnknownMaskGivesOneConstraintPerPair) {
  auto f = test::fixture();
  f.model.transitions = TransitionSpec(4);
  const auto ac = assemble_analysis_partial(f.model, f.protocol, EstimatorGains::zeros(f.model, f.protocol));
  EXPECT_EQ(count_prefix(ac.problem, "stability"), 4u * 2u * 4u);
  EXPECT_EQ(count_prefix(ac.problem, "stability i=2 o=1 unknown"), 4u);
}

TEST(Conditions, PartialMaskFamilies) {
  auto f = test::fixture();
  f.model.transitions = partial_mask();
  const auto k = EstimatorGains::zeros(f.model, f.protocol);
  const auto vertex = assemble_analysis_partial(f.model, f.protocol, k);
  // Rows 1, 3, 4 have one known family plus two unknowns, row 2 has one known plus three.
  EXPECT_EQ(count_prefix(vertex.problem, "stability"), 2u * (3u + 4u + 3u + 3u));
  ConditionOptions bound;
  bound.partial_mode = PartialMode::PooledBound;
  const auto pooled = assemble_analysis_partial(f.model, f.protocol, k, bound);
  EXPECT_EQ(count_prefix(pooled.problem, "stability"), 8u);
}

TEST(Conditions, PerformanceLimits) {
  test::ScalarToy t;
  t.a = 0.5;
  t.e = 1.0;
  t.d1 = 0.1;
  t.d2 = 0.1;
  const auto model = test::scalar_model(t);
  const auto proto = test::single_node(1);
  const auto r = verify_gains(model, proto, scalar_gain(0.25, 1.0), 100.0);
  EXPECT_TRUE(r.feasible());
  ASSERT_TRUE(r.certificate && r.certificate->gamma);
  EXPECT_EQ(*r.certificate->gamma, 100.0);
  EXPECT_FALSE(verify_gains(model, proto, scalar_gain(0.25, 1.0), 0.05).feasible());
  EXPECT_THROW(verify_gains(model, proto, scalar_gain(0.25, 1.0), 0.0), Error);
}

TEST(Conditions, ZeroGainOnStableScalarPlant) {
  test::ScalarToy t;
  t.a = 0.5;
  t.e = 1.0;
  t.d1 = 0.1;
  const auto model = test::scalar_model(t);
  EXPECT_TRUE(verify_gains(model, test::single_node(1), scalar_gain(0, 0), 1e3).feasible());
}

TEST(Conditions, ZeroGainOnFixtureFailsBecauseHeldOutputsNeverContract) {
  // Every A(i) is Schur stable, but with K = 0 the held coordinate of the memory error keeps
  // eigenvalue 1 for each (mode, node) pair, so no strict decrease is possible.
  const auto f = test::fixture();
  const auto k = EstimatorGains::zeros(f.model, f.protocol);
  for (const auto& m : f.model.modes) EXPECT_LT(linalg::spectral_radius(m.A), 1.0);
  const auto sys = build_closed_loop(f.model, f.protocol, k);
  EXPECT_NEAR(linalg::spectral_radius(sys.blocks.at(0, 0).A_tilde), 1.0, 1e-12);
  EXPECT_FALSE(verify_gains(f.model, f.protocol, k, 1e3).feasible());
}

TEST(Conditions, CertificateReplay) {
  test::ScalarToy t;
  t.a = 0.5;
  const auto model = test::scalar_model(t);
  const auto proto = test::single_node(1);
  const auto k = scalar_gain(0, 0);
  const auto r = verify_stability(model, proto, k);
  ASSERT_TRUE(r.certificate);
  const auto ac = assemble_analysis_partial(model, proto, k);
  EXPECT_LE(certificate_residual(ac, *r.certificate), 0.0);
  auto scaled = *r.certificate;
  scaled.P1[0] *= -1.0;
  EXPECT_GT(certificate_residual(ac, scaled), 0.0);
  auto wrong = *r.certificate;
  wrong.P1.push_back(wrong.P1[0]);
  EXPECT_THROW(certificate_residual(ac, wrong), Error);
}

TEST(Conditions, PartialMaskGainsAlsoPassFullyKnown) {
  auto f = test::fixture();
  auto masked = f.model;
  masked.transitions = partial_mask();
  const auto syn = ccl_synthesize(masked, f.protocol, 1.0);
  ASSERT_EQ(syn.status, CclStatus::Converged);
  EXPECT_TRUE(verify_stability(masked, f.protocol, syn.gains).feasible());
  EXPECT_TRUE(verify_stability(f.model, f.protocol, syn.gains).feasible());
}
