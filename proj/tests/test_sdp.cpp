#include <gtest/gtest.h>

#include <sstream>

#include "mjnn/sdp.hpp"

using namespace mjnn;

namespace {

LmiProblem scalar_lyapunov(double a, double scale = 1.0) {
  LmiProblem p;
  const double eps = 1e-6;
  auto P = p.add_scalar("P");
  BlockBuilder lyap(p, {1});
  lyap.scalar_term(0, 0, P, Matrix::Constant(1, 1, scale * (a * a - 1.0)));
  p.add_constraint(std::move(lyap).build("decrease", Sense::NegativeDefinite, eps));
  BlockBuilder pos(p, {1});
  pos.scalar_term(0, 0, P, Matrix::Constant(1, 1, scale));
  p.add_constraint(std::move(pos).build("positive", Sense::PositiveDefinite, eps));
  return p;
}

}  // namespace

TEST(Sdp, ScalarLyapunovStable) {
  const auto out = solve_feasibility(scalar_lyapunov(0.5));
  EXPECT_EQ(out.status, SolveStatus::Feasible);
  EXPECT_LE(out.residual, 0.0);
  EXPECT_GT(out.value("P")(0, 0), 0.0);
}

TEST(Sdp, ScalarLyapunovUnstable) {
  const auto out = solve_feasibility(scalar_lyapunov(1.5));
  EXPECT_EQ(out.status, SolveStatus::Infeasible);
}

TEST(Sdp, ScaleRobustness) {
  EXPECT_EQ(solve_feasibility(scalar_lyapunov(0.5, 10.0)).status, SolveStatus::Feasible);
  EXPECT_EQ(solve_feasibility(scalar_lyapunov(1.5, 10.0)).status, SolveStatus::Infeasible);
}

TEST(Sdp, EmptyProblemIsFeasible) {
  LmiProblem p;
  p.add_symmetric("P", 2);
  const auto out = solve_feasibility(p);
  EXPECT_EQ(out.status, SolveStatus::Feasible);
  EXPECT_EQ(out.value("P"), Matrix::Zero(2, 2));
}

TEST(Sdp, MinimizeTraceAboveIdentity) {
  LmiProblem p;
  auto P = p.add_symmetric("P", 2);
  BlockBuilder b(p, {2});
  b.term(0, 0, P).constant(0, 0, -linalg::eye(2));
  p.add_constraint(std::move(b).build("P >= I", Sense::PositiveDefinite, 0.0));
  const auto out = minimize_linear(p, {p.trace_weights(P, linalg::eye(2)), 0.0}, 1e-8);
  ASSERT_EQ(out.status, SolveStatus::Feasible);
  EXPECT_NEAR(out.objective, 2.0, 1e-6);
  EXPECT_NEAR((out.value("P") - linalg::eye(2)).norm(), 0.0, 1e-5);
}

TEST(Sdp, MinimizeHalfLine) {
  LmiProblem p;
  auto v = p.add_scalar("p");
  BlockBuilder b(p, {1});
  b.scalar_term(0, 0, v, linalg::eye(1)).constant(0, 0, Matrix::Constant(1, 1, -3.0));
  p.add_constraint(std::move(b).build("p >= 3", Sense::PositiveDefinite, 0.0));
  Vector w(1);
  w << 1.0;
  const auto out = minimize_linear(p, {w, 0.0}, 1e-8);
  ASSERT_EQ(out.status, SolveStatus::Feasible);
  EXPECT_NEAR(out.objective, 3.0, 1e-6);
}

TEST(Sdp, UnboundedObjectiveThrows) {
  LmiProblem p;
  auto v = p.add_scalar("p");
  BlockBuilder b(p, {1});
  b.scalar_term(0, 0, v, linalg::eye(1)).constant(0, 0, Matrix::Constant(1, 1, -3.0));
  p.add_constraint(std::move(b).build("p >= 3", Sense::PositiveDefinite, 0.0));
  Vector w(1);
  w << -1.0;
  try {
    (void)minimize_linear(p, {w, 0.0});
    FAIL() << "expected Unbounded";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Unbounded);
  }
}

TEST(Sdp, MatrixLyapunovAndDeterminism) {
  Matrix A(2, 2);
  A << 0.5, 0.3, -0.2, 0.7;
  LmiProblem p;
  auto P = p.add_symmetric("P", 2, 1e-6);
  BlockBuilder b(p, {2});
  b.term(0, 0, A.transpose(), P, A).term(0, 0, P, -1.0);
  p.add_constraint(std::move(b).build("AtPA - P", Sense::NegativeDefinite, 1e-6));
  const auto first = solve_feasibility(p);
  const auto second = solve_feasibility(p);
  ASSERT_EQ(first.status, SolveStatus::Feasible);
  EXPECT_EQ(second.status, first.status);
  EXPECT_EQ((first.y - second.y).norm(), 0.0);
  const Matrix Pv = first.value("P");
  EXPECT_TRUE(linalg::is_symmetric_exact(Pv));
  EXPECT_LT(linalg::lambda_max(A.transpose() * Pv * A - Pv), 0.0);
}

TEST(Sdp, CouplingsRejected) {
  LmiProblem p;
  auto P = p.add_symmetric("P", 1);
  auto X = p.add_symmetric("X", 1);
  p.add_inverse_coupling(P, X);
  try {
    (void)solve_feasibility(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MalformedProblem);
  }
  EXPECT_EQ(solve_feasibility(p.relaxed()).status, SolveStatus::Feasible);
}

TEST(Sdp, IterationLogIsCsv) {
  std::ostringstream log;
  SolverOptions opt;
  opt.log = &log;
  (void)solve_feasibility(scalar_lyapunov(1.5), 0.0, opt);
  EXPECT_FALSE(log.str().empty());
  EXPECT_EQ(log.str().rfind("0,", 0), 0u);
}
