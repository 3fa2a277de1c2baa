#include <gtest/gtest.h>

#include <random>

#include "mjnn/augmentation.hpp"
#include "mjnn/simulation.hpp"
#include "toy.hpp"

using namespace mjnn;

TEST(Augmentation, FixtureModeOneBlocks) {
  const auto f = test::fixture();
  const auto p = build_augmented(f.model, f.protocol.partition, 0, 0);
  ASSERT_EQ(p.A_bar.rows(), 4);
  ASSERT_EQ(p.A_bar.cols(), 4);
  Matrix a(2, 2);
  a << 0.27, 0.0, 0.0, 0.63;
  EXPECT_EQ(p.A_bar.topLeftCorner(2, 2), a);
  EXPECT_EQ(p.A_bar.topRightCorner(2, 2), Matrix::Zero(2, 2));
  const Matrix phi = selector_matrix(f.protocol.partition, 0);
  EXPECT_EQ(p.A_bar.bottomLeftCorner(2, 2), phi * f.model.modes[0].E);
  EXPECT_EQ(p.A_bar.bottomRightCorner(2, 2), linalg::eye(2) - phi);
  EXPECT_EQ(p.M_bar.leftCols(2), f.model.modes[0].M);
  EXPECT_THROW(build_augmented(f.model, f.protocol.partition, 4, 0), Error);
  EXPECT_THROW(build_augmented(f.model, f.protocol.partition, 0, 2), Error);
}

TEST(Augmentation, ZeroMeasurement) {
  auto f = test::fixture();
  for (auto& m : f.model.modes) m.E.setZero();
  const auto p = build_augmented(f.model, f.protocol.partition, 1, 1);
  const Matrix phi = selector_matrix(f.protocol.partition, 1);
  EXPECT_EQ(p.A_bar.bottomLeftCorner(2, 2), Matrix::Zero(2, 2));
  Matrix e_bar = Matrix::Zero(2, 4);
  e_bar.rightCols(2) = linalg::eye(2) - phi;
  EXPECT_EQ(p.E_bar, e_bar);
}

TEST(Augmentation, SingleNodeHoldsNothing) {
  const auto f = test::fixture();
  const auto p = build_augmented(f.model, NodePartition::single(2), 2, 0);
  Matrix expected = Matrix::Zero(4, 4);
  expected.topLeftCorner(2, 2) = f.model.modes[2].A;
  expected.bottomLeftCorner(2, 2) = f.model.modes[2].E;
  EXPECT_EQ(p.A_bar, expected);
}

TEST(Augmentation, Activations) {
  const auto f = test::fixture();
  EXPECT_EQ(augmented_activation(f.model, Vector::Zero(4)), Vector::Zero(4));
  Vector a(4), b(4);
  a << 1.0, 2.0, 3.0, 4.0;
  b << 1.0, 2.0, -7.0, 0.5;
  EXPECT_EQ(augmented_activation(f.model, a), augmented_activation(f.model, b));

  auto lin = f.model;
  lin.activation = Activation::custom([](const Vector& x) { return x; }, "identity");
  Vector x(4);
  x << 1.0, 2.0, 0.0, 0.0;
  Vector expected(4);
  expected << 1.0, 2.0, 1.0, 2.0;
  EXPECT_EQ(augmented_activation(lin, x), expected);
  const Vector st = stacked_activation(lin, x, Vector::Zero(4));
  EXPECT_EQ(st.head(4), expected);
  EXPECT_EQ(st.tail(4), expected);
}

TEST(Augmentation, ZeroGainErrorDynamics) {
  const auto f = test::fixture();
  const auto sys = build_closed_loop(f.model, f.protocol, EstimatorGains::zeros(f.model, f.protocol));
  const auto aug = build_augmented_grid(f.model, f.protocol.partition);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t o = 0; o < 2; ++o) {
      const auto& b = sys.blocks.at(i, o);
      EXPECT_EQ(b.A_tilde.bottomRightCorner(4, 4), aug.at(i, o).A_bar);
      EXPECT_EQ(b.A_tilde.topLeftCorner(4, 4), aug.at(i, o).A_bar);
      EXPECT_EQ(b.A_tilde.topRightCorner(4, 4), Matrix::Zero(4, 4));
    }
  }
}

TEST(Augmentation, ReferenceGainErrorBlock) {
  const auto f = test::fixture();
  const auto k = test::reference_gains();
  EXPECT_NEAR(k.at(0, 0)(0, 1), 0.3587e-4, 1e-18);
  const auto sys = build_closed_loop(f.model, f.protocol, k);
  const auto p = build_augmented(f.model, f.protocol.partition, 0, 0);
  const Matrix expected = p.A_bar - k.at(0, 0) * p.E_bar;
  EXPECT_LE((sys.blocks.at(0, 0).A_tilde.bottomRightCorner(4, 4) - expected).cwiseAbs().maxCoeff(), 0.0);
  const Matrix d_expected = p.D1_bar - k.at(0, 0) * p.D2_bar;
  EXPECT_LE((sys.blocks.at(0, 0).D_tilde.bottomRightCorner(4, 4) - d_expected).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Augmentation, ScalarSpectralRadius) {
  Matrix a = Matrix::Constant(1, 1, 0.5);
  Matrix e = Matrix::Constant(1, 1, 1.0);
  Matrix k = Matrix::Constant(1, 1, 0.25);
  EXPECT_NEAR(linalg::spectral_radius(a - k * e), 0.25, 1e-15);
}

TEST(Augmentation, GainGridMustBeCongruent) {
  const auto f = test::fixture();
  EstimatorGains wrong(4, 2, 4, 3);
  EXPECT_THROW(require_congruent(wrong, f.model, f.protocol), Error);
  EstimatorGains few(3, 2, 4, 2);
  EXPECT_THROW(build_closed_loop(f.model, f.protocol, few), Error);
  auto nan = EstimatorGains::zeros(f.model, f.protocol);
  nan.at(1, 1)(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(require_congruent(nan, f.model, f.protocol), Error);
}

TEST(Augmentation, InnovationMaps) {
  const auto f = test::fixture();
  const Matrix h = innovation_map(f.model, 1);
  EXPECT_EQ(h.leftCols(2), f.model.modes[1].E);
  EXPECT_EQ(h.block(0, 2, 2, 2), -linalg::eye(2));
  EXPECT_EQ(h.rightCols(4), Matrix::Zero(2, 4));
  const Matrix dh = innovation_noise_map(f.model, 1);
  EXPECT_EQ(dh.rightCols(2), f.model.modes[1].D2);
  EXPECT_EQ(dh.leftCols(6), Matrix::Zero(2, 6));
}

TEST(Augmentation, StackedMatchesSeparateStepping) {
  std::mt19937_64 gen(29);
  std::normal_distribution<double> g;
  auto f = test::fixture();
  for (int model_draw = 0; model_draw < 5; ++model_draw) {
    for (auto& m : f.model.modes) {
      for (Matrix* mat : {&m.A, &m.B, &m.C, &m.D1, &m.D2, &m.E, &m.M}) {
        for (Eigen::Index r = 0; r < mat->rows(); ++r) {
          for (Eigen::Index c = 0; c < mat->cols(); ++c) (*mat)(r, c) = 0.3 * g(gen);
        }
      }
    }
    auto k = EstimatorGains::zeros(f.model, f.protocol);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t o = 0; o < 2; ++o) {
        for (Eigen::Index r = 0; r < 4; ++r) {
          for (Eigen::Index c = 0; c < 2; ++c) k.at(i, o)(r, c) = 0.2 * g(gen);
        }
      }
    }
    SimConfig cfg;
    cfg.horizon = 100;
    cfg.seed = static_cast<std::uint64_t>(model_draw);
    for (int h = 0; h < 4; ++h) cfg.initial_history.push_back(Vector::Constant(2, 1.0 + 0.1 * h));
    const auto comp = TransitionCompletion::uniform_fill(f.model.transitions);
    const auto tr = simulate(f.model, f.protocol, k, comp, DisturbanceSignal::decaying_sinusoid(), cfg);
    const auto sys = build_closed_loop(f.model, f.protocol, k);
    double worst = 0.0;
    for (std::size_t s = 0; s < 100; ++s) {
      const auto& st = tr.steps[s];
      const Vector next = stacked_step(f.model, sys, st.mode, st.node, st.eta,
                                       tr.eta_at(static_cast<long>(s) - st.delay), st.W);
      worst = std::max(worst, (next - tr.steps[s + 1].eta).cwiseAbs().maxCoeff());
    }
    EXPECT_LE(worst, 1e-10);
  }
}
