#pragma once

// Protocol-augmented plant, estimator error system and the stacked closed loop.
//
// The plant state is extended with the scheduler memory, xbar = [x; ybar(k-1)],
// so the node choice enters only through the selector Phi. Stacking the plant
// with the estimation error e = xbar - xhat gives eta = [xbar; e] of size
// 2(n+m), driven by W = [wbar; wbar] with wbar = [w; v].

#include <cstddef>
#include <string>
#include <vector>

#include "mjnn/error.hpp"
#include "mjnn/linalg.hpp"
#include "mjnn/model.hpp"
#include "mjnn/wtod.hpp"

namespace mjnn {

struct AugmentedPlant {
  Matrix A_bar;   // (n+m) x (n+m)
  Matrix B_bar;   // (n+m) x 2n
  Matrix C_bar;   // (n+m) x 2n
  Matrix D1_bar;  // (n+m) x 2r
  Matrix E_bar;   // m x (n+m)
  Matrix D2_bar;  // m x 2r
  Matrix M_bar;   // q x (n+m)
};

inline AugmentedPlant build_augmented(const MjnnModel& model, const NodePartition& partition, std::size_t mode,
                                      std::size_t node) {
  if (mode >= model.mode_count()) {
    throw Error(ErrorKind::IndexOutOfRange, "mode " + std::to_string(mode + 1) + " out of range");
  }
  if (node >= partition.nodes()) {
    throw Error(ErrorKind::IndexOutOfRange, "node " + std::to_string(node + 1) + " out of range");
  }
  const auto d = model.dims();
  if (partition.total() != d.m) throw Error(ErrorKind::DimensionMismatch, "partition does not cover the output");
  const auto& mm = model.modes[mode];
  const Matrix phi = selector_matrix(partition, node);
  const Matrix hold = linalg::eye(d.m) - phi;
  const auto na = d.augmented();

  AugmentedPlant p;
  p.A_bar = Matrix::Zero(na, na);
  p.A_bar.topLeftCorner(d.n, d.n) = mm.A;
  p.A_bar.bottomLeftCorner(d.m, d.n) = phi * mm.E;
  p.A_bar.bottomRightCorner(d.m, d.m) = hold;

  p.B_bar = Matrix::Zero(na, 2 * d.n);
  p.B_bar.topLeftCorner(d.n, d.n) = mm.B;
  p.C_bar = Matrix::Zero(na, 2 * d.n);
  p.C_bar.topLeftCorner(d.n, d.n) = mm.C;

  p.D1_bar = Matrix::Zero(na, 2 * d.r);
  p.D1_bar.topLeftCorner(d.n, d.r) = mm.D1;
  p.D1_bar.bottomRightCorner(d.m, d.r) = phi * mm.D2;

  p.E_bar = Matrix::Zero(d.m, na);
  p.E_bar.leftCols(d.n) = phi * mm.E;
  p.E_bar.rightCols(d.m) = hold;

  p.D2_bar = Matrix::Zero(d.m, 2 * d.r);
  p.D2_bar.rightCols(d.r) = phi * mm.D2;

  p.M_bar = Matrix::Zero(d.q, na);
  p.M_bar.leftCols(d.n) = mm.M;
  return p;
}

/// fbar = [f(x); f(x)] where x is the plant slice of xbar.
inline Vector augmented_activation(const MjnnModel& model, const Vector& x_bar) {
  const auto n = model.dims().n;
  const Vector fx = model.activation.apply(x_bar.head(n));
  Vector out(2 * n);
  out << fx, fx;
  return out;
}

/// [fbar(xbar); fbar(xbar) - fbar(xhat)].
inline Vector stacked_activation(const MjnnModel& model, const Vector& x_bar, const Vector& x_hat) {
  const Vector fb = augmented_activation(model, x_bar);
  Vector out(2 * fb.size());
  out << fb, fb - augmented_activation(model, x_hat);
  return out;
}

/// Row-major grid over (mode, node).
template <typename T>
class ModeNodeGrid {
 public:
  ModeNodeGrid() = default;
  ModeNodeGrid(std::size_t modes, std::size_t nodes, const T& init = T{})
      : modes_(modes), nodes_(nodes), cells_(modes * nodes, init) {}

  [[nodiscard]] std::size_t modes() const { return modes_; }
  [[nodiscard]] std::size_t nodes() const { return nodes_; }
  [[nodiscard]] T& at(std::size_t mode, std::size_t node) { return cells_.at(index(mode, node)); }
  [[nodiscard]] const T& at(std::size_t mode, std::size_t node) const { return cells_.at(index(mode, node)); }

 private:
  [[nodiscard]] std::size_t index(std::size_t mode, std::size_t node) const {
    if (mode >= modes_ || node >= nodes_) {
      throw Error(ErrorKind::IndexOutOfRange, "grid index (" + std::to_string(mode + 1) + "," +
                                                  std::to_string(node + 1) + ") out of range");
    }
    return mode * nodes_ + node;
  }

  std::size_t modes_ = 0;
  std::size_t nodes_ = 0;
  std::vector<T> cells_;
};

using AugmentedGrid = ModeNodeGrid<AugmentedPlant>;

inline AugmentedGrid build_augmented_grid(const MjnnModel& model, const NodePartition& partition) {
  AugmentedGrid grid(model.mode_count(), partition.nodes());
  for (std::size_t i = 0; i < grid.modes(); ++i) {
    for (std::size_t o = 0; o < grid.nodes(); ++o) grid.at(i, o) = build_augmented(model, partition, i, o);
  }
  return grid;
}

/// One (n+m) x m gain per (mode, node).
class EstimatorGains {
 public:
  EstimatorGains() = default;
  EstimatorGains(std::size_t modes, std::size_t nodes, Eigen::Index rows, Eigen::Index cols)
      : grid_(modes, nodes, Matrix::Zero(rows, cols)) {}

  static EstimatorGains zeros(const MjnnModel& model, const Protocol& protocol) {
    const auto d = model.dims();
    return {model.mode_count(), protocol.nodes(), d.augmented(), d.m};
  }

  [[nodiscard]] std::size_t modes() const { return grid_.modes(); }
  [[nodiscard]] std::size_t nodes() const { return grid_.nodes(); }
  [[nodiscard]] Matrix& at(std::size_t mode, std::size_t node) { return grid_.at(mode, node); }
  [[nodiscard]] const Matrix& at(std::size_t mode, std::size_t node) const { return grid_.at(mode, node); }

  [[nodiscard]] bool congruent_with(std::size_t modes, std::size_t nodes, Eigen::Index rows, Eigen::Index cols) const {
    if (grid_.modes() != modes || grid_.nodes() != nodes) return false;
    for (std::size_t i = 0; i < modes; ++i) {
      for (std::size_t o = 0; o < nodes; ++o) {
        const auto& k = grid_.at(i, o);
        if (k.rows() != rows || k.cols() != cols || !k.allFinite()) return false;
      }
    }
    return true;
  }

 private:
  ModeNodeGrid<Matrix> grid_;
};

inline void require_congruent(const EstimatorGains& gains, const MjnnModel& model, const Protocol& protocol) {
  const auto d = model.dims();
  if (!gains.congruent_with(model.mode_count(), protocol.nodes(), d.augmented(), d.m)) {
    throw Error(ErrorKind::GridMismatch, "gain grid must hold one finite (n+m) x m matrix per (mode, node)");
  }
}

struct ClosedLoopBlock {
  Matrix A_tilde;  // diag(Abar, Abar - K Ebar)
  Matrix B_tilde;  // diag(Bbar, Bbar)
  Matrix C_tilde;  // diag(Cbar, Cbar)
  Matrix D_tilde;  // diag(D1bar, D1bar - K D2bar)
  Matrix M_tilde;  // [0, Mbar]
};

/// Stacked dynamics eta(k+1) = A~ eta + B~ f~ + C~ f~_tau + D~ W, z~ = M~ eta.
struct ClosedLoopSystem {
  Dimensions dims;
  ModeNodeGrid<ClosedLoopBlock> blocks;

  [[nodiscard]] Eigen::Index eta_size() const { return dims.stacked(); }
  [[nodiscard]] Eigen::Index nonlinearity_size() const { return 4 * dims.n; }
  [[nodiscard]] Eigen::Index disturbance_size() const { return 4 * dims.r; }
};

inline ClosedLoopBlock close_loop(const AugmentedPlant& p, const Matrix& K) {
  ClosedLoopBlock b;
  const Matrix err_a = p.A_bar - K * p.E_bar;
  const Matrix err_d = p.D1_bar - K * p.D2_bar;
  b.A_tilde = linalg::block_diag(p.A_bar, err_a);
  b.B_tilde = linalg::block_diag(p.B_bar, p.B_bar);
  b.C_tilde = linalg::block_diag(p.C_bar, p.C_bar);
  b.D_tilde = linalg::block_diag(p.D1_bar, err_d);
  b.M_tilde = Matrix::Zero(p.M_bar.rows(), 2 * p.M_bar.cols());
  b.M_tilde.rightCols(p.M_bar.cols()) = p.M_bar;
  return b;
}

inline ClosedLoopSystem build_closed_loop(const AugmentedGrid& aug, const EstimatorGains& gains, Dimensions dims) {
  if (aug.modes() != gains.modes() || aug.nodes() != gains.nodes()) {
    throw Error(ErrorKind::GridMismatch, "gain grid and augmented grid differ in shape");
  }
  ClosedLoopSystem sys{dims, ModeNodeGrid<ClosedLoopBlock>(aug.modes(), aug.nodes())};
  for (std::size_t i = 0; i < aug.modes(); ++i) {
    for (std::size_t o = 0; o < aug.nodes(); ++o) {
      const auto& K = gains.at(i, o);
      if (K.rows() != dims.augmented() || K.cols() != dims.m) {
        throw Error(ErrorKind::GridMismatch, "gain (" + std::to_string(i + 1) + "," + std::to_string(o + 1) +
                                                 ") must be (n+m) x m");
      }
      sys.blocks.at(i, o) = close_loop(aug.at(i, o), K);
    }
  }
  return sys;
}

inline ClosedLoopSystem build_closed_loop(const MjnnModel& model, const Protocol& protocol,
                                          const EstimatorGains& gains) {
  return build_closed_loop(build_augmented_grid(model, protocol.partition), gains, model.dims());
}

/// Map eta -> y(k) - ybar(k-1) in the absence of noise: [E, -I, 0].
inline Matrix innovation_map(const MjnnModel& model, std::size_t mode) {
  const auto d = model.dims();
  Matrix out = Matrix::Zero(d.m, d.stacked());
  out.leftCols(d.n) = model.modes.at(mode).E;
  out.block(0, d.n, d.m, d.m) = -linalg::eye(d.m);
  return out;
}

/// Map W -> noise part of y(k) - ybar(k-1): picks v from the second copy of wbar.
inline Matrix innovation_noise_map(const MjnnModel& model, std::size_t mode) {
  const auto d = model.dims();
  Matrix out = Matrix::Zero(d.m, 4 * d.r);
  out.rightCols(d.r) = model.modes.at(mode).D2;
  return out;
}

}  // namespace mjnn
