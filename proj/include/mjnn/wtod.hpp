#pragma once

// Weighted try-once-discard scheduling: at every step exactly one sensor node
// (the one whose output moved furthest, in its own weighted norm, from the
// value it last transmitted) gets the channel.

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "mjnn/error.hpp"
#include "mjnn/linalg.hpp"

namespace mjnn {

/// Output coordinates owned by each sensor node, in order.
class NodePartition {
 public:
  NodePartition() = default;
  explicit NodePartition(std::vector<Eigen::Index> dims) : dims_(std::move(dims)) {
    for (auto d : dims_) {
      if (d < 1) throw Error(ErrorKind::DimensionMismatch, "every sensor node needs at least one output");
    }
  }

  static NodePartition single(Eigen::Index m) { return NodePartition({m}); }
  static NodePartition scalar_nodes(Eigen::Index m) {
    return NodePartition(std::vector<Eigen::Index>(static_cast<std::size_t>(m), 1));
  }

  [[nodiscard]] std::size_t nodes() const { return dims_.size(); }
  [[nodiscard]] const std::vector<Eigen::Index>& dims() const { return dims_; }
  [[nodiscard]] Eigen::Index dim(std::size_t node) const { return dims_.at(node); }
  [[nodiscard]] Eigen::Index total() const { return std::accumulate(dims_.begin(), dims_.end(), Eigen::Index{0}); }
  [[nodiscard]] Eigen::Index offset(std::size_t node) const {
    if (node >= dims_.size()) {
      throw Error(ErrorKind::IndexOutOfRange, "node " + std::to_string(node + 1) + " out of range");
    }
    return std::accumulate(dims_.begin(), dims_.begin() + static_cast<std::ptrdiff_t>(node), Eigen::Index{0});
  }

 private:
  std::vector<Eigen::Index> dims_;
};

/// Positive definite weight per node.
struct WtodWeights {
  std::vector<Matrix> Q;

  static WtodWeights identity(const NodePartition& partition) {
    WtodWeights w;
    for (auto d : partition.dims()) w.Q.push_back(linalg::eye(d));
    return w;
  }

  /// Block diagonal of all node weights.
  [[nodiscard]] Matrix stacked() const {
    Eigen::Index total = 0;
    for (const auto& q : Q) total += q.rows();
    Matrix out = Matrix::Zero(total, total);
    Eigen::Index off = 0;
    for (const auto& q : Q) {
      out.block(off, off, q.rows(), q.cols()) = q;
      off += q.rows();
    }
    return out;
  }
};

struct Protocol {
  NodePartition partition;
  WtodWeights weights;

  [[nodiscard]] std::size_t nodes() const { return partition.nodes(); }
};

/// Last transmitted output vector; starts at zero.
struct SchedulerState {
  Vector y_bar;

  static SchedulerState initial(Eigen::Index m) { return {Vector::Zero(m)}; }
};

/// 0/1 diagonal selector of the coordinates owned by `node`.
inline Matrix selector_matrix(const NodePartition& partition, std::size_t node) {
  const Eigen::Index m = partition.total();
  const Eigen::Index off = partition.offset(node);
  Matrix phi = Matrix::Zero(m, m);
  phi.block(off, off, partition.dim(node), partition.dim(node)).setIdentity();
  return phi;
}

/// Validates a protocol against an output dimension. Weights must be symmetric
/// positive definite and, stacked, commute with every selector.
inline void validate_protocol(const Protocol& protocol, Eigen::Index m) {
  const auto& part = protocol.partition;
  if (part.nodes() == 0 || part.total() != m) {
    throw Error(ErrorKind::DimensionMismatch,
                "partition covers " + std::to_string(part.total()) + " outputs, model has " + std::to_string(m));
  }
  if (protocol.weights.Q.size() != part.nodes()) {
    throw Error(ErrorKind::DimensionMismatch, "one weight matrix per node is required");
  }
  for (std::size_t k = 0; k < part.nodes(); ++k) {
    const Matrix& q = protocol.weights.Q[k];
    if (q.rows() != part.dim(k) || q.cols() != part.dim(k)) {
      throw Error(ErrorKind::DimensionMismatch, "weight of node " + std::to_string(k + 1) + " has wrong size");
    }
    if (!linalg::is_symmetric_exact(q) || linalg::lambda_min(q) <= 0.0) {
      throw Error(ErrorKind::DimensionMismatch,
                  "weight of node " + std::to_string(k + 1) + " is not symmetric positive definite");
    }
  }
  const Matrix qbar = protocol.weights.stacked();
  for (std::size_t k = 0; k < part.nodes(); ++k) {
    const Matrix phi = selector_matrix(part, k);
    if ((qbar * phi - phi * qbar).cwiseAbs().maxCoeff() != 0.0) {
      throw Error(ErrorKind::DimensionMismatch, "stacked weight does not commute with selector");
    }
  }
}

/// Weighted squared deviation of node `node`: ||y_m - ybar_m||^2_{Q_m}.
inline double node_deviation(const SchedulerState& state, const Vector& y, const WtodWeights& weights,
                             const NodePartition& partition, std::size_t node) {
  const Eigen::Index off = partition.offset(node);
  const Eigen::Index d = partition.dim(node);
  const Vector dev = y.segment(off, d) - state.y_bar.segment(off, d);
  return dev.dot(weights.Q[node] * dev);
}

/// Index of the node with the largest weighted deviation; ties go to the smallest index.
inline std::size_t select_node(const SchedulerState& state, const Vector& y, const WtodWeights& weights,
                               const NodePartition& partition) {
  if (y.size() != partition.total() || state.y_bar.size() != partition.total()) {
    throw Error(ErrorKind::DimensionMismatch, "select_node: output size differs from partition");
  }
  std::size_t best = 0;
  double best_value = node_deviation(state, y, weights, partition, 0);
  for (std::size_t k = 1; k < partition.nodes(); ++k) {
    const double v = node_deviation(state, y, weights, partition, k);
    if (v > best_value) {
      best_value = v;
      best = k;
    }
  }
  return best;
}

/// ybar(k) = Phi_o y(k) + (I - Phi_o) ybar(k-1).
inline SchedulerState update_transmitted(const SchedulerState& state, const Vector& y, std::size_t node,
                                         const NodePartition& partition) {
  SchedulerState next = state;
  const Eigen::Index off = partition.offset(node);
  next.y_bar.segment(off, partition.dim(node)) = y.segment(off, partition.dim(node));
  return next;
}

}  // namespace mjnn
