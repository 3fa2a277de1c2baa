#pragma once

// Structured linear matrix inequalities over symmetric, rectangular and scalar
// decision variables.
//
// Every variable is flattened into scalar coordinates (upper triangle row by
// row for symmetric variables, row-major for rectangular ones). A constraint is
// F(y) = F0 + sum_c y_c F_c of fixed size, assembled block by block; each
// coordinate matrix F_c is exactly symmetric by construction.

#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mjnn/error.hpp"
#include "mjnn/linalg.hpp"
#include "mjnn/model.hpp"

namespace mjnn {

enum class VarKind { Scalar, Symmetric, Matrix };

struct DecisionVar {
  std::string name;
  VarKind kind = VarKind::Scalar;
  Eigen::Index rows = 1;
  Eigen::Index cols = 1;
  std::optional<double> lower_bound;  // y >= b for scalars, V >= b I for symmetric
  std::size_t offset = 0;             // first coordinate

  [[nodiscard]] std::size_t coordinate_count() const {
    switch (kind) {
      case VarKind::Scalar: return 1;
      case VarKind::Symmetric: return static_cast<std::size_t>(rows * (rows + 1) / 2);
      case VarKind::Matrix: return static_cast<std::size_t>(rows * cols);
    }
    return 0;
  }
};

/// Handle to a variable of an LmiProblem.
struct VarRef {
  std::size_t id = static_cast<std::size_t>(-1);
  [[nodiscard]] bool valid() const { return id != static_cast<std::size_t>(-1); }
  friend bool operator==(const VarRef&, const VarRef&) = default;
};

/// F(y) <= -margin I  or  F(y) >= margin I.
enum class Sense { NegativeDefinite, PositiveDefinite };

struct SparseEntry {
  Eigen::Index row;
  Eigen::Index col;
  double value;
};

struct MatrixInequality {
  std::string label;
  Eigen::Index size = 0;
  Sense sense = Sense::NegativeDefinite;
  double margin = 0.0;
  Matrix constant;
  std::map<std::size_t, Matrix> coefficients;  // coordinate -> F_c

  [[nodiscard]] Matrix evaluate(const Vector& y) const {
    Matrix out = constant;
    for (const auto& [c, f] : coefficients) out += y(static_cast<Eigen::Index>(c)) * f;
    return out;
  }

  /// Largest eigenvalue of the violation: <= 0 means the constraint holds.
  [[nodiscard]] double violation(const Vector& y) const {
    const Matrix f = evaluate(y);
    if (sense == Sense::NegativeDefinite) return linalg::lambda_max(f) + margin;
    return margin - linalg::lambda_min(f);
  }
};

/// Linear functional over the coordinates plus a constant.
struct LinearObjective {
  Vector weights;
  double constant = 0.0;

  [[nodiscard]] double value(const Vector& y) const { return weights.dot(y) + constant; }
};

class LmiProblem {
 public:
  VarRef add_scalar(std::string name, std::optional<double> lower_bound = std::nullopt) {
    return add_var({std::move(name), VarKind::Scalar, 1, 1, lower_bound, 0});
  }
  VarRef add_symmetric(std::string name, Eigen::Index size, std::optional<double> lower_bound = std::nullopt) {
    return add_var({std::move(name), VarKind::Symmetric, size, size, lower_bound, 0});
  }
  VarRef add_matrix(std::string name, Eigen::Index rows, Eigen::Index cols) {
    return add_var({std::move(name), VarKind::Matrix, rows, cols, std::nullopt, 0});
  }

  [[nodiscard]] const DecisionVar& var(VarRef v) const {
    if (!v.valid() || v.id >= vars_.size()) throw Error(ErrorKind::MalformedProblem, "unknown variable handle");
    return vars_[v.id];
  }
  [[nodiscard]] const std::vector<DecisionVar>& vars() const { return vars_; }
  [[nodiscard]] std::optional<VarRef> find(const std::string& name) const {
    for (std::size_t k = 0; k < vars_.size(); ++k) {
      if (vars_[k].name == name) return VarRef{k};
    }
    return std::nullopt;
  }
  [[nodiscard]] std::size_t coordinate_count() const { return coords_; }

  void add_constraint(MatrixInequality c) {
    for (const auto& [coord, f] : c.coefficients) {
      if (coord >= coords_) throw Error(ErrorKind::MalformedProblem, c.label + ": undeclared coordinate");
      if (f.rows() != c.size || f.cols() != c.size) {
        throw Error(ErrorKind::MalformedProblem, c.label + ": coefficient size mismatch");
      }
    }
    if (c.constant.rows() != c.size || c.constant.cols() != c.size) {
      throw Error(ErrorKind::MalformedProblem, c.label + ": constant size mismatch");
    }
    constraints_.push_back(std::move(c));
  }
  [[nodiscard]] const std::vector<MatrixInequality>& constraints() const { return constraints_; }

  void set_objective(LinearObjective objective) { objective_ = std::move(objective); }
  void clear_objective() { objective_.reset(); }
  [[nodiscard]] const std::optional<LinearObjective>& objective() const { return objective_; }

  /// Registers (P, X) as a pair meant to satisfy P X = I.
  void add_inverse_coupling(VarRef p, VarRef x) { couplings_.emplace_back(p, x); }
  [[nodiscard]] const std::vector<std::pair<VarRef, VarRef>>& inverse_couplings() const { return couplings_; }
  /// Same problem with the couplings dropped (their convex relaxation is expected among the constraints).
  [[nodiscard]] LmiProblem relaxed() const {
    LmiProblem out = *this;
    out.couplings_.clear();
    return out;
  }

  /// Coordinate of entry (row, col) of a variable.
  [[nodiscard]] std::size_t coordinate(VarRef v, Eigen::Index row, Eigen::Index col) const {
    const auto& d = var(v);
    switch (d.kind) {
      case VarKind::Scalar: return d.offset;
      case VarKind::Matrix: return d.offset + static_cast<std::size_t>(row * d.cols + col);
      case VarKind::Symmetric: {
        const Eigen::Index p = std::min(row, col);
        const Eigen::Index q = std::max(row, col);
        // Upper triangle, row-major: rows 0..p-1 contribute n, n-1, ..., n-p+1 entries.
        return d.offset + static_cast<std::size_t>(p * d.rows - p * (p - 1) / 2 + (q - p));
      }
    }
    return 0;
  }

  [[nodiscard]] Matrix value(VarRef v, const Vector& y) const {
    const auto& d = var(v);
    Matrix out(d.rows, d.cols);
    for (Eigen::Index r = 0; r < d.rows; ++r) {
      for (Eigen::Index c = 0; c < d.cols; ++c) out(r, c) = y(static_cast<Eigen::Index>(coordinate(v, r, c)));
    }
    return out;
  }
  [[nodiscard]] double scalar_value(VarRef v, const Vector& y) const { return value(v, y)(0, 0); }

  /// Writes `value` into the coordinates of v (symmetrized for symmetric variables).
  void assign(VarRef v, const Matrix& value, Vector& y) const {
    const auto& d = var(v);
    if (value.rows() != d.rows || value.cols() != d.cols) {
      throw Error(ErrorKind::DimensionMismatch, "assign: wrong shape for " + d.name);
    }
    for (Eigen::Index r = 0; r < d.rows; ++r) {
      for (Eigen::Index c = 0; c < d.cols; ++c) {
        if (d.kind == VarKind::Symmetric && c < r) continue;
        const double v_rc = d.kind == VarKind::Symmetric ? 0.5 * (value(r, c) + value(c, r)) : value(r, c);
        y(static_cast<Eigen::Index>(coordinate(v, r, c))) = v_rc;
      }
    }
  }

  /// Weights w such that w.y = trace(W V) for a symmetric variable V.
  [[nodiscard]] Vector trace_weights(VarRef v, const Matrix& W) const {
    const auto& d = var(v);
    if (d.kind != VarKind::Symmetric || W.rows() != d.rows || W.cols() != d.cols) {
      throw Error(ErrorKind::MalformedProblem, "trace_weights needs a symmetric variable of matching size");
    }
    Vector w = Vector::Zero(static_cast<Eigen::Index>(coords_));
    for (Eigen::Index p = 0; p < d.rows; ++p) {
      for (Eigen::Index q = p; q < d.cols; ++q) {
        w(static_cast<Eigen::Index>(coordinate(v, p, q))) = p == q ? W(p, p) : W(p, q) + W(q, p);
      }
    }
    return w;
  }

  /// Variable list and per-constraint sparsity, for debugging.
  void dump(std::ostream& os) const {
    os << "variables (" << vars_.size() << ", " << coords_ << " coordinates)\n";
    for (const auto& d : vars_) {
      os << "  " << d.name << " ";
      switch (d.kind) {
        case VarKind::Scalar: os << "scalar"; break;
        case VarKind::Symmetric: os << "symmetric " << d.rows; break;
        case VarKind::Matrix: os << "matrix " << d.rows << "x" << d.cols; break;
      }
      if (d.lower_bound) os << " >= " << *d.lower_bound;
      os << "\n";
    }
    os << "constraints (" << constraints_.size() << ")\n";
    for (const auto& c : constraints_) {
      os << "  " << c.label << " size " << c.size << (c.sense == Sense::NegativeDefinite ? " <= -" : " >= ")
         << c.margin << " I, " << c.coefficients.size() << " coordinates\n";
      Matrix pattern = (c.constant.array() != 0.0).cast<double>().matrix();
      for (const auto& [coord, f] : c.coefficients) pattern += (f.array() != 0.0).cast<double>().matrix();
      for (Eigen::Index r = 0; r < c.size; ++r) {
        os << "    ";
        for (Eigen::Index k = 0; k < c.size; ++k) os << (pattern(r, k) != 0.0 ? '*' : '.');
        os << "\n";
      }
    }
  }

 private:
  VarRef add_var(DecisionVar d) {
    for (const auto& existing : vars_) {
      if (existing.name == d.name) throw Error(ErrorKind::MalformedProblem, "duplicate variable name " + d.name);
    }
    if (d.rows < 1 || d.cols < 1) throw Error(ErrorKind::MalformedProblem, "empty variable " + d.name);
    d.offset = coords_;
    coords_ += d.coordinate_count();
    vars_.push_back(d);
    const VarRef ref{vars_.size() - 1};
    if (d.lower_bound) add_lower_bound(ref);
    return ref;
  }

  void add_lower_bound(VarRef v);

  std::vector<DecisionVar> vars_;
  std::size_t coords_ = 0;
  std::vector<MatrixInequality> constraints_;
  std::optional<LinearObjective> objective_;
  std::vector<std::pair<VarRef, VarRef>> couplings_;
};

/// Assembles one symmetric constraint from a grid of blocks. Off-diagonal
/// placements are mirrored; diagonal placements are symmetrized.
class BlockBuilder {
 public:
  BlockBuilder(const LmiProblem& problem, std::vector<Eigen::Index> block_sizes)
      : problem_(problem), sizes_(std::move(block_sizes)) {
    offsets_.reserve(sizes_.size());
    for (auto s : sizes_) {
      offsets_.push_back(size_);
      size_ += s;
    }
    constant_ = Matrix::Zero(size_, size_);
  }

  [[nodiscard]] Eigen::Index size() const { return size_; }

  /// Adds M at block (bi, bj).
  BlockBuilder& constant(std::size_t bi, std::size_t bj, const Matrix& m) {
    place(constant_, bi, bj, m);
    return *this;
  }

  /// Adds scale * L V R at block (bi, bj).
  BlockBuilder& term(std::size_t bi, std::size_t bj, const Matrix& L, VarRef v, const Matrix& R, double scale = 1.0) {
    const auto& d = problem_.var(v);
    if (L.cols() != d.rows || R.rows() != d.cols) {
      throw Error(ErrorKind::DimensionMismatch, "term: multipliers do not conform with " + d.name);
    }
    for (Eigen::Index p = 0; p < d.rows; ++p) {
      const Eigen::Index q0 = d.kind == VarKind::Symmetric ? p : 0;
      for (Eigen::Index q = q0; q < d.cols; ++q) {
        Matrix contrib = scale * L.col(p) * R.row(q);
        if (d.kind == VarKind::Symmetric && q != p) contrib += scale * L.col(q) * R.row(p);
        if (contrib.cwiseAbs().maxCoeff() == 0.0) continue;
        place(coefficient(problem_.coordinate(v, p, q)), bi, bj, contrib);
      }
    }
    return *this;
  }

  /// Adds V at block (bi, bj) (identity multipliers).
  BlockBuilder& term(std::size_t bi, std::size_t bj, VarRef v, double scale = 1.0) {
    const auto& d = problem_.var(v);
    return term(bi, bj, linalg::eye(d.rows), v, linalg::eye(d.cols), scale);
  }

  /// Adds s * M at block (bi, bj) for a scalar variable s.
  BlockBuilder& scalar_term(std::size_t bi, std::size_t bj, VarRef s, const Matrix& m) {
    const auto& d = problem_.var(s);
    if (d.kind != VarKind::Scalar) throw Error(ErrorKind::MalformedProblem, d.name + " is not a scalar");
    if (m.cwiseAbs().maxCoeff() == 0.0) return *this;
    place(coefficient(d.offset), bi, bj, m);
    return *this;
  }

  [[nodiscard]] MatrixInequality build(std::string label, Sense sense, double margin) && {
    MatrixInequality c;
    c.label = std::move(label);
    c.size = size_;
    c.sense = sense;
    c.margin = margin;
    c.constant = std::move(constant_);
    c.coefficients = std::move(coefficients_);
    return c;
  }

 private:
  Matrix& coefficient(std::size_t coord) {
    auto it = coefficients_.find(coord);
    if (it == coefficients_.end()) it = coefficients_.emplace(coord, Matrix::Zero(size_, size_)).first;
    return it->second;
  }

  void place(Matrix& target, std::size_t bi, std::size_t bj, const Matrix& m) const {
    if (bi >= sizes_.size() || bj >= sizes_.size()) throw Error(ErrorKind::IndexOutOfRange, "block index");
    if (m.rows() != sizes_[bi] || m.cols() != sizes_[bj]) {
      std::ostringstream os;
      os << "block (" << bi << "," << bj << ") expects " << sizes_[bi] << "x" << sizes_[bj] << ", got " << m.rows()
         << "x" << m.cols();
      throw Error(ErrorKind::DimensionMismatch, os.str());
    }
    if (bi == bj) {
      target.block(offsets_[bi], offsets_[bj], m.rows(), m.cols()) += linalg::sym(m);
    } else {
      target.block(offsets_[bi], offsets_[bj], m.rows(), m.cols()) += m;
      target.block(offsets_[bj], offsets_[bi], m.cols(), m.rows()) += m.transpose();
    }
  }

  const LmiProblem& problem_;
  std::vector<Eigen::Index> sizes_;
  std::vector<Eigen::Index> offsets_;
  Eigen::Index size_ = 0;
  Matrix constant_;
  std::map<std::size_t, Matrix> coefficients_;
};

inline void LmiProblem::add_lower_bound(VarRef v) {
  const auto& d = var(v);
  BlockBuilder b(*this, {d.rows});
  if (d.kind == VarKind::Scalar) {
    b.scalar_term(0, 0, v, linalg::eye(1));
  } else {
    b.term(0, 0, v);
  }
  add_constraint(std::move(b).build(d.name + " lower bound", Sense::PositiveDefinite, *d.lower_bound));
}

/// [[A1, A3ᵀ], [A3, -A2]]; negative definite iff A1 + A3ᵀ A2⁻¹ A3 < 0 when A2 > 0.
inline Matrix schur_embed(const Matrix& a1, const Matrix& a2, const Matrix& a3) {
  if (a1.rows() != a1.cols() || a2.rows() != a2.cols() || a3.rows() != a2.rows() || a3.cols() != a1.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "schur_embed: blocks are not conformal");
  }
  const Eigen::Index n1 = a1.rows();
  const Eigen::Index n2 = a2.rows();
  Matrix out(n1 + n2, n1 + n2);
  out.topLeftCorner(n1, n1) = a1;
  out.topRightCorner(n1, n2) = a3.transpose();
  out.bottomLeftCorner(n2, n1) = a3;
  out.bottomRightCorner(n2, n2) = -a2;
  return out;
}

/// Sector multiplier kernels acting on fbar = 1_2 (x) f:
///   F3 = I2 (x) (F1ᵀF2 + F2ᵀF1)/2,  F4 = (I2 (x) (F1 + F2))ᵀ / 2.
struct SectorMultipliers {
  Matrix F3;
  Matrix F4;
};

inline SectorMultipliers sector_multiplier_blocks(const SectorBounds& sector) {
  const Matrix i2 = linalg::eye(2);
  return {linalg::kron(i2, linalg::sym(sector.F1.transpose() * sector.F2)),
          linalg::kron(i2, sector.F1 + sector.F2).transpose() / 2.0};
}

}  // namespace mjnn
