#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <vector>

namespace mjnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

inline Matrix zeros(Eigen::Index rows, Eigen::Index cols) { return Matrix::Zero(rows, cols); }
inline Matrix eye(Eigen::Index n) { return Matrix::Identity(n, n); }

inline Matrix block_diag(std::initializer_list<const Matrix*> blocks) {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  for (const Matrix* b : blocks) {
    rows += b->rows();
    cols += b->cols();
  }
  Matrix out = Matrix::Zero(rows, cols);
  Eigen::Index r = 0;
  Eigen::Index c = 0;
  for (const Matrix* b : blocks) {
    out.block(r, c, b->rows(), b->cols()) = *b;
    r += b->rows();
    c += b->cols();
  }
  return out;
}

inline Matrix block_diag(const Matrix& a, const Matrix& b) { return block_diag({&a, &b}); }

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

/// (M + Mᵀ)/2, exactly symmetric entrywise.
inline Matrix sym(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline bool is_symmetric_exact(const Matrix& m) {
  if (m.rows() != m.cols()) return false;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) {
      if (m(i, j) != m(j, i)) return false;
    }
  }
  return true;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Largest eigenvalue of a symmetric matrix (only the lower triangle is read).
inline double lambda_max(const Matrix& m) {
  if (m.size() == 0) return -std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

inline double lambda_min(const Matrix& m) {
  if (m.size() == 0) return std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double spectral_radius(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace linalg
}  // namespace mjnn
