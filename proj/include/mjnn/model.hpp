#pragma once

// Markovian jumping neural network plant: per-mode coefficients, a Markov
// chain whose transition matrix may be only partially known, the activation
// sector and the delay bounds.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mjnn/error.hpp"
#include "mjnn/linalg.hpp"

namespace mjnn {

/// Absolute tolerance used for every probability comparison.
inline constexpr double kProbabilityTol = 1e-12;

/// Coefficients of one mode:
///   x(k+1) = A x + B f(x) + C f(x(k-tau)) + D1 w,  y = E x + D2 v,  z = M x.
struct ModeMatrices {
  Matrix A, B, C, D1, D2, E, M;
};

struct Dimensions {
  Eigen::Index n = 0;  // neuron state
  Eigen::Index m = 0;  // measurement
  Eigen::Index q = 0;  // estimated output
  Eigen::Index r = 0;  // disturbance (each of w and v)

  [[nodiscard]] Eigen::Index augmented() const { return n + m; }
  [[nodiscard]] Eigen::Index stacked() const { return 2 * (n + m); }
  friend bool operator==(const Dimensions&, const Dimensions&) = default;
};

/// N x N grid of transition probabilities; std::nullopt marks an unknown cell.
class TransitionSpec {
 public:
  TransitionSpec() = default;
  explicit TransitionSpec(std::size_t modes) : modes_(modes), cells_(modes * modes) {}

  static TransitionSpec fully_known(const Matrix& pi) {
    TransitionSpec spec(static_cast<std::size_t>(pi.rows()));
    for (std::size_t i = 0; i < spec.modes_; ++i) {
      for (std::size_t j = 0; j < spec.modes_; ++j) {
        spec.set(i, j, pi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      }
    }
    return spec;
  }

  [[nodiscard]] std::size_t modes() const { return modes_; }
  [[nodiscard]] const std::optional<double>& at(std::size_t i, std::size_t j) const {
    return cells_.at(i * modes_ + j);
  }
  [[nodiscard]] bool is_known(std::size_t i, std::size_t j) const { return at(i, j).has_value(); }
  void set(std::size_t i, std::size_t j, std::optional<double> p) { cells_.at(i * modes_ + j) = p; }
  void mask(std::size_t i, std::size_t j) { set(i, j, std::nullopt); }

  [[nodiscard]] bool row_fully_known(std::size_t i) const {
    for (std::size_t j = 0; j < modes_; ++j) {
      if (!is_known(i, j)) return false;
    }
    return true;
  }
  [[nodiscard]] bool fully_known() const {
    for (std::size_t i = 0; i < modes_; ++i) {
      if (!row_fully_known(i)) return false;
    }
    return true;
  }

 private:
  std::size_t modes_ = 0;
  std::vector<std::optional<double>> cells_;
};

/// Index sets of the known / unknown entries of one row and the known mass.
struct KnownIndexSets {
  std::vector<std::size_t> known;
  std::vector<std::size_t> unknown;
  double known_mass = 0.0;
};

inline KnownIndexSets known_index_sets(const TransitionSpec& spec, std::size_t i) {
  if (i >= spec.modes()) {
    throw Error(ErrorKind::IndexOutOfRange, "mode " + std::to_string(i + 1) + " out of range");
  }
  KnownIndexSets sets;
  for (std::size_t j = 0; j < spec.modes(); ++j) {
    if (const auto& p = spec.at(i, j)) {
      sets.known.push_back(j);
      sets.known_mass += *p;
    } else {
      sets.unknown.push_back(j);
    }
  }
  // A validated, fully known row is stochastic by definition.
  if (sets.unknown.empty() && std::abs(sets.known_mass - 1.0) <= kProbabilityTol) sets.known_mass = 1.0;
  return sets;
}

/// [f - F1 x]ᵀ[f - F2 x] <= 0 must hold for the activation.
struct SectorBounds {
  Matrix F1, F2;
};

inline double sector_residual(const SectorBounds& sector, const Vector& x, const Vector& fx) {
  if (x.size() != sector.F1.cols() || fx.size() != sector.F1.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "sector_residual: vector sizes do not match F1/F2");
  }
  return (fx - sector.F1 * x).dot(fx - sector.F2 * x);
}

/// Bounds on the time-varying delay, in steps.
struct DelaySpec {
  int tau_min = 1;
  int tau_max = 1;

  [[nodiscard]] int span() const { return tau_max - tau_min; }
};

/// Uniform integer on [tau_min, tau_max] by inverse CDF of u in [0,1).
inline int sample_delay(const DelaySpec& spec, double u) {
  const int count = spec.tau_max - spec.tau_min + 1;
  int offset = static_cast<int>(std::floor(u * count));
  offset = std::clamp(offset, 0, count - 1);
  return spec.tau_min + offset;
}

/// Componentwise activation. The built-in family is f_l(x) = tanh(c_l x).
class Activation {
 public:
  using Map = std::function<Vector(const Vector&)>;

  Activation() = default;

  static Activation scaled_tanh(Vector scales) {
    Activation a;
    a.scales_ = std::move(scales);
    return a;
  }
  static Activation custom(Map map, std::string name = "custom") {
    Activation a;
    a.map_ = std::move(map);
    a.name_ = std::move(name);
    return a;
  }

  [[nodiscard]] bool is_scaled_tanh() const { return !map_; }
  [[nodiscard]] const Vector& scales() const { return scales_; }
  [[nodiscard]] const std::string& name() const { return name_; }

  [[nodiscard]] Vector apply(const Vector& x) const {
    if (map_) return map_(x);
    if (x.size() != scales_.size()) {
      throw Error(ErrorKind::DimensionMismatch, "activation: state size differs from scale count");
    }
    Vector out(x.size());
    for (Eigen::Index l = 0; l < x.size(); ++l) out(l) = std::tanh(scales_(l) * x(l));
    return out;
  }

 private:
  Vector scales_;
  Map map_;
  std::string name_ = "tanh";
};

struct MjnnModel {
  std::vector<ModeMatrices> modes;
  TransitionSpec transitions;
  SectorBounds sector;
  DelaySpec delay;
  Activation activation;

  [[nodiscard]] std::size_t mode_count() const { return modes.size(); }
  [[nodiscard]] Dimensions dims() const {
    if (modes.empty()) return {};
    const auto& m0 = modes.front();
    return {m0.A.rows(), m0.E.rows(), m0.M.rows(), m0.D1.cols()};
  }
};

inline Vector activation_apply(const MjnnModel& model, const Vector& x) { return model.activation.apply(x); }

struct Violation {
  ErrorKind kind;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  [[nodiscard]] bool ok() const { return violations.empty(); }
};

namespace detail {

inline void expect_shape(ValidationReport& report, const Matrix& mat, Eigen::Index rows, Eigen::Index cols,
                         std::size_t mode, const char* name) {
  if (mat.rows() != rows || mat.cols() != cols) {
    std::ostringstream os;
    os << "mode " << mode + 1 << ": " << name << " is " << mat.rows() << "x" << mat.cols() << ", expected "
       << rows << "x" << cols;
    report.violations.push_back({ErrorKind::DimensionMismatch, os.str()});
  } else if (!mat.allFinite()) {
    std::ostringstream os;
    os << "mode " << mode + 1 << ": " << name << " has non-finite entries";
    report.violations.push_back({ErrorKind::DimensionMismatch, os.str()});
  }
}

}  // namespace detail

/// Checks every structural and stochastic invariant; an empty report means valid.
inline ValidationReport validate_model(const MjnnModel& model) {
  ValidationReport report;
  if (model.modes.empty()) {
    report.violations.push_back({ErrorKind::DimensionMismatch, "model has no modes"});
    return report;
  }
  const Dimensions d = model.dims();
  for (std::size_t i = 0; i < model.modes.size(); ++i) {
    const auto& mm = model.modes[i];
    detail::expect_shape(report, mm.A, d.n, d.n, i, "A");
    detail::expect_shape(report, mm.B, d.n, d.n, i, "B");
    detail::expect_shape(report, mm.C, d.n, d.n, i, "C");
    detail::expect_shape(report, mm.D1, d.n, d.r, i, "D1");
    detail::expect_shape(report, mm.D2, d.m, d.r, i, "D2");
    detail::expect_shape(report, mm.E, d.m, d.n, i, "E");
    detail::expect_shape(report, mm.M, d.q, d.n, i, "M");
  }
  if (model.sector.F1.rows() != d.n || model.sector.F1.cols() != d.n || model.sector.F2.rows() != d.n ||
      model.sector.F2.cols() != d.n) {
    report.violations.push_back({ErrorKind::DimensionMismatch, "sector bounds F1/F2 must be n x n"});
  }
  if (model.activation.is_scaled_tanh() && model.activation.scales().size() != d.n) {
    report.violations.push_back({ErrorKind::DimensionMismatch, "activation scale count differs from n"});
  }

  const auto& tp = model.transitions;
  if (tp.modes() != model.modes.size()) {
    report.violations.push_back({ErrorKind::DimensionMismatch,
                                 "transition grid is " + std::to_string(tp.modes()) + "x" +
                                     std::to_string(tp.modes()) + " for " + std::to_string(model.modes.size()) +
                                     " modes"});
  } else {
    for (std::size_t i = 0; i < tp.modes(); ++i) {
      double mass = 0.0;
      bool has_unknown = false;
      for (std::size_t j = 0; j < tp.modes(); ++j) {
        const auto& p = tp.at(i, j);
        if (!p) {
          has_unknown = true;
          continue;
        }
        if (!(*p >= 0.0 && *p <= 1.0)) {
          report.violations.push_back({ErrorKind::InvalidProbability, "row " + std::to_string(i + 1) + ", column " +
                                                                          std::to_string(j + 1) +
                                                                          ": probability outside [0,1]"});
        }
        mass += *p;
      }
      const bool bad = has_unknown ? (mass > 1.0 + kProbabilityTol) : (std::abs(mass - 1.0) > kProbabilityTol);
      if (bad) {
        std::ostringstream os;
        os.precision(17);
        os << "row " << i + 1 << ": known probabilities sum to " << mass
           << (has_unknown ? " (must not exceed 1)" : " (must equal 1)");
        report.violations.push_back({ErrorKind::RowSumViolation, os.str()});
      }
    }
  }

  if (model.delay.tau_min <= 0 || model.delay.tau_min > model.delay.tau_max) {
    report.violations.push_back({ErrorKind::DelayOrderViolation,
                                 "delay bounds must satisfy 0 < tau_min <= tau_max (got " +
                                     std::to_string(model.delay.tau_min) + ", " +
                                     std::to_string(model.delay.tau_max) + ")"});
  }
  return report;
}

/// Throws the first violation of validate_model.
inline const MjnnModel& require_valid(const MjnnModel& model) {
  const auto report = validate_model(model);
  if (!report.ok()) throw Error(report.violations.front().kind, report.violations.front().message);
  return model;
}

/// Sampled check of the sector condition over a grid of [-radius, radius]^n.
/// Returns the largest residual found; the condition holds on the sample iff <= tolerance.
inline double max_sector_residual_on_grid(const MjnnModel& model, double radius, int points_per_axis) {
  const auto n = model.dims().n;
  double worst = -std::numeric_limits<double>::infinity();
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  Vector x(n);
  while (true) {
    for (Eigen::Index l = 0; l < n; ++l) {
      x(l) = -radius + 2.0 * radius * idx[static_cast<std::size_t>(l)] / std::max(1, points_per_axis - 1);
    }
    worst = std::max(worst, sector_residual(model.sector, x, model.activation.apply(x)));
    Eigen::Index l = 0;
    for (; l < n; ++l) {
      if (++idx[static_cast<std::size_t>(l)] < points_per_axis) break;
      idx[static_cast<std::size_t>(l)] = 0;
    }
    if (l == n) break;
  }
  return worst;
}

/// Ground-truth transition matrix used by simulation; agrees with every known cell.
class TransitionCompletion {
 public:
  TransitionCompletion() = default;

  /// Checks agreement with the known cells and row-stochasticity.
  static TransitionCompletion from_matrix(const TransitionSpec& spec, Matrix pi) {
    const auto n = static_cast<Eigen::Index>(spec.modes());
    if (pi.rows() != n || pi.cols() != n) {
      throw Error(ErrorKind::DimensionMismatch, "completion must be N x N");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double p = pi(i, j);
        if (!(p >= 0.0 && p <= 1.0)) {
          throw Error(ErrorKind::InvalidProbability, "completion entry outside [0,1]");
        }
        const auto& known = spec.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        if (known && *known != p) {
          throw Error(ErrorKind::InvalidProbability, "completion disagrees with known cell (" + std::to_string(i + 1) +
                                                         "," + std::to_string(j + 1) + ")");
        }
        sum += p;
      }
      if (std::abs(sum - 1.0) > kProbabilityTol) {
        throw Error(ErrorKind::RowSumViolation, "completion row " + std::to_string(i + 1) + " does not sum to 1");
      }
    }
    TransitionCompletion c;
    c.pi_ = std::move(pi);
    return c;
  }

  /// Spreads the missing mass of each row evenly over its unknown cells.
  static TransitionCompletion uniform_fill(const TransitionSpec& spec) {
    const auto n = static_cast<Eigen::Index>(spec.modes());
    Matrix pi = Matrix::Zero(n, n);
    for (std::size_t i = 0; i < spec.modes(); ++i) {
      const auto sets = known_index_sets(spec, i);
      for (std::size_t j : sets.known) pi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = *spec.at(i, j);
      if (!sets.unknown.empty()) {
        const double share = std::max(0.0, 1.0 - sets.known_mass) / static_cast<double>(sets.unknown.size());
        for (std::size_t j : sets.unknown) pi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = share;
      }
    }
    return from_matrix(spec, std::move(pi));
  }

  [[nodiscard]] const Matrix& matrix() const { return pi_; }
  [[nodiscard]] std::size_t modes() const { return static_cast<std::size_t>(pi_.rows()); }

 private:
  Matrix pi_;
};

/// Inverse-CDF draw of the next mode from row i given u in [0,1).
inline std::size_t sample_next_mode(const TransitionCompletion& completion, std::size_t i, double u) {
  const Matrix& pi = completion.matrix();
  const auto row = static_cast<Eigen::Index>(i);
  double cumulative = 0.0;
  std::size_t last_positive = i;
  for (Eigen::Index j = 0; j < pi.cols(); ++j) {
    const double p = pi(row, j);
    if (p <= 0.0) continue;
    last_positive = static_cast<std::size_t>(j);
    cumulative += p;
    if (u < cumulative) return static_cast<std::size_t>(j);
  }
  return last_positive;
}

}  // namespace mjnn
