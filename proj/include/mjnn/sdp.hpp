#pragma once

// Dense primal-dual interior-point solver for the LMI problems of lmi.hpp.
//
// Each constraint becomes a dual slack block S = C - sum_c y_c A_c >= 0 and the
// solver works on
//   max b'y  s.t.  S_l(y) >= 0,  |y_c| <= R,
// with the HKM search direction, Mehrotra predictor-corrector and an
// infeasible starting point. Feasibility problems get an extra shift t added
// to every block (S_l + t I >= 0) and minimize t; they stop as soon as the
// current y passes an independent eigenvalue replay of the original
// constraints.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "mjnn/error.hpp"
#include "mjnn/linalg.hpp"
#include "mjnn/lmi.hpp"

namespace mjnn {

enum class SolveStatus { Feasible, Infeasible, IterationLimit };

constexpr std::string_view to_string(SolveStatus s) noexcept {
  switch (s) {
    case SolveStatus::Feasible: return "Feasible";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::IterationLimit: return "IterationLimit";
  }
  return "Unknown";
}

struct SolverOptions {
  int max_iterations = 150;
  double tolerance = 1e-9;        // relative primal/dual infeasibility and gap
  double coordinate_bound = 1e6;  // box |y_c| <= R keeps the dual bounded
  double step_fraction = 0.95;
  std::ostream* log = nullptr;  // CSV: iteration,objective,residual
};

struct SolveOutcome {
  SolveStatus status = SolveStatus::IterationLimit;
  std::map<std::string, Matrix> assignment;
  Vector y;
  double residual = std::numeric_limits<double>::infinity();  // worst replayed violation
  double objective = std::numeric_limits<double>::quiet_NaN();
  double shift = std::numeric_limits<double>::quiet_NaN();  // final t of a feasibility solve
  int iterations = 0;
  std::string message;

  [[nodiscard]] bool feasible() const { return status == SolveStatus::Feasible; }
  [[nodiscard]] const Matrix& value(const std::string& name) const {
    auto it = assignment.find(name);
    if (it == assignment.end()) throw Error(ErrorKind::MalformedProblem, "no variable named " + name);
    return it->second;
  }
};

/// Worst violation of all constraints at y, from the original problem data
/// through a dense symmetric eigen-solver. Empty constraint sets give -inf.
inline double replay_residual(const LmiProblem& problem, const Vector& y) {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& c : problem.constraints()) worst = std::max(worst, c.violation(y));
  return worst;
}

namespace detail {

struct SdpCoef {
  Eigen::Index coord = 0;
  std::vector<SparseEntry> entries;  // both triangles
  std::vector<Eigen::Index> support;
  Matrix sub;  // A restricted to support x support
};

struct SdpBlock {
  Matrix C;
  std::vector<SdpCoef> coefs;
};

/// Scalar row s = c - a y_coord >= 0.
struct LinearRow {
  Eigen::Index coord = 0;
  double a = 0.0;
  double c = 0.0;
};

struct SdpData {
  Eigen::Index m = 0;
  std::vector<SdpBlock> blocks;
  std::vector<LinearRow> rows;
  Vector b;
};

inline SdpCoef make_coef(Eigen::Index coord, const Matrix& f) {
  SdpCoef out;
  out.coord = coord;
  const Eigen::Index n = f.rows();
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (f(i, j) != 0.0) {
        out.entries.push_back({i, j, f(i, j)});
        used[static_cast<std::size_t>(i)] = 1;
        used[static_cast<std::size_t>(j)] = 1;
      }
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (used[static_cast<std::size_t>(i)]) out.support.push_back(i);
  }
  const auto s = static_cast<Eigen::Index>(out.support.size());
  out.sub.resize(s, s);
  for (Eigen::Index a = 0; a < s; ++a) {
    for (Eigen::Index b = 0; b < s; ++b) {
      out.sub(a, b) = f(out.support[static_cast<std::size_t>(a)], out.support[static_cast<std::size_t>(b)]);
    }
  }
  return out;
}

/// Converts the problem; `with_shift` appends the coordinate t (index m-1).
inline SdpData to_standard_form(const LmiProblem& problem, bool with_shift, double bound) {
  SdpData d;
  const auto base = static_cast<Eigen::Index>(problem.coordinate_count());
  d.m = base + (with_shift ? 1 : 0);
  d.b = Vector::Zero(d.m);
  for (const auto& c : problem.constraints()) {
    if (!c.constant.allFinite()) throw Error(ErrorKind::MalformedProblem, c.label + ": non-finite data");
    SdpBlock blk;
    const Matrix shift = c.margin * linalg::eye(c.size);
    const bool neg = c.sense == Sense::NegativeDefinite;
    blk.C = neg ? Matrix(-c.constant - shift) : Matrix(c.constant - shift);
    for (const auto& [coord, f] : c.coefficients) {
      if (!f.allFinite()) throw Error(ErrorKind::MalformedProblem, c.label + ": non-finite data");
      if (f.cwiseAbs().maxCoeff() == 0.0) continue;
      blk.coefs.push_back(make_coef(static_cast<Eigen::Index>(coord), neg ? Matrix(f) : Matrix(-f)));
    }
    if (with_shift) blk.coefs.push_back(make_coef(d.m - 1, -linalg::eye(c.size)));
    d.blocks.push_back(std::move(blk));
  }
  for (Eigen::Index k = 0; k < base; ++k) {
    d.rows.push_back({k, 1.0, bound});
    d.rows.push_back({k, -1.0, bound});
  }
  if (with_shift) {
    d.rows.push_back({d.m - 1, 1.0, bound});
    d.rows.push_back({d.m - 1, -1.0, 1.0});  // t >= -1
  }
  return d;
}

inline double inner(const SdpCoef& a, const Matrix& g) {
  double s = 0.0;
  for (const auto& e : a.entries) s += e.value * g(e.row, e.col);
  return s;
}

/// Largest alpha with X + alpha dX >= 0 (infinity when unrestricted).
inline double max_step(const Matrix& X, const Matrix& dX) {
  Eigen::LLT<Matrix> llt(X);
  if (llt.info() != Eigen::Success) return 0.0;
  Matrix w = llt.matrixL().solve(dX);
  w = llt.matrixL().solve(w.transpose()).transpose();
  const double lmin = linalg::lambda_min(linalg::sym(w));
  return lmin >= 0.0 ? std::numeric_limits<double>::infinity() : -1.0 / lmin;
}

struct IpmResult {
  Vector y;
  bool converged = false;
  bool stopped_early = false;
  int iterations = 0;
  double accuracy = std::numeric_limits<double>::infinity();  // max(pinf, dinf, gap) at exit
  std::string message;
};

/// Runs the interior-point loop. `accept(y)` is polled after each iteration
/// and ends the run when it returns true.
inline IpmResult run_ipm(const SdpData& d, const SolverOptions& opt, const std::function<bool(const Vector&)>& accept) {
  const Eigen::Index m = d.m;
  const std::size_t nb = d.blocks.size();
  const auto nr = static_cast<Eigen::Index>(d.rows.size());

  std::vector<Matrix> X(nb), S(nb);
  Vector x(nr), s(nr), y = Vector::Zero(m);
  double nu = static_cast<double>(nr);
  double norm_c = 0.0;
  for (std::size_t l = 0; l < nb; ++l) {
    const auto& blk = d.blocks[l];
    const auto n = blk.C.rows();
    nu += static_cast<double>(n);
    norm_c += blk.C.squaredNorm();
    double ratio = 0.0;
    double amax = 0.0;
    for (const auto& c : blk.coefs) {
      const double na = c.sub.norm();
      ratio = std::max(ratio, (1.0 + std::abs(d.b(c.coord))) / (1.0 + na));
      amax = std::max(amax, na);
    }
    const double sn = std::sqrt(static_cast<double>(n));
    const double xi = std::max({10.0, sn, static_cast<double>(n) * ratio});
    const double eta = std::max({10.0, sn, blk.C.norm(), amax});
    X[l] = xi * linalg::eye(n);
    S[l] = eta * linalg::eye(n);
  }
  norm_c = std::sqrt(norm_c);
  for (Eigen::Index i = 0; i < nr; ++i) {
    const auto& r = d.rows[static_cast<std::size_t>(i)];
    x(i) = std::max(10.0, (1.0 + std::abs(d.b(r.coord))) / (1.0 + std::abs(r.a)));
    s(i) = std::max({10.0, std::abs(r.c), std::abs(r.a)});
  }

  auto apply_a = [&](const std::vector<Matrix>& blocks, const Vector& lin) {
    Vector out = Vector::Zero(m);
    for (std::size_t l = 0; l < nb; ++l) {
      for (const auto& c : d.blocks[l].coefs) out(c.coord) += inner(c, blocks[l]);
    }
    for (Eigen::Index i = 0; i < nr; ++i) out(d.rows[static_cast<std::size_t>(i)].coord) += d.rows[static_cast<std::size_t>(i)].a * lin(i);
    return out;
  };
  auto apply_at_block = [&](std::size_t l, const Vector& v) {
    const auto& blk = d.blocks[l];
    Matrix out = Matrix::Zero(blk.C.rows(), blk.C.cols());
    for (const auto& c : blk.coefs) {
      const double vc = v(c.coord);
      if (vc == 0.0) continue;
      for (const auto& e : c.entries) out(e.row, e.col) += vc * e.value;
    }
    return out;
  };
  auto apply_at_rows = [&](const Vector& v) {
    Vector out(nr);
    for (Eigen::Index i = 0; i < nr; ++i) {
      const auto& r = d.rows[static_cast<std::size_t>(i)];
      out(i) = r.a * v(r.coord);
    }
    return out;
  };

  IpmResult res;
  const double norm_b = d.b.norm();
  std::vector<Matrix> Rd(nb), Sinv(nb), dX(nb), dS(nb), dXa(nb), dSa(nb);
  for (int it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it;
    // Residuals and measures.
    const Vector rp = d.b - apply_a(X, x);
    double rd_norm = 0.0;
    double pobj = 0.0;
    double xs = 0.0;
    for (std::size_t l = 0; l < nb; ++l) {
      Rd[l] = d.blocks[l].C - S[l] - apply_at_block(l, y);
      rd_norm += Rd[l].squaredNorm();
      pobj += (d.blocks[l].C.array() * X[l].array()).sum();
      xs += (X[l].array() * S[l].array()).sum();
    }
    const Vector aty = apply_at_rows(y);
    Vector rd(nr);
    for (Eigen::Index i = 0; i < nr; ++i) {
      const auto& r = d.rows[static_cast<std::size_t>(i)];
      rd(i) = r.c - s(i) - aty(i);
      pobj += r.c * x(i);
    }
    rd_norm = std::sqrt(rd_norm + rd.squaredNorm());
    xs += x.dot(s);
    const double dobj = d.b.dot(y);
    const double mu = xs / nu;
    const double pinf = rp.norm() / (1.0 + norm_b);
    const double dinf = rd_norm / (1.0 + norm_c);
    const double gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
    res.accuracy = std::max({pinf, dinf, gap});
    if (opt.log != nullptr) *opt.log << it << ',' << dobj << ',' << std::max(pinf, dinf) << '\n';
    if (accept && accept(y)) {
      res.stopped_early = true;
      break;
    }
    if (pinf < opt.tolerance && dinf < opt.tolerance && gap < opt.tolerance) {
      res.converged = true;
      break;
    }
    if (!y.allFinite() || !std::isfinite(mu)) {
      res.message = "non-finite iterate";
      break;
    }

    // Schur complement M_cd = <A_c, X A_d S^-1>.
    Matrix M = Matrix::Zero(m, m);
    bool factor_ok = true;
    for (std::size_t l = 0; l < nb && factor_ok; ++l) {
      Eigen::LLT<Matrix> llt(S[l]);
      if (llt.info() != Eigen::Success) {
        factor_ok = false;
        break;
      }
      Sinv[l] = llt.solve(linalg::eye(S[l].rows()));
      Sinv[l] = linalg::sym(Sinv[l]);
      const auto& blk = d.blocks[l];
      const Eigen::Index n = blk.C.rows();
      for (const auto& ad : blk.coefs) {
        const auto sz = static_cast<Eigen::Index>(ad.support.size());
        Matrix xs_cols(n, sz);
        Matrix s_rows(sz, n);
        for (Eigen::Index k = 0; k < sz; ++k) {
          xs_cols.col(k) = X[l].col(ad.support[static_cast<std::size_t>(k)]);
          s_rows.row(k) = Sinv[l].row(ad.support[static_cast<std::size_t>(k)]);
        }
        const Matrix g = xs_cols * ad.sub * s_rows;
        for (const auto& ac : blk.coefs) M(ac.coord, ad.coord) += inner(ac, g);
      }
    }
    if (!factor_ok) {
      res.message = "slack lost definiteness";
      break;
    }
    for (Eigen::Index i = 0; i < nr; ++i) {
      const auto& r = d.rows[static_cast<std::size_t>(i)];
      M(r.coord, r.coord) += r.a * r.a * x(i) / s(i);
    }
    M = linalg::sym(M);
    Eigen::LLT<Matrix> mchol(M);
    if (mchol.info() != Eigen::Success) {
      const double reg = 1e-13 * std::max(1.0, M.diagonal().cwiseAbs().maxCoeff());
      M.diagonal().array() += reg;
      mchol.compute(M);
      if (mchol.info() != Eigen::Success) {
        res.message = "Schur complement not positive definite";
        break;
      }
    }

    // Direction for target sigma*mu; `corr` enables the second-order term.
    Vector dy, dx, ds, dxa, dsa;
    auto direction = [&](double target, bool corr) {
      Vector rhs = d.b;
      std::vector<Matrix> h(nb);
      for (std::size_t l = 0; l < nb; ++l) {
        h[l] = X[l] * Rd[l] * Sinv[l];
        if (target != 0.0) h[l] -= target * Sinv[l];
        if (corr) h[l] += dXa[l] * dSa[l] * Sinv[l];
      }
      Vector hl(nr);
      for (Eigen::Index i = 0; i < nr; ++i) {
        hl(i) = (x(i) * rd(i) - target) / s(i);
        if (corr) hl(i) += dxa(i) * dsa(i) / s(i);
      }
      rhs += apply_a(h, hl);
      dy = mchol.solve(rhs);
      const Vector atdy = apply_at_rows(dy);
      ds = rd - atdy;
      dx.resize(nr);
      for (Eigen::Index i = 0; i < nr; ++i) {
        dx(i) = target / s(i) - x(i) - x(i) * ds(i) / s(i);
        if (corr) dx(i) -= dxa(i) * dsa(i) / s(i);
      }
      for (std::size_t l = 0; l < nb; ++l) {
        dS[l] = Rd[l] - apply_at_block(l, dy);
        Matrix t = -X[l] - X[l] * dS[l] * Sinv[l];
        if (target != 0.0) t += target * Sinv[l];
        if (corr) t -= dXa[l] * dSa[l] * Sinv[l];
        dX[l] = linalg::sym(t);
      }
    };
    auto steps = [&](double& ap, double& ad) {
      ap = std::numeric_limits<double>::infinity();
      ad = std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < nb; ++l) {
        ap = std::min(ap, max_step(X[l], dX[l]));
        ad = std::min(ad, max_step(S[l], dS[l]));
      }
      for (Eigen::Index i = 0; i < nr; ++i) {
        if (dx(i) < 0.0) ap = std::min(ap, -x(i) / dx(i));
        if (ds(i) < 0.0) ad = std::min(ad, -s(i) / ds(i));
      }
      ap = std::min(1.0, opt.step_fraction * ap);
      ad = std::min(1.0, opt.step_fraction * ad);
    };

    direction(0.0, false);
    double ap = 0.0;
    double ad = 0.0;
    steps(ap, ad);
    double xs_aff = 0.0;
    for (std::size_t l = 0; l < nb; ++l) {
      xs_aff += ((X[l] + ap * dX[l]).array() * (S[l] + ad * dS[l]).array()).sum();
      dXa[l] = dX[l];
      dSa[l] = dS[l];
    }
    xs_aff += (x + ap * dx).dot(s + ad * ds);
    dxa = dx;
    dsa = ds;
    const double ratio = std::clamp(xs_aff / xs, 0.0, 1.0);
    const double sigma = std::clamp(ratio * ratio * ratio, 0.0, 1.0);
    direction(sigma * mu, true);
    steps(ap, ad);
    if (ap < 1e-12 && ad < 1e-12) {
      res.message = "step length collapsed";
      break;
    }
    for (std::size_t l = 0; l < nb; ++l) {
      X[l] = linalg::sym(X[l] + ap * dX[l]);
      S[l] = linalg::sym(S[l] + ad * dS[l]);
    }
    x += ap * dx;
    s += ad * ds;
    y += ad * dy;
    res.iterations = it + 1;
  }
  res.y = y;
  return res;
}

inline void fill_assignment(const LmiProblem& problem, SolveOutcome& out) {
  out.assignment.clear();
  for (std::size_t k = 0; k < problem.vars().size(); ++k) {
    const VarRef v{k};
    out.assignment[problem.var(v).name] = problem.value(v, out.y);
  }
}

}  // namespace detail

/// Searches for y with every constraint satisfied to within `tol` (replayed).
inline SolveOutcome solve_feasibility(const LmiProblem& problem, double tol = 0.0, const SolverOptions& opt = {}) {
  if (!problem.inverse_couplings().empty()) {
    throw Error(ErrorKind::MalformedProblem, "solve_feasibility does not handle inverse couplings");
  }
  SolveOutcome out;
  const auto m = static_cast<Eigen::Index>(problem.coordinate_count());
  out.y = Vector::Zero(m);
  if (problem.constraints().empty()) {
    out.status = SolveStatus::Feasible;
    out.residual = replay_residual(problem, out.y);
    out.objective = 0.0;
    detail::fill_assignment(problem, out);
    return out;
  }
  auto data = detail::to_standard_form(problem, true, opt.coordinate_bound);
  data.b(data.m - 1) = -1.0;
  double best = std::numeric_limits<double>::infinity();
  Vector best_y = out.y;
  auto accept = [&](const Vector& yt) {
    if (yt(data.m - 1) >= 0.0) return false;
    const Vector yy = yt.head(m);
    const double r = replay_residual(problem, yy);
    if (r < best) {
      best = r;
      best_y = yy;
    }
    return r <= tol;
  };
  const auto run = detail::run_ipm(data, opt, accept);
  out.iterations = run.iterations;
  out.shift = run.y(data.m - 1);
  out.message = run.message;
  const Vector final_y = run.y.head(m);
  const double final_r = replay_residual(problem, final_y);
  if (final_r <= best) {
    best = final_r;
    best_y = final_y;
  }
  out.y = best_y;
  out.residual = best;
  if (best <= tol) {
    out.status = SolveStatus::Feasible;
  } else if (run.converged && out.shift > 0.0) {
    out.status = SolveStatus::Infeasible;
  } else {
    out.status = SolveStatus::IterationLimit;
  }
  out.objective = problem.objective() ? problem.objective()->value(out.y) : 0.0;
  detail::fill_assignment(problem, out);
  return out;
}

/// Minimizes objective over the feasible set. Feasible means the returned
/// point replays within `tol` and the solver reached its optimality tolerance.
inline SolveOutcome minimize_linear(const LmiProblem& problem, const LinearObjective& objective, double tol = 0.0,
                                    const SolverOptions& opt = {}) {
  const auto m = static_cast<Eigen::Index>(problem.coordinate_count());
  if (objective.weights.size() > m) throw Error(ErrorKind::MalformedProblem, "objective longer than coordinates");
  Vector w = Vector::Zero(m);
  w.head(objective.weights.size()) = objective.weights;
  const LinearObjective obj{w, objective.constant};

  SolveOutcome out;
  auto data = detail::to_standard_form(problem, false, opt.coordinate_bound);
  data.b = -w;
  // Track the best replay-feasible iterate; the final one may sit on the boundary.
  double best_obj = std::numeric_limits<double>::infinity();
  Vector best_y;
  auto track = [&](const Vector& yt) {
    const double f = obj.value(yt);
    if (f < best_obj && replay_residual(problem, yt) <= tol) {
      best_obj = f;
      best_y = yt;
    }
    return false;
  };
  const auto run = detail::run_ipm(data, opt, track);
  track(run.y);
  out.iterations = run.iterations;
  out.message = run.message;
  if (best_y.size() == m) {
    const double bound_use = best_y.size() > 0 ? best_y.cwiseAbs().maxCoeff() : 0.0;
    if (bound_use > 0.99 * opt.coordinate_bound) {
      throw Error(ErrorKind::Unbounded, "objective keeps decreasing up to the coordinate bound");
    }
    out.y = best_y;
    out.residual = replay_residual(problem, out.y);
    out.objective = best_obj;
    // A stall close to the optimum (accuracy within sqrt(tolerance)) still counts.
    const bool near = run.converged || run.accuracy < std::sqrt(opt.tolerance);
    out.status = near ? SolveStatus::Feasible : SolveStatus::IterationLimit;
  } else {
    auto feas = solve_feasibility(problem.relaxed(), tol, opt);
    out.y = feas.y;
    out.residual = feas.residual;
    out.objective = obj.value(out.y);
    out.status = feas.status == SolveStatus::Infeasible ? SolveStatus::Infeasible : SolveStatus::IterationLimit;
  }
  detail::fill_assignment(problem, out);
  return out;
}

}  // namespace mjnn
