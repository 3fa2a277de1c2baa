#pragma once

// Gain design by cone complementarity linearization, gain verification and
// bisection over the performance level.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "mjnn/augmentation.hpp"
#include "mjnn/conditions.hpp"
#include "mjnn/csv.hpp"
#include "mjnn/error.hpp"
#include "mjnn/lmi.hpp"
#include "mjnn/sdp.hpp"

namespace mjnn {

struct CclConfig {
  double mu = 1e-6;
  int max_iterations = 50;
  ConditionOptions conditions;
  SolverOptions solver;
  double tolerance = 0.0;  // replay tolerance for Feasible
};

enum class CclStatus { Converged, MaxIters, InfeasibleInit };

constexpr std::string_view to_string(CclStatus s) noexcept {
  switch (s) {
    case CclStatus::Converged: return "Converged";
    case CclStatus::MaxIters: return "MaxIters";
    case CclStatus::InfeasibleInit: return "InfeasibleInit";
  }
  return "Unknown";
}

struct CclStep {
  int iteration = 0;
  double objective = 0.0;
  double residual = 0.0;  // |objective - target|
  double coupling = 0.0;  // max_i ||P1_i X1_i - I||_F
  bool verified = false;
};

struct VerifyResult {
  SolveOutcome outcome;
  std::optional<Certificate> certificate;

  [[nodiscard]] bool feasible() const { return outcome.feasible(); }
};

struct SynthesisResult {
  CclStatus status = CclStatus::InfeasibleInit;
  EstimatorGains gains;
  double gamma = 0.0;
  std::vector<CclStep> trace;
  std::optional<VerifyResult> verification;
  double target = 0.0;  // 2 N dim(P)
};

/// Checks the performance conditions for fixed gains at level gamma.
inline VerifyResult verify_gains(const MjnnModel& model, const Protocol& protocol, const EstimatorGains& gains,
                                 double gamma, const ConditionOptions& cond = {}, const SolverOptions& solver = {},
                                 double tol = 0.0) {
  const auto ac = assemble_performance(model, protocol, gains, gamma, cond);
  VerifyResult r{solve_feasibility(ac.problem, tol, solver), std::nullopt};
  if (r.outcome.feasible()) r.certificate = extract_certificate(ac, r.outcome.y, gamma);
  return r;
}

/// Stability-only check (no disturbance channels) for fixed gains.
inline VerifyResult verify_stability(const MjnnModel& model, const Protocol& protocol, const EstimatorGains& gains,
                                     const ConditionOptions& cond = {}, const SolverOptions& solver = {}) {
  const auto ac = assemble_analysis_partial(model, protocol, gains, cond);
  VerifyResult r{solve_feasibility(ac.problem, 0.0, solver), std::nullopt};
  if (r.outcome.feasible()) r.certificate = extract_certificate(ac, r.outcome.y);
  return r;
}

inline constexpr const char* kCclTraceHeader = "iter,objective,residual,coupling,verified";

inline void write_ccl_step(std::ostream& os, const CclStep& s) {
  os << s.iteration << ',' << fmt17(s.objective) << ',' << fmt17(s.residual) << ',' << fmt17(s.coupling) << ','
     << (s.verified ? 1 : 0) << '\n';
}

inline void write_ccl_trace(std::ostream& os, const std::vector<CclStep>& trace) {
  os << kCclTraceHeader << '\n';
  for (const auto& s : trace) write_ccl_step(os, s);
}

inline SynthesisResult ccl_synthesize(const MjnnModel& model, const Protocol& protocol, double gamma,
                                      const CclConfig& cfg = {}, std::ostream* trace_log = nullptr) {
  if (cfg.mu <= 0.0 || cfg.max_iterations < 1) throw Error(ErrorKind::InvalidConfig, "mu > 0 and max_iterations >= 1");
  const auto ac = assemble_synthesis(model, protocol, gamma, cfg.conditions);
  const LmiProblem relaxed = ac.problem.relaxed();
  const auto& v = ac.vars;
  const std::size_t N = model.mode_count();
  const auto dimP = static_cast<double>(ac.dims.stacked());

  SynthesisResult res;
  res.gamma = gamma;
  res.target = 2.0 * static_cast<double>(N) * dimP;
  res.gains = EstimatorGains::zeros(model, protocol);

  const auto init = solve_feasibility(relaxed, cfg.tolerance, cfg.solver);
  if (!init.feasible()) return res;
  res.status = CclStatus::MaxIters;

  std::vector<Matrix> Pt(N), Xt(N);
  for (std::size_t i = 0; i < N; ++i) {
    Pt[i] = relaxed.value(v.P1[i], init.y);
    Xt[i] = relaxed.value(v.X1[i], init.y);
  }
  res.gains = extract_gains(ac, init.y);

  for (int it = 1; it <= cfg.max_iterations; ++it) {
    // tr(P_t X + X_t P) with P = diag(P1, P1) is twice the per-block trace.
    Vector w = Vector::Zero(static_cast<Eigen::Index>(relaxed.coordinate_count()));
    for (std::size_t i = 0; i < N; ++i) {
      w += 2.0 * relaxed.trace_weights(v.X1[i], Pt[i]);
      w += 2.0 * relaxed.trace_weights(v.P1[i], Xt[i]);
    }
    const auto step = minimize_linear(relaxed, {w, 0.0}, cfg.tolerance, cfg.solver);
    if (!step.feasible()) break;
    CclStep rec{it, step.objective, std::abs(step.objective - res.target), 0.0, false};
    for (std::size_t i = 0; i < N; ++i) {
      Pt[i] = relaxed.value(v.P1[i], step.y);
      Xt[i] = relaxed.value(v.X1[i], step.y);
      const Matrix defect = Pt[i] * Xt[i] - linalg::eye(Pt[i].rows());
      rec.coupling = std::max(rec.coupling, defect.norm());
    }
    res.gains = extract_gains(ac, step.y);
    if (rec.residual < cfg.mu) {
      auto check = verify_gains(model, protocol, res.gains, gamma, cfg.conditions, cfg.solver, cfg.tolerance);
      rec.verified = check.feasible();
      res.verification = std::move(check);
    }
    res.trace.push_back(rec);
    if (trace_log != nullptr) write_ccl_step(*trace_log, rec);
    if (rec.verified) {
      res.status = CclStatus::Converged;
      break;
    }
  }
  return res;
}

struct GammaProbe {
  double gamma = 0.0;
  CclStatus status = CclStatus::InfeasibleInit;
  int iterations = 0;
};

struct BisectionResult {
  SynthesisResult best;     // Converged at the smallest level found
  double lower = 0.0;       // largest level that failed (or the bracket low end)
  double upper = 0.0;       // best.gamma
  std::vector<GammaProbe> probes;
};

/// Geometric bisection of the smallest level at which synthesis converges.
/// Stops when upper/lower < 1 + rel_tol or after max_probes inner probes.
inline BisectionResult bisect_gamma(const MjnnModel& model, const Protocol& protocol, double lo, double hi,
                                    const CclConfig& cfg = {}, double rel_tol = 0.05, int max_probes = 12) {
  if (!(lo > 0.0) || hi < lo) throw Error(ErrorKind::InvalidConfig, "gamma bracket must satisfy 0 < lo <= hi");
  BisectionResult out;
  auto probe = [&](double g) {
    auto r = ccl_synthesize(model, protocol, g, cfg);
    out.probes.push_back({g, r.status, static_cast<int>(r.trace.size())});
    return r;
  };
  auto top = probe(hi);
  if (top.status != CclStatus::Converged) {
    throw Error(ErrorKind::NoFeasibleLevel, "synthesis does not converge at the upper level " + std::to_string(hi));
  }
  out.best = std::move(top);
  out.upper = hi;
  out.lower = lo;
  if (lo == hi) return out;
  auto bottom = probe(lo);
  if (bottom.status == CclStatus::Converged) {
    out.best = std::move(bottom);
    out.upper = lo;
    return out;
  }
  for (int k = 0; k < max_probes && out.upper / out.lower > 1.0 + rel_tol; ++k) {
    const double mid = std::sqrt(out.lower * out.upper);
    auto r = probe(mid);
    if (r.status == CclStatus::Converged) {
      out.best = std::move(r);
      out.upper = mid;
    } else {
      out.lower = mid;
    }
  }
  return out;
}

struct VerifyBisection {
  std::optional<double> gamma;  // smallest verified level found
  std::optional<Certificate> certificate;
  std::vector<std::pair<double, SolveStatus>> probes;
};

/// Smallest level in [lo, hi] at which fixed gains verify, by geometric bisection.
inline VerifyBisection bisect_verify_gamma(const MjnnModel& model, const Protocol& protocol,
                                           const EstimatorGains& gains, double lo, double hi,
                                           const ConditionOptions& cond = {}, const SolverOptions& solver = {},
                                           double rel_tol = 0.05, int max_probes = 20) {
  if (!(lo > 0.0) || !(hi > lo)) throw Error(ErrorKind::InvalidConfig, "gamma bracket must satisfy 0 < lo < hi");
  VerifyBisection out;
  auto probe = [&](double g) {
    auto r = verify_gains(model, protocol, gains, g, cond, solver);
    out.probes.emplace_back(g, r.outcome.status);
    if (r.feasible()) {
      out.gamma = g;
      out.certificate = r.certificate;
    }
    return r.feasible();
  };
  if (!probe(hi)) return out;
  if (probe(lo)) return out;
  double a = lo;
  double b = hi;
  for (int k = 0; k < max_probes && b / a > 1.0 + rel_tol; ++k) {
    const double mid = std::sqrt(a * b);
    if (probe(mid)) {
      b = mid;
    } else {
      a = mid;
    }
  }
  return out;
}

}  // namespace mjnn
