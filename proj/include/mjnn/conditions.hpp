#pragma once

// Assembly of the stability, performance and synthesis conditions as LMI
// problems over the stacked closed loop.
//
// Lyapunov weights are P_i = diag(P1_i, P1_i), one P1 per mode. The delay
// functional uses one full matrix Z; the sector S-procedure uses rho1_i and
// rho2_i; the protocol S-procedure uses sigma_{i,o,m} for every node m != o.
// Constraint families per (mode i, scheduled node o):
//   known part    [[-Ups, Ups W1], [*, W2]] <= -eps I, Ups = (1/pi_K) sum_K pi_ij P_j
//   unknown part  [[-P_j, P_j W1], [*, W2]] <= -eps I for every unknown j
// with W1 = [A~, 0, B~, C~ (, D~)] and W2 over xi = [eta, eta_tau, f~, f~_tau (, W)].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mjnn/augmentation.hpp"
#include "mjnn/error.hpp"
#include "mjnn/linalg.hpp"
#include "mjnn/lmi.hpp"
#include "mjnn/model.hpp"
#include "mjnn/wtod.hpp"

namespace mjnn {

/// How rows with unknown transition probabilities are handled.
enum class PartialMode {
  Vertex,       // known-part constraint plus one constraint per unknown j
  PooledBound,  // one constraint with Pbar = sum_K pi_ij P_j + (1 - pi_K) sum_UK P_j
};

struct ConditionOptions {
  double epsilon = 1e-7;
  PartialMode partial_mode = PartialMode::Vertex;
};

struct ConditionVars {
  std::vector<VarRef> P1;
  std::vector<VarRef> X1;  // synthesis only
  VarRef Z;
  std::vector<VarRef> rho1;
  std::vector<VarRef> rho2;
  ModeNodeGrid<std::vector<VarRef>> sigma;  // sigma.at(i, o)[m], invalid for m == o
  ModeNodeGrid<VarRef> K;                   // synthesis only
};

struct AssembledConditions {
  LmiProblem problem;
  ConditionVars vars;
  Dimensions dims;
};

/// Values of the multipliers and Lyapunov weights.
struct Certificate {
  std::vector<Matrix> P1;
  Matrix Z;
  std::vector<double> rho1;
  std::vector<double> rho2;
  ModeNodeGrid<std::vector<double>> sigma;
  std::optional<double> gamma;

  [[nodiscard]] Matrix P(std::size_t mode) const { return linalg::block_diag(P1.at(mode), P1.at(mode)); }
};

/// Selector G with G eta = [x; x; e_x; e_x], e_x the first n entries of the error block.
inline Matrix sector_lift(const Dimensions& d) {
  const Eigen::Index na = d.augmented();
  Matrix g = Matrix::Zero(4 * d.n, 2 * na);
  const Eigen::Index cols[4] = {0, 0, na, na};
  for (Eigen::Index b = 0; b < 4; ++b) g.block(b * d.n, cols[b], d.n, d.n).setIdentity();
  return g;
}

/// Sector kernels lifted to eta: (Gᵀ (I4 (x) F3n) G, Gᵀ (I4 (x) F4n)), F3n/F4n the per-copy blocks.
inline std::pair<Matrix, Matrix> lifted_sector_blocks(const SectorBounds& sector, const Dimensions& d) {
  const Matrix g = sector_lift(d);
  const Matrix i4 = linalg::eye(4);
  const Matrix f3 = linalg::kron(i4, linalg::sym(sector.F1.transpose() * sector.F2));
  const Matrix f4 = linalg::kron(i4, (sector.F1 + sector.F2).transpose() / 2.0);
  return {g.transpose() * f3 * g, g.transpose() * f4};
}

namespace detail {

struct Layout {
  Dimensions d;
  Eigen::Index na = 0;
  Eigen::Index de = 0;
  Eigen::Index nf = 0;
  Eigen::Index nw = 0;
  double delay_weight = 1.0;  // 1 + tau_max - tau_min
  Matrix F3;
  Matrix F4;
  Matrix S1;  // [I; 0], de x na
  Matrix S2;  // [0; I]
  Matrix T2;  // [0; I], 4r x 2r: second copy of wbar
  Matrix Qbar;

  Layout(const MjnnModel& model, const Protocol& protocol) : d(model.dims()) {
    na = d.augmented();
    de = d.stacked();
    nf = 4 * d.n;
    nw = 4 * d.r;
    delay_weight = 1.0 + model.delay.tau_max - model.delay.tau_min;
    std::tie(F3, F4) = lifted_sector_blocks(model.sector, d);
    S1 = Matrix::Zero(de, na);
    S1.topRows(na).setIdentity();
    S2 = Matrix::Zero(de, na);
    S2.bottomRows(na).setIdentity();
    T2 = Matrix::Zero(nw, 2 * d.r);
    T2.bottomRows(2 * d.r).setIdentity();
    Qbar = protocol.weights.stacked();
  }

  [[nodiscard]] std::vector<Eigen::Index> xi_blocks(bool with_w) const {
    std::vector<Eigen::Index> out{de, de, nf, nf};
    if (with_w) out.push_back(nw);
    return out;
  }
};

inline std::string tag(std::size_t i) { return std::to_string(i + 1); }

/// scale * diag(V, V) * R at (bi, bj).
inline void add_doubled(BlockBuilder& b, const Layout& lay, std::size_t bi, std::size_t bj, VarRef v,
                        const Matrix& R, double scale) {
  b.term(bi, bj, lay.S1, v, lay.S1.transpose() * R, scale);
  b.term(bi, bj, lay.S2, v, lay.S2.transpose() * R, scale);
}

inline void add_doubled_diag(BlockBuilder& b, const Layout& lay, std::size_t bi, VarRef v, double scale) {
  b.term(bi, bi, lay.S1, v, lay.S1.transpose(), scale);
  b.term(bi, bi, lay.S2, v, lay.S2.transpose(), scale);
}

inline void declare(AssembledConditions& out, const MjnnModel& model, const Protocol& protocol, const Layout& lay,
                    double eps, bool synthesis) {
  auto& p = out.problem;
  auto& v = out.vars;
  const std::size_t N = model.mode_count();
  const std::size_t nodes = protocol.nodes();
  for (std::size_t i = 0; i < N; ++i) v.P1.push_back(p.add_symmetric("P1_" + tag(i), lay.na, eps));
  if (synthesis) {
    for (std::size_t i = 0; i < N; ++i) v.X1.push_back(p.add_symmetric("X1_" + tag(i), lay.na));
  }
  v.Z = p.add_symmetric("Z", lay.de, eps);
  for (std::size_t i = 0; i < N; ++i) {
    v.rho1.push_back(p.add_scalar("rho1_" + tag(i), eps));
    v.rho2.push_back(p.add_scalar("rho2_" + tag(i), eps));
  }
  v.sigma = ModeNodeGrid<std::vector<VarRef>>(N, nodes, std::vector<VarRef>(nodes));
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t o = 0; o < nodes; ++o) {
      for (std::size_t m = 0; m < nodes; ++m) {
        if (m == o) continue;
        v.sigma.at(i, o)[m] = p.add_scalar("sigma_" + tag(i) + "_" + tag(o) + "_" + tag(m), eps);
      }
    }
  }
  if (synthesis) {
    v.K = ModeNodeGrid<VarRef>(N, nodes);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t o = 0; o < nodes; ++o) v.K.at(i, o) = p.add_matrix("K_" + tag(i) + "_" + tag(o), lay.na, lay.d.m);
    }
  }
}

/// Adds W2 for (i, o) with eta at block `base`.
inline void add_omega2(BlockBuilder& b, const AssembledConditions& ac, const MjnnModel& model,
                       const Protocol& protocol, const Layout& lay, std::size_t i, std::size_t o, std::size_t base,
                       bool with_w) {
  const auto& v = ac.vars;
  const std::size_t eta = base;
  const std::size_t eta_tau = base + 1;
  const std::size_t f = base + 2;
  const std::size_t f_tau = base + 3;
  const std::size_t w = base + 4;
  add_doubled_diag(b, lay, eta, v.P1[i], -1.0);
  b.term(eta, eta, v.Z, lay.delay_weight);
  b.scalar_term(eta, eta, v.rho1[i], -lay.F3);
  b.scalar_term(eta, f, v.rho1[i], lay.F4);
  b.term(eta_tau, eta_tau, v.Z, -1.0);
  b.scalar_term(eta_tau, eta_tau, v.rho2[i], -lay.F3);
  b.scalar_term(eta_tau, f_tau, v.rho2[i], lay.F4);
  b.scalar_term(f, f, v.rho1[i], -linalg::eye(lay.nf));
  b.scalar_term(f_tau, f_tau, v.rho2[i], -linalg::eye(lay.nf));

  const Matrix check_e = innovation_map(model, i);
  const Matrix check_d = innovation_noise_map(model, i);
  const Matrix phi_o = selector_matrix(protocol.partition, o);
  for (std::size_t m = 0; m < protocol.nodes(); ++m) {
    if (m == o) continue;
    const Matrix nu_m = lay.Qbar * (selector_matrix(protocol.partition, m) - phi_o);
    const VarRef s = v.sigma.at(i, o)[m];
    b.scalar_term(eta, eta, s, -check_e.transpose() * nu_m * check_e);
    if (with_w) {
      b.scalar_term(eta, w, s, -check_e.transpose() * nu_m * check_d);
      b.scalar_term(w, w, s, -check_d.transpose() * nu_m * check_d);
    }
  }
  if (with_w) b.constant(w, w, -linalg::eye(lay.nw));
}

/// Fixed-gain row Ups W1 with Ups = sum_j c_j diag(P1_j, P1_j).
inline void add_gamma_row(BlockBuilder& b, const AssembledConditions& ac, const Layout& lay,
                          const ClosedLoopBlock& cl, const std::vector<std::pair<std::size_t, double>>& ups,
                          std::size_t yb, std::size_t base, bool with_w) {
  for (const auto& [j, c] : ups) {
    const VarRef pj = ac.vars.P1[j];
    add_doubled_diag(b, lay, yb, pj, -c);
    add_doubled(b, lay, yb, base, pj, cl.A_tilde, c);
    add_doubled(b, lay, yb, base + 2, pj, cl.B_tilde, c);
    add_doubled(b, lay, yb, base + 3, pj, cl.C_tilde, c);
    if (with_w) add_doubled(b, lay, yb, base + 4, pj, cl.D_tilde, c);
  }
}

inline void add_performance(AssembledConditions& ac, const MjnnModel& model, const Protocol& protocol,
                            const Layout& lay, double gamma, double eps) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw Error(ErrorKind::InvalidConfig, "gamma must be positive");
  for (std::size_t i = 0; i < model.mode_count(); ++i) {
    const AugmentedPlant plant = build_augmented(model, protocol.partition, i, 0);
    Matrix m_tilde = Matrix::Zero(lay.d.q, lay.de);
    m_tilde.rightCols(lay.na) = plant.M_bar;
    BlockBuilder b(ac.problem, {lay.de, lay.d.q});
    add_doubled_diag(b, lay, 0, ac.vars.P1[i], 1.0);
    b.constant(0, 1, m_tilde.transpose());
    b.constant(1, 1, gamma * gamma * linalg::eye(lay.d.q));
    ac.problem.add_constraint(std::move(b).build("performance i=" + tag(i), Sense::PositiveDefinite, eps));
  }
}

inline AssembledConditions assemble_fixed_gain(const MjnnModel& model, const Protocol& protocol,
                                               const EstimatorGains& gains, std::optional<double> gamma,
                                               const ConditionOptions& opt) {
  require_valid(model);
  validate_protocol(protocol, model.dims().m);
  require_congruent(gains, model, protocol);
  const Layout lay(model, protocol);
  const bool with_w = gamma.has_value();
  AssembledConditions ac;
  ac.dims = lay.d;
  declare(ac, model, protocol, lay, opt.epsilon, false);
  const auto closed = build_closed_loop(model, protocol, gains);
  const auto xi = lay.xi_blocks(with_w);
  auto blocks_with_y = [&] {
    std::vector<Eigen::Index> s{lay.de};
    s.insert(s.end(), xi.begin(), xi.end());
    return s;
  };
  const std::string kind = with_w ? "performance-stability" : "stability";

  for (std::size_t i = 0; i < model.mode_count(); ++i) {
    const auto sets = known_index_sets(model.transitions, i);
    std::vector<std::vector<std::pair<std::size_t, double>>> families;
    std::vector<std::string> labels;
    if (opt.partial_mode == PartialMode::PooledBound) {
      std::vector<std::pair<std::size_t, double>> ups;
      for (std::size_t j : sets.known) ups.emplace_back(j, *model.transitions.at(i, j));
      for (std::size_t j : sets.unknown) ups.emplace_back(j, 1.0 - sets.known_mass);
      families.push_back(std::move(ups));
      labels.emplace_back("bound");
    } else {
      if (sets.known_mass > 0.0) {
        std::vector<std::pair<std::size_t, double>> ups;
        for (std::size_t j : sets.known) ups.emplace_back(j, *model.transitions.at(i, j) / sets.known_mass);
        families.push_back(std::move(ups));
        labels.emplace_back("known");
      }
      for (std::size_t j : sets.unknown) {
        families.push_back({{j, 1.0}});
        labels.push_back("unknown j=" + tag(j));
      }
    }
    for (std::size_t o = 0; o < protocol.nodes(); ++o) {
      for (std::size_t f = 0; f < families.size(); ++f) {
        BlockBuilder b(ac.problem, blocks_with_y());
        add_gamma_row(b, ac, lay, closed.blocks.at(i, o), families[f], 0, 1, with_w);
        add_omega2(b, ac, model, protocol, lay, i, o, 1, with_w);
        ac.problem.add_constraint(std::move(b).build(
            kind + " i=" + tag(i) + " o=" + tag(o) + " " + labels[f], Sense::NegativeDefinite, opt.epsilon));
      }
    }
  }
  if (with_w) add_performance(ac, model, protocol, lay, *gamma, opt.epsilon);
  return ac;
}

}  // namespace detail

/// Mean-square stability conditions for fixed gains; every row must be known.
inline AssembledConditions assemble_analysis_known(const MjnnModel& model, const Protocol& protocol,
                                                   const EstimatorGains& gains, const ConditionOptions& opt = {}) {
  for (std::size_t i = 0; i < model.transitions.modes(); ++i) {
    if (!model.transitions.row_fully_known(i)) {
      throw Error(ErrorKind::RequiresFullTP, "row " + std::to_string(i + 1) + " has unknown transition entries");
    }
  }
  return detail::assemble_fixed_gain(model, protocol, gains, std::nullopt, opt);
}

/// Mean-square stability conditions for fixed gains under any known/unknown mask.
inline AssembledConditions assemble_analysis_partial(const MjnnModel& model, const Protocol& protocol,
                                                     const EstimatorGains& gains, const ConditionOptions& opt = {}) {
  return detail::assemble_fixed_gain(model, protocol, gains, std::nullopt, opt);
}

/// Stability with disturbance channels plus the l2-linf level gamma.
inline AssembledConditions assemble_performance(const MjnnModel& model, const Protocol& protocol,
                                                const EstimatorGains& gains, double gamma,
                                                const ConditionOptions& opt = {}) {
  return detail::assemble_fixed_gain(model, protocol, gains, gamma, opt);
}

/// Gain design conditions at level gamma. X1_i stands in for P1_i^{-1}; the
/// pairs are registered as inverse couplings and relaxed by [[P1, I], [I, X1]] >= 0.
inline AssembledConditions assemble_synthesis(const MjnnModel& model, const Protocol& protocol, double gamma,
                                              const ConditionOptions& opt = {}) {
  require_valid(model);
  validate_protocol(protocol, model.dims().m);
  const detail::Layout lay(model, protocol);
  AssembledConditions ac;
  ac.dims = lay.d;
  detail::declare(ac, model, protocol, lay, opt.epsilon, true);
  auto& p = ac.problem;
  const auto& v = ac.vars;
  const auto aug = build_augmented_grid(model, protocol.partition);
  const auto xi = lay.xi_blocks(true);
  const Matrix e_sel = lay.S2.transpose();  // eta -> e
  const Matrix w_sel = lay.T2.transpose();  // W -> second wbar

  for (std::size_t i = 0; i < model.mode_count(); ++i) {
    const auto sets = known_index_sets(model.transitions, i);
    for (std::size_t o = 0; o < protocol.nodes(); ++o) {
      const AugmentedPlant& pl = aug.at(i, o);
      const ClosedLoopBlock base = close_loop(pl, Matrix::Zero(lay.na, lay.d.m));
      const VarRef K = v.K.at(i, o);
      // Y rows for the given (j, weight on X, row scale) triples.
      auto emit = [&](const std::vector<std::size_t>& js, double x_weight,
                      const std::vector<double>& row_scale, const std::string& label) {
        std::vector<Eigen::Index> sizes(js.size(), lay.de);
        sizes.insert(sizes.end(), xi.begin(), xi.end());
        BlockBuilder b(p, sizes);
        const std::size_t b0 = js.size();
        for (std::size_t k = 0; k < js.size(); ++k) {
          const double s = row_scale[k];
          detail::add_doubled_diag(b, lay, k, v.X1[js[k]], -x_weight);
          b.constant(k, b0, s * base.A_tilde);
          b.term(k, b0, -s * lay.S2, K, pl.E_bar * e_sel);
          b.constant(k, b0 + 2, s * base.B_tilde);
          b.constant(k, b0 + 3, s * base.C_tilde);
          b.constant(k, b0 + 4, s * base.D_tilde);
          b.term(k, b0 + 4, -s * lay.S2, K, pl.D2_bar * w_sel);
        }
        detail::add_omega2(b, ac, model, protocol, lay, i, o, b0, true);
        p.add_constraint(std::move(b).build("synthesis i=" + detail::tag(i) + " o=" + detail::tag(o) + " " + label,
                                            Sense::NegativeDefinite, opt.epsilon));
      };
      if (sets.known_mass > 0.0) {
        std::vector<double> scale;
        for (std::size_t j : sets.known) scale.push_back(std::sqrt(*model.transitions.at(i, j)));
        emit(sets.known, sets.known_mass, scale, "known");
      }
      for (std::size_t j : sets.unknown) emit({j}, 1.0, {1.0}, "unknown j=" + detail::tag(j));
    }
  }
  detail::add_performance(ac, model, protocol, lay, gamma, opt.epsilon);
  for (std::size_t i = 0; i < model.mode_count(); ++i) {
    BlockBuilder b(p, {lay.na, lay.na});
    b.term(0, 0, v.P1[i]).constant(0, 1, linalg::eye(lay.na)).term(1, 1, v.X1[i]);
    p.add_constraint(std::move(b).build("coupling relaxation i=" + detail::tag(i), Sense::PositiveDefinite, 0.0));
    p.add_inverse_coupling(v.P1[i], v.X1[i]);
  }
  return ac;
}

inline EstimatorGains extract_gains(const AssembledConditions& ac, const Vector& y) {
  if (ac.vars.K.modes() == 0) throw Error(ErrorKind::MalformedProblem, "problem has no gain variables");
  EstimatorGains g(ac.vars.K.modes(), ac.vars.K.nodes(), ac.dims.augmented(), ac.dims.m);
  for (std::size_t i = 0; i < g.modes(); ++i) {
    for (std::size_t o = 0; o < g.nodes(); ++o) g.at(i, o) = ac.problem.value(ac.vars.K.at(i, o), y);
  }
  return g;
}

inline Certificate extract_certificate(const AssembledConditions& ac, const Vector& y,
                                       std::optional<double> gamma = std::nullopt) {
  const auto& v = ac.vars;
  Certificate c;
  for (auto p : v.P1) c.P1.push_back(ac.problem.value(p, y));
  c.Z = ac.problem.value(v.Z, y);
  for (auto r : v.rho1) c.rho1.push_back(ac.problem.scalar_value(r, y));
  for (auto r : v.rho2) c.rho2.push_back(ac.problem.scalar_value(r, y));
  c.sigma = ModeNodeGrid<std::vector<double>>(v.sigma.modes(), v.sigma.nodes(),
                                              std::vector<double>(v.sigma.nodes(), 0.0));
  for (std::size_t i = 0; i < v.sigma.modes(); ++i) {
    for (std::size_t o = 0; o < v.sigma.nodes(); ++o) {
      for (std::size_t m = 0; m < v.sigma.nodes(); ++m) {
        if (v.sigma.at(i, o)[m].valid()) c.sigma.at(i, o)[m] = ac.problem.scalar_value(v.sigma.at(i, o)[m], y);
      }
    }
  }
  c.gamma = gamma;
  return c;
}

/// Coordinates of a certificate in the variables of an assembled problem (gains and
/// coupling variables left at zero).
inline Vector certificate_coordinates(const AssembledConditions& ac, const Certificate& c) {
  const auto& v = ac.vars;
  if (c.P1.size() != v.P1.size() || c.rho1.size() != v.rho1.size() || c.rho2.size() != v.rho2.size() ||
      c.sigma.modes() != v.sigma.modes() || c.sigma.nodes() != v.sigma.nodes()) {
    throw Error(ErrorKind::CertificateMismatch, "certificate does not match the assembled problem");
  }
  const auto& p = ac.problem;
  Vector y = Vector::Zero(static_cast<Eigen::Index>(p.coordinate_count()));
  try {
    for (std::size_t i = 0; i < v.P1.size(); ++i) p.assign(v.P1[i], c.P1[i], y);
    p.assign(v.Z, c.Z, y);
    for (std::size_t i = 0; i < v.rho1.size(); ++i) {
      p.assign(v.rho1[i], Matrix::Constant(1, 1, c.rho1[i]), y);
      p.assign(v.rho2[i], Matrix::Constant(1, 1, c.rho2[i]), y);
    }
    for (std::size_t i = 0; i < v.sigma.modes(); ++i) {
      for (std::size_t o = 0; o < v.sigma.nodes(); ++o) {
        const auto& refs = v.sigma.at(i, o);
        for (std::size_t m = 0; m < refs.size(); ++m) {
          if (refs[m].valid()) p.assign(refs[m], Matrix::Constant(1, 1, c.sigma.at(i, o).at(m)), y);
        }
      }
    }
  } catch (const Error& e) {
    throw Error(ErrorKind::CertificateMismatch, e.what());
  }
  return y;
}

/// Worst violation of the assembled constraints at the certificate; <= 0 means accepted.
inline double certificate_residual(const AssembledConditions& ac, const Certificate& c) {
  const Vector y = certificate_coordinates(ac, c);
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& con : ac.problem.constraints()) worst = std::max(worst, con.violation(y));
  return worst;
}

}  // namespace mjnn
