#pragma once

// Monte-Carlo simulation of plant, scheduler and estimator; ensemble metrics
// and evaluation of the delay-dependent Lyapunov functional along paths.
//
// Conventions: estimator history xhat(d <= 0) = 0, scheduler memory
// ybar(-1) = 0, plant history x(-tau_max..0) supplied (zero by default),
// initial mode drawn uniformly, delays i.i.d. uniform on [tau_min, tau_max].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "mjnn/augmentation.hpp"
#include "mjnn/conditions.hpp"
#include "mjnn/csv.hpp"
#include "mjnn/error.hpp"
#include "mjnn/linalg.hpp"
#include "mjnn/model.hpp"
#include "mjnn/wtod.hpp"

namespace mjnn {

inline constexpr double kOverflowLimit = 1e12;

enum class DisturbanceKind { Zero, DecayingSinusoid, TimeSeries };

/// w(k) and v(k). The decaying sinusoid applies the same scalar to every component:
/// w = a_w exp(-rate k) sin(k), v = a_v exp(-rate k) cos(2k); with literal_exponent
/// the envelope is exp(-(rate^k)) instead.
struct DisturbanceSignal {
  DisturbanceKind kind = DisturbanceKind::Zero;
  double w_amplitude = 1.0;
  double v_amplitude = 2.0;
  double rate = 0.05;
  bool literal_exponent = false;
  std::vector<Vector> w_series;
  std::vector<Vector> v_series;

  static DisturbanceSignal zero() { return {}; }
  static DisturbanceSignal decaying_sinusoid(bool literal_exponent = false) {
    DisturbanceSignal d;
    d.kind = DisturbanceKind::DecayingSinusoid;
    d.literal_exponent = literal_exponent;
    return d;
  }
  static DisturbanceSignal time_series(std::vector<Vector> w, std::vector<Vector> v) {
    DisturbanceSignal d;
    d.kind = DisturbanceKind::TimeSeries;
    d.w_series = std::move(w);
    d.v_series = std::move(v);
    return d;
  }

  [[nodiscard]] double envelope(std::size_t k) const {
    const double kk = static_cast<double>(k);
    return literal_exponent ? std::exp(-std::pow(rate, kk)) : std::exp(-rate * kk);
  }
  [[nodiscard]] Vector w(std::size_t k, Eigen::Index r) const {
    switch (kind) {
      case DisturbanceKind::Zero: return Vector::Zero(r);
      case DisturbanceKind::DecayingSinusoid:
        return Vector::Constant(r, w_amplitude * envelope(k) * std::sin(static_cast<double>(k)));
      case DisturbanceKind::TimeSeries: return w_series.at(k);
    }
    return Vector::Zero(r);
  }
  [[nodiscard]] Vector v(std::size_t k, Eigen::Index r) const {
    switch (kind) {
      case DisturbanceKind::Zero: return Vector::Zero(r);
      case DisturbanceKind::DecayingSinusoid:
        return Vector::Constant(r, v_amplitude * envelope(k) * std::cos(2.0 * static_cast<double>(k)));
      case DisturbanceKind::TimeSeries: return v_series.at(k);
    }
    return Vector::Zero(r);
  }
  [[nodiscard]] bool is_zero() const { return kind == DisturbanceKind::Zero; }
};

/// Uniform doubles in [0, 1) from a 64-bit Mersenne Twister seeded by (seed, run).
class RunRng {
 public:
  RunRng(std::uint64_t seed, std::uint64_t run) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(run), static_cast<std::uint32_t>(run >> 32)};
    gen_.seed(seq);
  }
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 gen_;
};

struct SimConfig {
  std::size_t horizon = 200;
  std::uint64_t seed = 0;
  std::uint64_t run = 0;
  std::optional<std::size_t> initial_mode;
  std::vector<Vector> initial_history;  // x(-tau_max), ..., x(0); empty means zero
};

struct StepRecord {
  std::size_t k = 0;
  std::size_t mode = 0;
  int delay = 0;
  std::size_t node = 0;
  Vector x_bar;    // [x(k); ybar(k-1)]
  Vector x_hat;
  Vector e;
  Vector eta;      // [x_bar; e]
  Vector z_tilde;  // M~ eta
  Vector y;
  Vector y_bar;    // transmitted vector after this step's update
  Vector W;        // [w; v; w; v]
};

struct Trajectory {
  Dimensions dims;
  int tau_max = 0;
  std::vector<Vector> eta_history;  // eta(-tau_max), ..., eta(-1)
  std::vector<StepRecord> steps;    // k = 0..horizon
  std::vector<std::size_t> node_counts;
  double sup_z_sq = 0.0;
  double w_energy = 0.0;  // sum_k ||W(k)||^2

  /// eta(d) for d >= -tau_max.
  [[nodiscard]] const Vector& eta_at(long d) const {
    if (d >= 0) return steps.at(static_cast<std::size_t>(d)).eta;
    return eta_history.at(static_cast<std::size_t>(d + tau_max));
  }
};

namespace detail {

inline void check_overflow(const Vector& v, std::size_t k) {
  for (Eigen::Index l = 0; l < v.size(); ++l) {
    if (!std::isfinite(v(l)) || std::abs(v(l)) > kOverflowLimit) {
      throw Error(ErrorKind::NumericOverflow, "state diverged at step " + std::to_string(k));
    }
  }
}

}  // namespace detail

/// Steps plant, scheduler and estimator from k = 0 to horizon.
inline Trajectory simulate(const MjnnModel& model, const Protocol& protocol, const EstimatorGains& gains,
                           const TransitionCompletion& completion, const DisturbanceSignal& dist,
                           const SimConfig& cfg) {
  require_valid(model);
  validate_protocol(protocol, model.dims().m);
  require_congruent(gains, model, protocol);
  if (completion.modes() != model.mode_count()) {
    throw Error(ErrorKind::DimensionMismatch, "completion size differs from mode count");
  }
  const Dimensions d = model.dims();
  const Eigen::Index na = d.augmented();
  const int tmax = model.delay.tau_max;
  if (dist.kind == DisturbanceKind::TimeSeries &&
      (dist.w_series.size() <= cfg.horizon || dist.v_series.size() <= cfg.horizon)) {
    throw Error(ErrorKind::InvalidConfig, "disturbance time series shorter than horizon + 1");
  }
  const auto aug = build_augmented_grid(model, protocol.partition);
  RunRng rng(cfg.seed, cfg.run);

  Trajectory tr;
  tr.dims = d;
  tr.tau_max = tmax;
  tr.node_counts.assign(protocol.nodes(), 0);

  // History buffers indexed by d + tau_max.
  std::vector<Vector> xbar_hist;
  std::vector<Vector> xhat_hist;
  for (int h = 0; h <= tmax; ++h) {
    Vector xb = Vector::Zero(na);
    if (!cfg.initial_history.empty()) {
      if (cfg.initial_history.size() != static_cast<std::size_t>(tmax + 1)) {
        throw Error(ErrorKind::DimensionMismatch, "initial history must hold tau_max + 1 states");
      }
      const Vector& x0 = cfg.initial_history[static_cast<std::size_t>(h)];
      if (x0.size() != d.n) throw Error(ErrorKind::DimensionMismatch, "initial history state has wrong size");
      xb.head(d.n) = x0;
    }
    xbar_hist.push_back(xb);
    xhat_hist.push_back(Vector::Zero(na));
  }
  for (int h = 0; h < tmax; ++h) {
    Vector eta(2 * na);
    eta << xbar_hist[static_cast<std::size_t>(h)], xbar_hist[static_cast<std::size_t>(h)] - xhat_hist[static_cast<std::size_t>(h)];
    tr.eta_history.push_back(eta);
  }

  std::size_t mode = 0;
  if (cfg.initial_mode) {
    if (*cfg.initial_mode >= model.mode_count()) throw Error(ErrorKind::IndexOutOfRange, "initial mode out of range");
    mode = *cfg.initial_mode;
  } else {
    mode = std::min(model.mode_count() - 1,
                    static_cast<std::size_t>(rng.uniform() * static_cast<double>(model.mode_count())));
  }

  SchedulerState sched = SchedulerState::initial(d.m);
  auto at = [&](std::vector<Vector>& hist, long k) -> Vector& { return hist.at(static_cast<std::size_t>(k + tmax)); };

  for (std::size_t k = 0; k <= cfg.horizon; ++k) {
    const long kk = static_cast<long>(k);
    const int tau = sample_delay(model.delay, rng.uniform());
    const auto& mm = model.modes[mode];
    const Vector w = dist.w(k, d.r);
    const Vector v = dist.v(k, d.r);
    const Vector& xb = at(xbar_hist, kk);
    const Vector& xh = at(xhat_hist, kk);
    const Vector x = xb.head(d.n);

    const Vector y = mm.E * x + mm.D2 * v;
    const std::size_t node = select_node(sched, y, protocol.weights, protocol.partition);
    sched = update_transmitted(sched, y, node, protocol.partition);
    if (k < cfg.horizon) ++tr.node_counts[node];  // one transmission per advancing step

    StepRecord rec;
    rec.k = k;
    rec.mode = mode;
    rec.delay = tau;
    rec.node = node;
    rec.x_bar = xb;
    rec.x_hat = xh;
    rec.e = xb - xh;
    rec.eta.resize(2 * na);
    rec.eta << xb, rec.e;
    rec.z_tilde = mm.M * rec.e.head(d.n);
    rec.y = y;
    rec.y_bar = sched.y_bar;
    rec.W.resize(4 * d.r);
    rec.W << w, v, w, v;
    tr.sup_z_sq = std::max(tr.sup_z_sq, rec.z_tilde.squaredNorm());
    tr.w_energy += rec.W.squaredNorm();
    tr.steps.push_back(rec);
    if (k == cfg.horizon) break;

    // Plant step; the scheduler memory becomes ybar(k).
    const Vector x_del = at(xbar_hist, kk - tau).head(d.n);
    Vector xb_next(na);
    xb_next.head(d.n) = mm.A * x + mm.B * model.activation.apply(x) + mm.C * model.activation.apply(x_del) + mm.D1 * w;
    xb_next.tail(d.m) = sched.y_bar;

    // Estimator driven by the transmitted vector.
    const AugmentedPlant& p = aug.at(mode, node);
    const Vector xh_del = at(xhat_hist, kk - tau);
    const Vector xh_next = p.A_bar * xh + p.B_bar * augmented_activation(model, xh) +
                           p.C_bar * augmented_activation(model, xh_del) +
                           gains.at(mode, node) * (sched.y_bar - p.E_bar * xh);
    detail::check_overflow(xb_next, k + 1);
    detail::check_overflow(xh_next, k + 1);
    xbar_hist.push_back(xb_next);
    xhat_hist.push_back(xh_next);
    mode = sample_next_mode(completion, mode, rng.uniform());
  }
  return tr;
}

/// One step of the stacked error system
/// eta(k+1) = A~ eta + B~ f~(k) + C~ f~_tau(k) + D~ W from given eta(k) and eta(k - tau).
inline Vector stacked_step(const MjnnModel& model, const ClosedLoopSystem& sys, std::size_t mode, std::size_t node,
                           const Vector& eta, const Vector& eta_tau, const Vector& W) {
  const Eigen::Index na = sys.dims.augmented();
  const auto& b = sys.blocks.at(mode, node);
  auto f_tilde = [&](const Vector& et) {
    const Vector xb = et.head(na);
    return stacked_activation(model, xb, xb - et.tail(na));
  };
  return b.A_tilde * eta + b.B_tilde * f_tilde(eta) + b.C_tilde * f_tilde(eta_tau) + b.D_tilde * W;
}

struct EnsembleMetrics {
  std::size_t runs = 0;
  std::size_t horizon = 0;
  std::vector<double> ms_eta;      // per-step mean ||eta||^2
  std::vector<double> ms_error;    // per-step mean ||e||^2
  std::vector<double> ms_z;        // per-step mean ||z~||^2
  std::vector<double> se_z;        // standard error of ms_z
  double sup_ms_z = 0.0;           // sup_k mean ||z~(k)||^2
  double sup_ms_z_se = 0.0;        // standard error at the maximizing step
  double w_energy = 0.0;           // mean sum ||W||^2 (W stacks wbar twice)
  double wbar_energy = 0.0;        // mean sum ||[w; v]||^2
  std::optional<double> ratio;         // sup_ms_z / w_energy, absent when the energy is zero
  std::optional<double> ratio_single;  // sup_ms_z / wbar_energy
  double ratio_se = 0.0;
  std::vector<std::size_t> node_counts;
};

inline EnsembleMetrics empirical_l2linf(const MjnnModel& model, const Protocol& protocol,
                                        const EstimatorGains& gains, const TransitionCompletion& completion,
                                        const DisturbanceSignal& dist, std::size_t runs, std::size_t horizon,
                                        std::uint64_t seed) {
  if (runs < 1) throw Error(ErrorKind::InvalidConfig, "runs must be at least 1");
  EnsembleMetrics m;
  m.runs = runs;
  m.horizon = horizon;
  m.ms_eta.assign(horizon + 1, 0.0);
  m.ms_error.assign(horizon + 1, 0.0);
  m.ms_z.assign(horizon + 1, 0.0);
  m.se_z.assign(horizon + 1, 0.0);
  std::vector<double> z_sq_sum(horizon + 1, 0.0);
  m.node_counts.assign(protocol.nodes(), 0);
  for (std::size_t r = 0; r < runs; ++r) {
    SimConfig cfg;
    cfg.horizon = horizon;
    cfg.seed = seed;
    cfg.run = r;
    const auto tr = simulate(model, protocol, gains, completion, dist, cfg);
    for (std::size_t k = 0; k <= horizon; ++k) {
      const auto& s = tr.steps[k];
      m.ms_eta[k] += s.eta.squaredNorm();
      m.ms_error[k] += s.e.squaredNorm();
      const double z = s.z_tilde.squaredNorm();
      m.ms_z[k] += z;
      z_sq_sum[k] += z * z;
    }
    m.w_energy += tr.w_energy;
    for (std::size_t o = 0; o < m.node_counts.size(); ++o) m.node_counts[o] += tr.node_counts[o];
  }
  const double R = static_cast<double>(runs);
  std::size_t arg = 0;
  for (std::size_t k = 0; k <= horizon; ++k) {
    m.ms_eta[k] /= R;
    m.ms_error[k] /= R;
    m.ms_z[k] /= R;
    const double var = runs > 1 ? std::max(0.0, (z_sq_sum[k] / R - m.ms_z[k] * m.ms_z[k]) * R / (R - 1.0)) : 0.0;
    m.se_z[k] = std::sqrt(var / R);
    if (m.ms_z[k] > m.ms_z[arg]) arg = k;
  }
  m.sup_ms_z = m.ms_z[arg];
  m.sup_ms_z_se = m.se_z[arg];
  m.w_energy /= R;
  m.wbar_energy = m.w_energy / 2.0;
  if (m.w_energy > 0.0) {
    m.ratio = m.sup_ms_z / m.w_energy;
    m.ratio_single = m.sup_ms_z / m.wbar_energy;
    m.ratio_se = m.sup_ms_z_se / m.w_energy;
  }
  return m;
}

struct DecayReport {
  std::vector<double> ms_eta;
  std::optional<std::size_t> threshold_step;  // first k with mean ||eta||^2 < 1e-6 * initial; none = NoDecay
};

/// Random initial plant histories with entries uniform in [-scale, scale], W = 0.
inline DecayReport mean_square_decay(const MjnnModel& model, const Protocol& protocol, const EstimatorGains& gains,
                                     const TransitionCompletion& completion, std::size_t runs, std::size_t horizon,
                                     std::uint64_t seed, double initial_scale) {
  if (runs < 1) throw Error(ErrorKind::InvalidConfig, "runs must be at least 1");
  const Dimensions d = model.dims();
  DecayReport rep;
  rep.ms_eta.assign(horizon + 1, 0.0);
  for (std::size_t r = 0; r < runs; ++r) {
    SimConfig cfg;
    cfg.horizon = horizon;
    cfg.seed = seed;
    cfg.run = r;
    // Initial histories come from a stream separate from the mode/delay stream.
    RunRng init(seed ^ 0x9e3779b97f4a7c15ULL, r);
    for (int h = 0; h <= model.delay.tau_max; ++h) {
      Vector x0(d.n);
      for (Eigen::Index l = 0; l < d.n; ++l) x0(l) = initial_scale * (2.0 * init.uniform() - 1.0);
      cfg.initial_history.push_back(x0);
    }
    Trajectory tr;
    try {
      tr = simulate(model, protocol, gains, completion, DisturbanceSignal::zero(), cfg);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NumericOverflow) throw;
      rep.threshold_step.reset();
      std::fill(rep.ms_eta.begin(), rep.ms_eta.end(), std::numeric_limits<double>::infinity());
      return rep;
    }
    for (std::size_t k = 0; k <= horizon; ++k) rep.ms_eta[k] += tr.steps[k].eta.squaredNorm();
  }
  for (auto& v : rep.ms_eta) v /= static_cast<double>(runs);
  const double start = rep.ms_eta.front();
  for (std::size_t k = 0; k <= horizon; ++k) {
    if (rep.ms_eta[k] < 1e-6 * start || (start == 0.0 && rep.ms_eta[k] == 0.0)) {
      rep.threshold_step = k;
      break;
    }
  }
  return rep;
}

struct LyapunovReport {
  std::vector<double> V;               // V(k), k = 0..horizon
  std::vector<double> delta;           // V(k+1) - V(k) along the path
  std::vector<double> expected_delta;  // E[V(k+1) | path up to k] - V(k)
};

/// V(k) = eta' P_{r_k} eta + sum_{d=k-tau(k)}^{k-1} eta(d)' Z eta(d)
///        + sum_{l=k-tau_max+1}^{k-tau_min} sum_{d=l}^{k-1} eta(d)' Z eta(d).
inline LyapunovReport lyapunov_delta_check(const Trajectory& tr, const Certificate& cert, const MjnnModel& model,
                                           const TransitionCompletion& completion) {
  const Dimensions d = tr.dims;
  const Eigen::Index na = d.augmented();
  if (cert.P1.size() != model.mode_count() || cert.Z.rows() != 2 * na || cert.Z.cols() != 2 * na) {
    throw Error(ErrorKind::CertificateMismatch, "certificate does not match the model dimensions");
  }
  for (const auto& p : cert.P1) {
    if (p.rows() != na || p.cols() != na) throw Error(ErrorKind::CertificateMismatch, "P1 block has wrong size");
  }
  const int tmin = model.delay.tau_min;
  const int tmax = model.delay.tau_max;
  const std::size_t H = tr.steps.size();
  // q(d) = eta(d)' Z eta(d) for d = -tau_max..H-1, prefix sums for window sums.
  std::vector<double> prefix(static_cast<std::size_t>(tmax) + H + 1, 0.0);
  for (long dd = -tmax; dd < static_cast<long>(H); ++dd) {
    const Vector& e = tr.eta_at(dd);
    const auto idx = static_cast<std::size_t>(dd + tmax);
    prefix[idx + 1] = prefix[idx] + e.dot(cert.Z * e);
  }
  auto window = [&](long from, long to) {  // sum_{d=from}^{to} q(d), empty if from > to
    if (from > to) return 0.0;
    return prefix[static_cast<std::size_t>(to + tmax + 1)] - prefix[static_cast<std::size_t>(from + tmax)];
  };
  auto tail = [&](long k, int tau) {
    double s = window(k - tau, k - 1);
    for (long l = k - tmax + 1; l <= k - tmin; ++l) s += window(l, k - 1);
    return s;
  };
  auto quad = [&](const Vector& e, std::size_t mode) {
    const Matrix& P1 = cert.P1[mode];
    return e.head(na).dot(P1 * e.head(na)) + e.tail(na).dot(P1 * e.tail(na));
  };

  LyapunovReport rep;
  for (std::size_t k = 0; k < H; ++k) {
    const auto& s = tr.steps[k];
    rep.V.push_back(quad(s.eta, s.mode) + tail(static_cast<long>(k), s.delay));
  }
  const Matrix& pi = completion.matrix();
  const int span = tmax - tmin + 1;
  for (std::size_t k = 0; k + 1 < H; ++k) {
    rep.delta.push_back(rep.V[k + 1] - rep.V[k]);
    const auto& s = tr.steps[k];
    const Vector& next = tr.steps[k + 1].eta;
    double ev = 0.0;
    for (std::size_t j = 0; j < model.mode_count(); ++j) {
      const double p = pi(static_cast<Eigen::Index>(s.mode), static_cast<Eigen::Index>(j));
      if (p > 0.0) ev += p * quad(next, j);
    }
    double et = 0.0;
    for (int t = tmin; t <= tmax; ++t) et += tail(static_cast<long>(k + 1), t);
    ev += et / span;
    rep.expected_delta.push_back(ev - rep.V[k]);
  }
  return rep;
}

/// Ensemble-averaged pathwise and conditional Lyapunov increments with W = 0.
struct LyapunovEnsemble {
  std::vector<double> mean_delta;
  std::vector<double> mean_expected_delta;
  double max_expected_delta = -std::numeric_limits<double>::infinity();
};

inline LyapunovEnsemble lyapunov_ensemble(const MjnnModel& model, const Protocol& protocol,
                                          const EstimatorGains& gains, const TransitionCompletion& completion,
                                          const Certificate& cert, std::size_t runs, std::size_t horizon,
                                          std::uint64_t seed, double initial_scale) {
  const Dimensions d = model.dims();
  LyapunovEnsemble out;
  out.mean_delta.assign(horizon, 0.0);
  out.mean_expected_delta.assign(horizon, 0.0);
  for (std::size_t r = 0; r < runs; ++r) {
    SimConfig cfg;
    cfg.horizon = horizon;
    cfg.seed = seed;
    cfg.run = r;
    RunRng init(seed ^ 0x9e3779b97f4a7c15ULL, r);
    for (int h = 0; h <= model.delay.tau_max; ++h) {
      Vector x0(d.n);
      for (Eigen::Index l = 0; l < d.n; ++l) x0(l) = initial_scale * (2.0 * init.uniform() - 1.0);
      cfg.initial_history.push_back(x0);
    }
    const auto tr = simulate(model, protocol, gains, completion, DisturbanceSignal::zero(), cfg);
    const auto rep = lyapunov_delta_check(tr, cert, model, completion);
    for (std::size_t k = 0; k < horizon; ++k) {
      out.mean_delta[k] += rep.delta[k] / static_cast<double>(runs);
      out.mean_expected_delta[k] += rep.expected_delta[k] / static_cast<double>(runs);
      out.max_expected_delta = std::max(out.max_expected_delta, rep.expected_delta[k]);
    }
  }
  return out;
}

/// k, mode, node, x1..xn, e1..en, ztilde_sq, V (mode and node 1-based; V empty without values).
inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr, const std::vector<double>* V = nullptr) {
  const auto n = tr.dims.n;
  os << "k,mode,node";
  for (Eigen::Index l = 0; l < n; ++l) os << ",x" << l + 1;
  for (Eigen::Index l = 0; l < n; ++l) os << ",e" << l + 1;
  os << ",ztilde_sq,V\n";
  for (std::size_t k = 0; k < tr.steps.size(); ++k) {
    const auto& s = tr.steps[k];
    os << s.k << ',' << s.mode + 1 << ',' << s.node + 1;
    for (Eigen::Index l = 0; l < n; ++l) os << ',' << fmt17(s.x_bar(l));
    for (Eigen::Index l = 0; l < n; ++l) os << ',' << fmt17(s.e(l));
    os << ',' << fmt17(s.z_tilde.squaredNorm()) << ',';
    if (V != nullptr && k < V->size()) os << fmt17((*V)[k]);
    os << '\n';
  }
}

/// k, ms_eta, ms_error, ms_ztilde, se_ztilde.
inline void write_ensemble_csv(std::ostream& os, const EnsembleMetrics& m) {
  os << "k,ms_eta,ms_error,ms_ztilde,se_ztilde\n";
  for (std::size_t k = 0; k < m.ms_eta.size(); ++k) {
    os << k << ',' << fmt17(m.ms_eta[k]) << ',' << fmt17(m.ms_error[k]) << ','
       << fmt17(m.ms_z[k]) << ',' << fmt17(m.se_z[k]) << '\n';
  }
}

}  // namespace mjnn
