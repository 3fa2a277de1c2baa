// Command-line front end: validate, synthesize, verify, simulate, sweep.
// Exit codes: 0 success, 1 infeasible or invalid input, 2 I/O failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mjnn/io.hpp"
#include "mjnn/simulation.hpp"
#include "mjnn/synthesis.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mjnn;

namespace {

constexpr int kOk = 0;
constexpr int kFail = 1;
constexpr int kIoError = 2;

struct RunConfig {
  std::string command;
  std::string model_path;
  std::string gains_path;
  std::string certificate_path;
  std::optional<double> gamma;
  std::vector<double> bracket;
  std::size_t horizon = 200;
  std::size_t runs = 100;
  std::uint64_t seed = 0;
  double mu = 1e-6;
  int max_iters = 50;
  std::string out = "out";
  bool literal_exponent = false;
  bool zero_disturbance = false;
};

json to_json(const RunConfig& c) {
  json j{{"command", c.command},     {"model", c.model_path}, {"horizon", c.horizon},
         {"runs", c.runs},           {"seed", c.seed},        {"mu", c.mu},
         {"max_iters", c.max_iters}, {"out", c.out},          {"literal_exponent", c.literal_exponent},
         {"zero_disturbance", c.zero_disturbance}};
  if (!c.gains_path.empty()) j["gains"] = c.gains_path;
  if (!c.certificate_path.empty()) j["certificate"] = c.certificate_path;
  if (c.gamma) j["gamma"] = *c.gamma;
  if (!c.bracket.empty()) j["gamma_bracket"] = c.bracket;
  return j;
}

// Fields of an optional "run" object in the model file, applied unless the flag was given.
void apply_file_defaults(RunConfig& c, const json& run, const CLI::App& sub) {
  auto unset = [&](const char* flag) { return sub.count(flag) == 0; };
  if (run.contains("gamma") && unset("--gamma") && unset("--gamma-bracket")) c.gamma = run.at("gamma").get<double>();
  if (run.contains("gamma_bracket") && unset("--gamma-bracket") && unset("--gamma")) {
    c.bracket = run.at("gamma_bracket").get<std::vector<double>>();
  }
  if (run.contains("horizon") && unset("--horizon")) c.horizon = run.at("horizon").get<std::size_t>();
  if (run.contains("runs") && unset("--runs")) c.runs = run.at("runs").get<std::size_t>();
  if (run.contains("seed") && unset("--seed")) c.seed = run.at("seed").get<std::uint64_t>();
  if (run.contains("mu") && unset("--mu")) c.mu = run.at("mu").get<double>();
  if (run.contains("max_iters") && unset("--max-iters")) c.max_iters = run.at("max_iters").get<int>();
  if (run.contains("literal_exponent") && unset("--literal-exponent")) {
    c.literal_exponent = run.at("literal_exponent").get<bool>();
  }
}

void write_csv(const fs::path& path, const std::string& text) { io::write_text(path, text); }

TransitionCompletion completion_of(const io::ModelFile& f) {
  return f.completion ? TransitionCompletion::from_matrix(f.model.transitions, *f.completion)
                      : TransitionCompletion::uniform_fill(f.model.transitions);
}

EstimatorGains gains_of(const RunConfig& c, const io::ModelFile& f) {
  if (!c.gains_path.empty()) return io::load_gains(c.gains_path);
  if (f.gains) return *f.gains;
  throw Error(ErrorKind::InvalidConfig, "this command needs --gains or a gains grid in the model file");
}

std::pair<double, double> bracket_of(const RunConfig& c) {
  if (c.bracket.size() != 2) throw Error(ErrorKind::InvalidConfig, "--gamma-bracket takes LO HI");
  return {c.bracket[0], c.bracket[1]};
}

CclConfig ccl_config(const RunConfig& c) {
  CclConfig cfg;
  cfg.mu = c.mu;
  cfg.max_iterations = c.max_iters;
  return cfg;
}

int cmd_validate(const io::ModelFile& f) {
  const auto report = validate_model(f.model);
  for (const auto& v : report.violations) std::cout << to_string(v.kind) << ": " << v.message << '\n';
  if (!report.ok()) return kFail;
  validate_protocol(f.protocol, f.model.dims().m);
  const double worst = max_sector_residual_on_grid(f.model, 10.0, 41);
  if (worst > 1e-12) {
    std::cout << "warning: sector condition violated on a sample grid (worst residual " << fmt17(worst) << ")\n";
  }
  std::cout << "valid: " << f.model.mode_count() << " modes, " << f.protocol.nodes() << " nodes\n";
  return kOk;
}

void write_synthesis(const fs::path& out, const SynthesisResult& r) {
  std::ostringstream trace;
  write_ccl_trace(trace, r.trace);
  write_csv(out / "ccl_trace.csv", trace.str());
  io::save_gains(out / "gains.json", r.gains);
  if (r.verification && r.verification->certificate) {
    io::write_text(out / "certificate.json", io::certificate_to_json(*r.verification->certificate).dump(2) + "\n");
  }
  json status{{"status", std::string(to_string(r.status))}, {"gamma", r.gamma}, {"iterations", r.trace.size()}};
  io::write_text(out / "status.json", status.dump(2) + "\n");
}

int cmd_synthesize(const RunConfig& c, const io::ModelFile& f) {
  const fs::path out(c.out);
  SynthesisResult r;
  if (c.gamma) {
    r = ccl_synthesize(f.model, f.protocol, *c.gamma, ccl_config(c));
  } else {
    const auto [lo, hi] = bracket_of(c);
    r = bisect_gamma(f.model, f.protocol, lo, hi, ccl_config(c)).best;
  }
  write_synthesis(out, r);
  std::cout << to_string(r.status) << " at gamma " << fmt17(r.gamma) << " after " << r.trace.size()
            << " iterations\n";
  return r.status == CclStatus::Converged ? kOk : kFail;
}

int cmd_verify(const RunConfig& c, const io::ModelFile& f) {
  const auto gains = gains_of(c, f);
  const fs::path out(c.out);
  if (c.gamma) {
    const auto r = verify_gains(f.model, f.protocol, gains, *c.gamma);
    if (!r.feasible()) {
      std::cout << "infeasible at gamma " << fmt17(*c.gamma) << " (" << to_string(r.outcome.status) << ")\n";
      return kFail;
    }
    io::write_text(out / "certificate.json", io::certificate_to_json(*r.certificate).dump(2) + "\n");
    std::cout << "feasible at gamma " << fmt17(*c.gamma) << '\n';
    return kOk;
  }
  const auto [lo, hi] = bracket_of(c);
  const auto b = bisect_verify_gamma(f.model, f.protocol, gains, lo, hi);
  std::ostringstream log;
  log << "gamma,status\n";
  for (const auto& [g, s] : b.probes) log << fmt17(g) << ',' << to_string(s) << '\n';
  write_csv(out / "verify_bracket.csv", log.str());
  if (!b.gamma) {
    std::cout << "infeasible at gamma " << fmt17(hi) << '\n';
    return kFail;
  }
  io::write_text(out / "certificate.json", io::certificate_to_json(*b.certificate).dump(2) + "\n");
  std::cout << "feasible at gamma " << fmt17(*b.gamma) << '\n';
  return kOk;
}

int cmd_simulate(const RunConfig& c, const io::ModelFile& f) {
  const auto gains = gains_of(c, f);
  const auto completion = completion_of(f);
  const auto dist = c.zero_disturbance ? DisturbanceSignal::zero() : DisturbanceSignal::decaying_sinusoid(c.literal_exponent);
  const fs::path out(c.out);

  SimConfig cfg;
  cfg.horizon = c.horizon;
  cfg.seed = c.seed;
  const auto tr = simulate(f.model, f.protocol, gains, completion, dist, cfg);
  std::optional<LyapunovReport> lyap;
  if (!c.certificate_path.empty()) {
    const auto cert = io::certificate_from_json(io::read_json(c.certificate_path));
    lyap = lyapunov_delta_check(tr, cert, f.model, completion);
  }
  std::ostringstream traj;
  write_trajectory_csv(traj, tr, lyap ? &lyap->V : nullptr);
  write_csv(out / "trajectory.csv", traj.str());

  const auto m = empirical_l2linf(f.model, f.protocol, gains, completion, dist, c.runs, c.horizon, c.seed);
  std::ostringstream ens;
  write_ensemble_csv(ens, m);
  write_csv(out / "ensemble.csv", ens.str());
  json metrics{{"runs", m.runs},
               {"horizon", m.horizon},
               {"sup_ms_ztilde", m.sup_ms_z},
               {"sup_ms_ztilde_se", m.sup_ms_z_se},
               {"w_energy", m.w_energy},
               {"wbar_energy", m.wbar_energy},
               {"node_counts", m.node_counts}};
  metrics["ratio"] = m.ratio ? json(*m.ratio) : json("NotApplicable");
  metrics["ratio_single"] = m.ratio_single ? json(*m.ratio_single) : json("NotApplicable");
  metrics["ratio_se"] = m.ratio_se;
  io::write_text(out / "metrics.json", metrics.dump(2) + "\n");
  std::cout << "simulated " << m.runs << " runs over " << m.horizon << " steps; ratio "
            << (m.ratio ? fmt17(*m.ratio) : std::string("NotApplicable")) << '\n';
  return kOk;
}

int cmd_sweep(const RunConfig& c, const io::ModelFile& f) {
  const auto [lo, hi] = bracket_of(c);
  const fs::path out(c.out);
  const auto b = bisect_gamma(f.model, f.protocol, lo, hi, ccl_config(c));
  std::ostringstream log;
  log << "gamma,status,iterations\n";
  for (const auto& p : b.probes) log << fmt17(p.gamma) << ',' << to_string(p.status) << ',' << p.iterations << '\n';
  write_csv(out / "sweep.csv", log.str());
  write_synthesis(out, b.best);
  std::cout << "smallest converged gamma " << fmt17(b.upper) << ", largest failed " << fmt17(b.lower) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mode- and protocol-dependent state estimator design and simulation"};
  app.require_subcommand(1);
  RunConfig c;

  auto add_model = [&](CLI::App* s) { s->add_option("model", c.model_path, "model file (JSON)")->required(); };
  auto add_gamma = [&](CLI::App* s) {
    auto* g = s->add_option("--gamma", c.gamma, "performance level");
    auto* b = s->add_option("--gamma-bracket", c.bracket, "bisection bracket LO HI")->expected(2);
    g->excludes(b);
  };
  auto add_out = [&](CLI::App* s) { s->add_option("--out", c.out, "output directory"); };
  auto add_ccl = [&](CLI::App* s) {
    s->add_option("--mu", c.mu, "convergence threshold on the complementarity residual");
    s->add_option("--max-iters", c.max_iters, "iteration cap");
  };
  auto add_gains = [&](CLI::App* s) { s->add_option("--gains", c.gains_path, "gains file (JSON)"); };

  auto* validate = app.add_subcommand("validate", "check a model file");
  add_model(validate);

  auto* synthesize = app.add_subcommand("synthesize", "design gains");
  add_model(synthesize);
  add_gamma(synthesize);
  add_ccl(synthesize);
  add_out(synthesize);

  auto* verify = app.add_subcommand("verify", "certify fixed gains");
  add_model(verify);
  add_gains(verify);
  add_gamma(verify);
  add_out(verify);

  auto* sim = app.add_subcommand("simulate", "Monte-Carlo simulation with fixed gains");
  add_model(sim);
  add_gains(sim);
  add_out(sim);
  sim->add_option("--horizon", c.horizon, "steps per run");
  sim->add_option("--runs", c.runs, "ensemble size")->check(CLI::PositiveNumber);
  sim->add_option("--seed", c.seed, "random seed");
  sim->add_flag("--literal-exponent", c.literal_exponent, "use the exp(-(0.05^k)) disturbance envelope");
  sim->add_flag("--zero-disturbance", c.zero_disturbance, "set w = v = 0");
  sim->add_option("--certificate", c.certificate_path, "certificate file for the V column");

  auto* sweep = app.add_subcommand("sweep", "bisect the smallest achievable level");
  add_model(sweep);
  sweep->add_option("--gamma-bracket", c.bracket, "bisection bracket LO HI")->expected(2)->required();
  add_ccl(sweep);
  add_out(sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kFail;
  }

  CLI::App* sub = app.get_subcommands().front();
  c.command = sub->get_name();
  try {
    const json raw = io::read_json(c.model_path);
    const auto file = io::model_from_json(raw);
    if (raw.contains("run")) apply_file_defaults(c, raw.at("run"), *sub);
    if (c.command == "validate") return cmd_validate(file);
    if ((c.command == "synthesize" || c.command == "verify") && !c.gamma && c.bracket.empty()) {
      throw Error(ErrorKind::InvalidConfig, "give --gamma or --gamma-bracket");
    }
    io::write_text(fs::path(c.out) / "config.json", to_json(c).dump(2) + "\n");
    if (c.command == "synthesize") return cmd_synthesize(c, file);
    if (c.command == "verify") return cmd_verify(c, file);
    if (c.command == "simulate") return cmd_simulate(c, file);
    return cmd_sweep(c, file);
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return e.kind() == ErrorKind::Io ? kIoError : kFail;
  } catch (const json::exception& e) {
    std::cerr << "InvalidConfig: " << e.what() << '\n';
    return kFail;
  }
}
