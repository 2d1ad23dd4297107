#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "checks.hpp"
#include "json.hpp"
#include "mfh/csv.hpp"
#include "mfh/model_io.hpp"
#include "mfh/riccati.hpp"
#include "mfh/rl.hpp"
#include "mfh/simulate.hpp"

namespace fs = std::filesystem;
using namespace mfh;

namespace {

struct Config {
  std::string model;
  double gamma = 5.0;
  double dt = 1e-3;
  std::uint64_t seed = 1;
  long particles = 10000;
  long paths = 10000;
  std::string out = ".";
  std::string mode;

  // gamma-search
  double lo = 0.1, hi = 5.0, tol = 1e-4;
  // simulate
  std::vector<double> x0{1.0, 1.0};
  double amplitude = 1.0;
  // rl
  int states = 30, intervals = 10, substeps = 20, max_iter = 100;
  double eps = 1e-6;
  bool strip_jumps = false, save_data = false;
  // verify
  bool strict = false;
};

std::ofstream open_out(const Config& c, const std::string& name) {
  fs::create_directories(c.out);
  const fs::path p = fs::path(c.out) / name;
  std::ofstream f(p);
  if (!f) throw InvalidArgument("cannot write " + p.string());
  return f;
}

std::string num(double x) { return fmt17(x); }

void push_matrix(std::vector<double>& row, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
}

void push_names(std::vector<std::string>& head, const std::string& name, Eigen::Index r, Eigen::Index c) {
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) head.push_back(name + "_" + std::to_string(i + 1) + std::to_string(j + 1));
}

void push_upper(std::vector<double>& row, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = i; j < m.cols(); ++j) row.push_back(m(i, j));
}

void push_upper_names(std::vector<std::string>& head, const std::string& name, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) head.push_back(name + "_" + std::to_string(i + 1) + std::to_string(j + 1));
}

// ---------------------------------------------------------------------------

int cmd_riccati(const Config& c) {
  const MeanFieldJumpModel m = load_model(c.model);
  GdreMode mode = GdreMode::paper;
  if (c.mode == "stage") mode = GdreMode::stage;
  else if (!c.mode.empty() && c.mode != "paper") throw InvalidArgument("--mode must be paper or stage for riccati");
  const RiccatiTrajectory traj = solve_gdre(m, c.gamma, c.dt, mode);
  std::ofstream f = open_out(c, "riccati.csv");
  write_trajectory_csv(traj, f);
  std::cout << "gamma: " << num(c.gamma) << "\n"
            << "dt: " << num(c.dt) << "\n"
            << "rows: " << traj.grid.size() << "\n";
  if (traj.feasible) {
    std::cout << "verdict: feasible\n";
  } else {
    const RiccatiFailure& fail = *traj.failure;
    std::cout << "verdict: infeasible\n"
              << "failure_time: " << num(fail.t) << "\n"
              << "failure_sigma: " << fail.which << "\n"
              << "failure_min_eig: " << num(fail.min_eig) << "\n";
  }
  return 0;
}

int cmd_gamma_search(const Config& c) {
  const MeanFieldJumpModel m = load_model(c.model);
  const GammaSearch g = gamma_threshold(m, c.lo, c.hi, c.tol, c.dt, c.mode == "stage" ? GdreMode::stage : GdreMode::paper);
  std::ofstream f = open_out(c, "gamma_search.csv");
  write_csv_header(f, {"gamma", "feasible"});
  for (const auto& [gamma, ok] : g.probes) write_csv_row(f, {gamma, ok ? 1.0 : 0.0});
  std::cout << "gamma_star: " << num(g.gamma_star) << "\n"
            << "bracket: " << num(g.lo) << " " << num(g.hi) << "\n"
            << "probes: " << g.probes.size() << "\n"
            << "monotone: " << (g.monotone ? "yes" : "no") << "\n";
  return 0;
}

int cmd_simulate(const Config& c) {
  const MeanFieldJumpModel m = load_model(c.model);
  const int n = m.dims.n;
  if (static_cast<int>(c.x0.size()) != n) throw InvalidArgument("--x0 needs " + std::to_string(n) + " entries");
  const Vector x0 = Eigen::Map<const Vector>(c.x0.data(), n);
  const RiccatiTrajectory traj = solve_gdre(m, c.gamma, c.dt);
  if (!traj.feasible)
    throw InvalidArgument("Riccati equations infeasible at gamma " + num(c.gamma) + " (failure at t=" +
                          num(traj.failure->t) + ", " + traj.failure->which + "); no saddle policy to simulate");

  PolicySpec v = PolicySpec::disturbance(traj.gains);
  const std::string mode = c.mode.empty() ? "worst" : c.mode;
  if (mode == "zero") v = PolicySpec::zero();
  else if (mode == "random") v = PolicySpec::white_noise(c.amplitude);
  else if (mode != "worst") throw InvalidArgument("--mode must be worst, zero or random for simulate");

  const PathBundle b =
      simulate(m, PolicySpec::control(traj.gains), v, NoiseSpec{c.seed, c.particles, c.dt}, InitialState::deterministic(x0));
  std::ofstream f = open_out(c, "means.csv");
  write_means_csv(b, f);

  const auto [j1, se1] = estimate_cost(b, CostKind::J1, c.gamma);
  const auto [j2, se2] = estimate_cost(b, CostKind::J2, c.gamma);
  const auto [p1, p2] = value_at(traj, x0, Matrix::Zero(n, n));
  std::cout << "disturbance: " << mode << "\n"
            << "particles: " << b.particles << "\n"
            << "J1_estimate: " << num(j1) << "\n"
            << "J1_stderr: " << num(se1) << "\n"
            << "J2_estimate: " << num(j2) << "\n"
            << "J2_stderr: " << num(se2) << "\n";
  if (mode == "worst") std::cout << "J1_predicted: " << num(p1) << "\n" << "J2_predicted: " << num(p2) << "\n";
  std::string gain = "undefined (zero disturbance)";
  try {
    gain = num(empirical_gain(b));
  } catch (const ZeroDisturbance&) {
  }
  std::cout << "empirical_gain: " << gain << "\n";
  return 0;
}

void write_dataset(const Config& c, const DataSet& d, const Dims& dims) {
  fs::create_directories(fs::path(c.out) / "data");
  const Eigen::Index w = dims.n + dims.nu + dims.nv;
  std::vector<std::string> head{"state", "interval", "t0", "t1"};
  for (int i = 0; i < dims.n; ++i) head.push_back("x_start_" + std::to_string(i + 1));
  for (int i = 0; i < dims.n; ++i) head.push_back("mean_end_" + std::to_string(i + 1));
  push_upper_names(head, "cov_end", dims.n);
  push_upper_names(head, "S_dev", w);
  push_upper_names(head, "S_mean", w);
  std::ofstream f(fs::path(c.out) / "data" / "moments.csv");
  write_csv_header(f, head);
  for (std::size_t q = 0; q < d.states(); ++q)
    for (std::size_t i = 0; i < d.moments.size(); ++i) {
      const IntervalMoments& mo = d.moments[i][q];
      std::vector<double> row{double(q), double(i), d.grid[i], d.grid[i + 1]};
      for (Eigen::Index k = 0; k < mo.x_start.size(); ++k) row.push_back(mo.x_start(k));
      for (Eigen::Index k = 0; k < mo.mean_end.size(); ++k) row.push_back(mo.mean_end(k));
      push_upper(row, mo.cov_end);
      push_upper(row, mo.S_dev);
      push_upper(row, mo.S_mean);
      write_csv_row(f, row);
    }
  nlohmann::json man{{"file", "moments.csv"},
                     {"states", d.states()},
                     {"intervals", d.moments.size()},
                     {"substeps", d.substeps},
                     {"paths", d.paths},
                     {"seed", c.seed},
                     {"ordering", "w = (x - Ex, u - Eu, v - Ev) for S_dev, (Ex, Eu, Ev) for S_mean"}};
  std::ofstream(fs::path(c.out) / "data" / "manifest.json") << man.dump(2) << "\n";
}

int cmd_rl(const Config& c) {
  MeanFieldJumpModel m = load_model(c.model);
  if (!m.jump_atoms.empty()) {
    if (!c.strip_jumps)
      throw InvalidArgument("model has " + std::to_string(m.jump_atoms.size()) +
                            " jump atom(s); the model-free algorithm covers the jump-free system only. "
                            "Pass --strip-jumps to drop the jump terms.");
    m = without_jumps(m);
  }
  const std::string mode = c.mode.empty() ? "oracle" : c.mode;
  if (mode != "oracle" && mode != "sampled") throw InvalidArgument("--mode must be oracle or sampled for rl");
  const Dims d = m.dims;
  const auto grid = make_grid(m.T, m.T / c.intervals);
  const PiecewiseGains init = initial_gains(m, grid);
  const auto ex = make_exploration(c.seed, c.states, d.nu, d.nv, c.amplitude);
  const auto x0 = make_initial_states(c.seed + 1, c.states, d.n);

  const auto t0 = std::chrono::steady_clock::now();
  DataSet data;
  if (mode == "oracle") data = collect(MomentPlant(m), init, ex, x0, c.substeps, c.seed + 2);
  else data = collect(ParticlePlant(m, c.paths), init, ex, x0, c.substeps, c.seed + 2);
  const double collect_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (c.save_data) write_dataset(c, data, d);

  AlgorithmSettings st;
  st.gamma = c.gamma;
  st.eps = st.eps1 = c.eps;
  st.max_inner = st.max_outer = c.max_iter;
  const AlgorithmResult r = run_algorithm1(data, init, m.M.transpose() * m.M, st);

  std::ofstream f = open_out(c, "rl_gains.csv");
  std::vector<std::string> head{"interval", "t0", "t1"};
  push_names(head, "L", d.nu, d.n);
  push_names(head, "Ltilde", d.nu, d.n);
  push_names(head, "F", d.nv, d.n);
  push_names(head, "Ftilde", d.nv, d.n);
  write_csv_header(f, head);
  for (std::size_t i = 0; i < r.gains.intervals(); ++i) {
    const RlGains& g = r.gains.gains[i];
    std::vector<double> row{double(i), grid[i], grid[i + 1]};
    push_matrix(row, g.L);
    push_matrix(row, g.Ltilde);
    push_matrix(row, g.F);
    push_matrix(row, g.Ftilde);
    write_csv_row(f, row);
  }

  std::ostringstream rep;
  rep << "mode: " << mode << "\n"
      << "gamma: " << num(c.gamma) << "\n"
      << "states: " << c.states << "\n"
      << "intervals: " << c.intervals << "\n"
      << "substeps: " << c.substeps << "\n"
      << "paths: " << data.paths << "\n"
      << "outer_iterations: " << r.report.outer_iterations << "\n"
      << "inner_iterations:";
  for (int j : r.report.inner_iterations) rep << ' ' << j;
  rep << "\nouter_distance:";
  for (double x : r.report.outer_distance) rep << ' ' << num(x);
  rep << "\ninner_distance:";
  for (double x : r.report.inner_distance) rep << ' ' << num(x);
  rep << "\ncondition:";
  for (double x : r.report.condition) rep << ' ' << num(x);
  rep << "\ninterval_mismatch: " << num(r.report.interval_mismatch) << "\n";
  try {
    const PiecewiseGains ref = reference_gains(m, c.gamma, grid, m.T / c.intervals / c.substeps);
    rep << "gap_to_model_based: " << num(gain_gap(r.gains, ref)) << "\n";
  } catch (const Error& e) {
    rep << "gap_to_model_based: unavailable (" << e.what() << ")\n";
  }
  std::ofstream(fs::path(c.out) / "rl_report.txt") << rep.str();
  std::cout << rep.str() << "collect_seconds: " << std::fixed << std::setprecision(2) << collect_s << "\n";
  return 0;
}

int cmd_verify(const Config& c) {
  checks::Options opt;
  opt.particles = c.particles;
  opt.rl_paths = c.paths;
  opt.seed = c.seed;
  const auto results = checks::run_all(opt, std::cout);
  int failed = 0;
  for (const auto& r : results) failed += r.pass ? 0 : 1;
  std::cout << (results.size() - failed) << "/" << results.size() << " criteria pass" << std::endl;
  return c.strict && failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-field H2/H-infinity synthesis, simulation and model-free learning"};
  app.require_subcommand(1);
  Config c;

  const auto common = [&c](CLI::App* s, bool needs_model) {
    auto* opt = s->add_option("--model", c.model, "model JSON file");
    if (needs_model) opt->required();
    s->add_option("--gamma", c.gamma, "attenuation level")->check(CLI::PositiveNumber);
    s->add_option("--dt", c.dt, "time step")->check(CLI::PositiveNumber);
    s->add_option("--seed", c.seed, "random seed");
    s->add_option("--particles", c.particles, "simulation particles")->check(CLI::PositiveNumber);
    s->add_option("--paths", c.paths, "sample paths per restart in sampled RL mode")->check(CLI::PositiveNumber);
    s->add_option("--out", c.out, "output directory");
    s->add_option("--mode", c.mode, "paper|stage, worst|zero|random or oracle|sampled");
  };

  auto* ric = app.add_subcommand("riccati", "solve the coupled Riccati equations backward");
  common(ric, true);
  auto* gs = app.add_subcommand("gamma-search", "bisect for the smallest feasible gamma");
  common(gs, true);
  gs->add_option("--lo", c.lo, "lower end of the bracket");
  gs->add_option("--hi", c.hi, "upper end of the bracket");
  gs->add_option("--tol", c.tol, "bracket width")->check(CLI::PositiveNumber);
  auto* sim = app.add_subcommand("simulate", "particle simulation of the closed loop");
  common(sim, true);
  sim->add_option("--x0", c.x0, "initial state")->delimiter(',');
  sim->add_option("--amplitude", c.amplitude, "white-noise level for --mode random");
  auto* rl = app.add_subcommand("rl", "model-free learning of the saddle gains");
  common(rl, true);
  rl->add_option("--states", c.states, "initial states per interval")->check(CLI::PositiveNumber);
  rl->add_option("--intervals", c.intervals, "learning intervals")->check(CLI::PositiveNumber);
  rl->add_option("--substeps", c.substeps, "integration steps per interval")->check(CLI::PositiveNumber);
  rl->add_option("--eps", c.eps, "stopping tolerance for both loops")->check(CLI::PositiveNumber);
  rl->add_option("--max-iter", c.max_iter, "iteration budget for each loop")->check(CLI::PositiveNumber);
  rl->add_option("--amplitude", c.amplitude, "exploration amplitude");
  rl->add_flag("--strip-jumps", c.strip_jumps, "drop jump atoms from the model");
  rl->add_flag("--save-data", c.save_data, "write the collected moments under <out>/data");
  auto* ver = app.add_subcommand("verify", "run the acceptance suite");
  common(ver, false);
  ver->add_flag("--strict", c.strict, "exit nonzero when a criterion fails");

  CLI11_PARSE(app, argc, argv);
  try {
    if (ric->parsed()) return cmd_riccati(c);
    if (gs->parsed()) return cmd_gamma_search(c);
    if (sim->parsed()) return cmd_simulate(c);
    if (rl->parsed()) return cmd_rl(c);
    if (ver->parsed()) return cmd_verify(c);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
