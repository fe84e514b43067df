// Command-line entry points: plan (trajectory pre-planning), bct (binary
// control transformation of a controls file), identify (parameter fit from a
// run directory), loop (full closed-loop simulation run).
//
// Exit codes: 0 success, 2 input/config error, 3 solver or feasibility
// failure, 4 internal error.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <meltnav/bct.hpp>
#include <meltnav/config.hpp>
#include <meltnav/errors.hpp>
#include <meltnav/identify.hpp>
#include <meltnav/io.hpp>
#include <meltnav/model.hpp>
#include <meltnav/ocp.hpp>
#include <meltnav/simloop.hpp>

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitSolver = 3;
constexpr int kExitInternal = 4;

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  [[nodiscard]] double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

json report_to_json(const meltnav::SolveReport& r) {
  return {{"status", meltnav::to_string(r.status)},
          {"iterations", r.iterations},
          {"kkt_residual", r.kkt_residual},
          {"constraint_violation", r.constraint_violation},
          {"objective", r.objective},
          {"message", r.message}};
}

json coverage_to_json(const meltnav::CoverageReport& c) {
  const auto field = [](const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
  };
  return {{"head", field(c.head)}, {"wall", field(c.wall)}, {"back", field(c.back)}};
}

void write_run_manifest(const fs::path& out_dir, const std::string& subcommand,
                        const std::string& config_path, std::uint64_t seed, const json& config,
                        double wall_seconds) {
  meltnav::RunManifest m;
  m.subcommand = subcommand;
  m.config_path = config_path;
  m.out_dir = out_dir.string();
  m.seed = seed;
  m.config = config;
  m.wall_clock_seconds = wall_seconds;
  meltnav::write_manifest(out_dir / "manifest.json", m);
}

int cmd_plan(const std::string& config_path, const std::string& out_dir) {
  Timer timer;
  const json root = meltnav::parse_json_file(config_path);
  const meltnav::Scenario sc = meltnav::load_scenario(root);
  fs::create_directories(out_dir);

  const meltnav::DiscretizedSolution sol =
      meltnav::solve_tpp(sc.x_0, sc.x_f, sc.p_plan, sc.layout, sc.weights, sc.ocp);

  meltnav::write_trajectory_csv(fs::path(out_dir) / "trajectory.csv", sol.to_trajectory());
  meltnav::write_rates_csv(fs::path(out_dir) / "controls.csv", sol.to_rate_schedule());
  json report = report_to_json(sol.report);
  report["t_f"] = sol.t_f;
  meltnav::write_text_file(fs::path(out_dir) / "report.json", report.dump(2) + "\n");
  write_run_manifest(out_dir, "plan", config_path, 0, root, timer.seconds());

  if (sol.report.status != meltnav::SolveStatus::converged) {
    std::cerr << "plan: solver did not converge: " << sol.report.message << "\n";
    return kExitSolver;
  }
  return kExitOk;
}

int cmd_bct(const std::string& config_path, const std::string& controls_path,
            const std::string& out_dir, const std::string& variant_flag,
            std::optional<std::int64_t> budget_flag, bool exact,
            const std::string& warm_path) {
  Timer timer;
  json root = meltnav::parse_json_file(config_path);
  if (!variant_flag.empty()) root["bct"]["variant"] = variant_flag;
  if (budget_flag) root["bct"]["node_budget"] = *budget_flag;
  if (!root.contains("start")) root["start"] = {{"position", {0.0, 0.0, 0.0}}};
  if (!root.contains("goal")) root["goal"] = {{"position", {1.0, 0.0, 0.0}}};
  const meltnav::Scenario sc = meltnav::load_scenario(root);
  fs::create_directories(out_dir);

  const meltnav::RateSchedule rates =
      meltnav::read_rates_csv(controls_path, meltnav::Interp::piecewise_linear);
  if (rates.times.size() < 2) throw meltnav::config_error("bct: controls file needs >= 2 rows");

  meltnav::BctWindow window;
  window.m = sc.bct.m;
  window.t_window = rates.times.back() - rates.times.front();
  window.delta = sc.bct.delta_fraction * window.t_window;
  window.u_samples.resize(window.m, meltnav::kNumUnits);
  for (int j = 0; j < window.m; ++j) {
    const double t = rates.times.front() + window.t_window * j / (window.m - 1);
    meltnav::GroupControls g = rates.at(t).u;
    for (double& u : g.u) u = std::clamp(u, 0.0, 1.0);
    const auto units = meltnav::ungroup(g, sc.layout);
    for (int i = 0; i < meltnav::kNumUnits; ++i) window.u_samples(j, i) = units[static_cast<std::size_t>(i)];
  }

  const meltnav::BctProblem prob =
      sc.bct.variant == meltnav::BctVariant::bct_star
          ? meltnav::build_bct_star(window, sc.layout, sc.bct.effective_zeta(sc.layout))
          : meltnav::build_bct(window, sc.layout, sc.bct.mu);

  meltnav::BinarySchedule result;
  if (exact) {
    result = meltnav::brute_force(prob);
  } else {
    meltnav::BinarySchedule warm;
    const meltnav::BinarySchedule* warm_ptr = nullptr;
    if (!warm_path.empty()) {
      warm.v = meltnav::read_schedule_csv(warm_path);
      warm_ptr = &warm;
    }
    result = meltnav::solve_bnb(prob, meltnav::BnbBudget{sc.bct.node_budget}, warm_ptr);
  }

  meltnav::write_schedule_csv(fs::path(out_dir) / "schedule.csv", result.v);
  json cov = coverage_to_json(meltnav::coverage_report(result, window.u_samples, sc.layout));
  cov["objective"] = result.objective;
  cov["optimal"] = result.optimal;
  cov["lower_bound"] = result.lower_bound;
  cov["nodes_explored"] = result.nodes_explored;
  meltnav::write_text_file(fs::path(out_dir) / "coverage.json", cov.dump(2) + "\n");
  write_run_manifest(out_dir, "bct", config_path, 0, root, timer.seconds());
  return kExitOk;
}

int cmd_identify(const std::string& run_dir, const std::string& out_dir) {
  Timer timer;
  const json manifest = meltnav::parse_json_file(fs::path(run_dir) / "manifest.json");
  if (!manifest.contains("config")) {
    throw meltnav::config_error("identify: run manifest has no embedded config");
  }
  const json config = manifest.at("config");
  const meltnav::Scenario sc = meltnav::load_scenario(config);
  fs::create_directories(out_dir);

  meltnav::IdentificationDataset data;
  data.applied_schedule = meltnav::read_groups_csv(
      fs::path(run_dir) / "applied.csv",
      sc.perfect_loop ? meltnav::Interp::piecewise_linear : meltnav::Interp::piecewise_constant);
  data.fused = meltnav::read_trajectory_csv(fs::path(run_dir) / "fused_path.csv");
  for (meltnav::Pose& x : data.fused.states) x.q = x.q.normalized();
  data.x_0 = sc.x_0;
  data.substeps = sc.plant_substeps;

  const meltnav::IdentifyResult res = meltnav::identify(sc.p_plan, data);

  json out;
  out["params"] = {{"v_max", res.params.v_max},
                   {"eta", res.params.eta},
                   {"r_min", res.params.r_min},
                   {"alpha", res.params.alpha}};
  out["objective_initial"] = res.report.objective_initial;
  out["objective_final"] = res.report.objective_final;
  out["gradient_norm"] = res.report.gradient_norm;
  out["converged"] = res.report.converged;
  out["nm_iterations"] = res.report.nm_iterations;
  out["refine_iterations"] = res.report.refine_iterations;
  out["sensitivity"] = res.report.sensitivity;
  out["identifiable"] = res.report.identifiable;
  const char* names[4] = {"v_max", "eta", "r_min", "alpha"};
  json warnings = json::array();
  for (int k = 0; k < 4; ++k) {
    if (!res.report.identifiable[static_cast<std::size_t>(k)]) {
      warnings.push_back(std::string("parameter '") + names[k] +
                         "' is unidentifiable from this dataset (objective locally flat)");
    }
  }
  out["warnings"] = warnings;
  out["objective_history"] = res.report.objective_history;
  meltnav::write_text_file(fs::path(out_dir) / "params.json", out.dump(2) + "\n");
  write_run_manifest(out_dir, "identify", (fs::path(run_dir) / "manifest.json").string(), sc.seed,
                     config, timer.seconds());
  for (const auto& w : warnings) std::cerr << "identify: warning: " << w.get<std::string>() << "\n";
  return kExitOk;
}

int cmd_loop(const std::string& config_path, const std::string& out_dir,
             std::optional<std::uint64_t> seed_flag, bool perfect_flag,
             const std::string& variant_flag) {
  Timer timer;
  json root = meltnav::parse_json_file(config_path);
  if (seed_flag) root["loop"]["seed"] = *seed_flag;
  if (perfect_flag) root["loop"]["perfect"] = true;
  if (!variant_flag.empty()) root["bct"]["variant"] = variant_flag;
  const meltnav::Scenario sc = meltnav::load_scenario(root);
  fs::create_directories(out_dir);
  fs::create_directories(fs::path(out_dir) / "schedules");

  const meltnav::LoopResult res = meltnav::run_closed_loop(sc);

  meltnav::write_trajectory_csv(fs::path(out_dir) / "tpp_trajectory.csv", res.tpp.to_trajectory());
  meltnav::write_rates_csv(fs::path(out_dir) / "tpp_controls.csv", res.tpp.to_rate_schedule());
  if (!res.true_path.times.empty()) {
    meltnav::write_trajectory_csv(fs::path(out_dir) / "true_path.csv", res.true_path);
    meltnav::write_trajectory_csv(fs::path(out_dir) / "fused_path.csv", res.fused_path);
  }
  if (!res.applied_groups.times.empty()) {
    meltnav::write_groups_csv(fs::path(out_dir) / "applied.csv", res.applied_groups);
  }

  json cycles = json::array();
  for (const meltnav::CycleRecord& rec : res.cycles) {
    json c;
    c["index"] = rec.index;
    c["t_start"] = rec.t_start;
    c["cycle_len"] = rec.cycle_len;
    c["mpc_t_f"] = rec.mpc_t_f;
    c["mpc_objective"] = rec.mpc_objective;
    c["mpc_iterations"] = rec.mpc_iterations;
    c["mpc_status"] = meltnav::to_string(rec.mpc_status);
    if (rec.v.size() > 0) {
      c["bct_objective"] = rec.bct_objective;
      c["bct_optimal"] = rec.bct_optimal;
      c["coverage_v"] = coverage_to_json(rec.coverage_v);
      c["coverage_w"] = coverage_to_json(rec.coverage_w);
      char name[32];
      std::snprintf(name, sizeof(name), "%03d", rec.index);
      meltnav::write_schedule_csv(fs::path(out_dir) / "schedules" / ("v_" + std::string(name) + ".csv"),
                                  rec.v);
      meltnav::write_schedule_csv(fs::path(out_dir) / "schedules" / ("w_" + std::string(name) + ".csv"),
                                  rec.w);
    }
    cycles.push_back(std::move(c));
  }
  meltnav::write_text_file(fs::path(out_dir) / "cycles.json", cycles.dump(2) + "\n");

  const double final_error = (res.final_true.position - sc.x_f.position).norm();
  json summary;
  summary["completed"] = res.completed;
  summary["abort_reason"] = res.abort_reason;
  summary["cycles"] = res.cycles.size();
  summary["tpp_t_f"] = res.tpp.t_f;
  summary["final_true_position"] = {res.final_true.position.x(), res.final_true.position.y(),
                                    res.final_true.position.z()};
  summary["final_fused_position"] = {res.final_fused.position.x(), res.final_fused.position.y(),
                                     res.final_fused.position.z()};
  summary["final_error_m"] = final_error;
  summary["total_time_h"] = res.true_path.times.empty() ? 0.0 : res.true_path.times.back();
  meltnav::write_text_file(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
  write_run_manifest(out_dir, "loop", config_path, sc.seed, root, timer.seconds());

  if (!res.completed) {
    std::cerr << "loop: run did not complete: " << res.abort_reason << "\n";
    return kExitSolver;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Melting-probe guidance pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", controls_path, warm_path, run_dir, variant;
  std::int64_t budget = -1;
  std::uint64_t seed = 0;
  bool exact = false, perfect = false;

  CLI::App* plan = app.add_subcommand("plan", "Solve the trajectory pre-planning problem");
  plan->add_option("--config", config_path, "Scenario config (JSON)")->required();
  plan->add_option("--out", out_dir, "Output directory");

  CLI::App* bct = app.add_subcommand("bct", "Transform continuous controls to a binary schedule");
  bct->add_option("--config", config_path, "Scenario config (JSON)")->required();
  bct->add_option("--controls", controls_path, "Planner controls CSV")->required();
  bct->add_option("--out", out_dir, "Output directory");
  bct->add_option("--variant", variant, "bct or bct_star (overrides config)");
  bct->add_option("--budget", budget, "Node budget (overrides config)");
  bct->add_flag("--exact", exact, "Exhaustive enumeration instead of branch-and-bound");
  bct->add_option("--warm-start", warm_path, "Warm-start schedule CSV");

  CLI::App* identify = app.add_subcommand("identify", "Fit model parameters to a run directory");
  identify->add_option("--run", run_dir, "Run directory produced by `loop`")->required();
  identify->add_option("--out", out_dir, "Output directory");

  CLI::App* loop = app.add_subcommand("loop", "Run the closed-loop simulation");
  loop->add_option("--config", config_path, "Scenario config (JSON)")->required();
  loop->add_option("--out", out_dir, "Output directory");
  loop->add_option("--seed", seed, "RNG seed (overrides config)");
  loop->add_flag("--perfect", perfect, "Apply continuous controls, bypass BCT and SSG");
  loop->add_option("--variant", variant, "bct or bct_star (overrides config)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (plan->parsed()) return cmd_plan(config_path, out_dir);
    if (bct->parsed()) {
      return cmd_bct(config_path, controls_path, out_dir, variant,
                     budget >= 0 ? std::optional<std::int64_t>(budget) : std::nullopt, exact,
                     warm_path);
    }
    if (identify->parsed()) return cmd_identify(run_dir, out_dir);
    if (loop->parsed()) {
      return cmd_loop(config_path, out_dir,
                      loop->count("--seed") > 0 ? std::optional<std::uint64_t>(seed) : std::nullopt,
                      perfect, variant);
    }
    std::cerr << "no subcommand given\n";
    return kExitInput;
  } catch (const meltnav::config_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const meltnav::solver_error& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolver;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}
