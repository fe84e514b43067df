#pragma once

// JSON configuration loading with strict key checking, plus the run manifest
// written by every CLI invocation. Unknown keys are rejected so typos fail
// loudly instead of silently falling back to defaults.

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>

#include "meltnav/errors.hpp"
#include "meltnav/io.hpp"
#include "meltnav/model.hpp"
#include "meltnav/ocp.hpp"
#include "meltnav/pose.hpp"
#include "meltnav/simloop.hpp"

namespace meltnav {

inline nlohmann::json parse_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error(path.string() + ": " + e.what());
  }
}

namespace cfg {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw config_error(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) throw config_error(where + ": unknown key '" + key + "'");
  }
}

inline double number(const nlohmann::json& j, const char* key, double def,
                     const std::string& where) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_number()) throw config_error(where + "." + key + ": expected a number");
  return v.get<double>();
}

inline long long integer(const nlohmann::json& j, const char* key, long long def,
                         const std::string& where) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw config_error(where + "." + key + ": expected an integer");
  return v.get<long long>();
}

inline bool boolean(const nlohmann::json& j, const char* key, bool def, const std::string& where) {
  if (!j.contains(key)) return def;
  const auto& v = j.at(key);
  if (!v.is_boolean()) throw config_error(where + "." + key + ": expected a boolean");
  return v.get<bool>();
}

template <std::size_t N>
std::array<double, N> number_array(const nlohmann::json& v, const std::string& where) {
  if (!v.is_array() || v.size() != N) {
    throw config_error(where + ": expected an array of " + std::to_string(N) + " numbers");
  }
  std::array<double, N> out{};
  for (std::size_t k = 0; k < N; ++k) {
    if (!v[k].is_number()) throw config_error(where + ": expected numbers");
    out[k] = v[k].get<double>();
  }
  return out;
}

}  // namespace cfg

inline ModelParams load_model_params(const nlohmann::json& j, const std::string& where) {
  cfg::check_keys(j, {"v_max", "eta", "r_min", "alpha"}, where);
  ModelParams p;
  p.v_max = cfg::number(j, "v_max", p.v_max, where);
  p.eta = cfg::number(j, "eta", p.eta, where);
  p.r_min = cfg::number(j, "r_min", p.r_min, where);
  p.alpha = cfg::number(j, "alpha", p.alpha, where);
  p.validate();
  return p;
}

inline HeaterLayout load_layout(const nlohmann::json& j, const std::string& where) {
  cfg::check_keys(j, {"unit_power", "groups", "p_total_max", "p_wall_max", "p_back_max"}, where);
  HeaterLayout layout = default_layout();
  if (j.contains("unit_power")) {
    const auto arr = cfg::number_array<kNumUnits>(j.at("unit_power"), where + ".unit_power");
    for (int i = 0; i < kNumUnits; ++i) layout.unit_power[static_cast<std::size_t>(i)] = arr[static_cast<std::size_t>(i)];
  }
  if (j.contains("groups")) {
    const auto arr = cfg::number_array<kNumUnits>(j.at("groups"), where + ".groups");
    for (int i = 0; i < kNumUnits; ++i) {
      const double g = arr[static_cast<std::size_t>(i)];
      if (g < 1 || g > kNumGroups || g != static_cast<int>(g)) {
        throw config_error(where + ".groups: entries must be integers in [1, 9]");
      }
      layout.group_of[static_cast<std::size_t>(i)] = static_cast<int>(g) - 1;
    }
  }
  layout.p_total_max = cfg::number(j, "p_total_max", layout.p_total_max, where);
  layout.p_wall_max = cfg::number(j, "p_wall_max", layout.p_wall_max, where);
  layout.p_back_max = cfg::number(j, "p_back_max", layout.p_back_max, where);
  layout.validate();
  return layout;
}

inline OcpWeights load_weights(const nlohmann::json& j, const std::string& where) {
  cfg::check_keys(j, {"beta", "gamma", "phi_max", "omega_max"}, where);
  OcpWeights w;
  w.beta = cfg::number(j, "beta", w.beta, where);
  w.gamma = cfg::number(j, "gamma", w.gamma, where);
  w.phi_max = cfg::number(j, "phi_max", w.phi_max, where);
  if (j.contains("omega_max")) {
    const auto arr = cfg::number_array<3>(j.at("omega_max"), where + ".omega_max");
    w.omega_max = Eigen::Vector3d(arr[0], arr[1], arr[2]);
  }
  w.validate();
  return w;
}

inline OcpOptions load_planner(const nlohmann::json& j, const std::string& where) {
  cfg::check_keys(j,
                  {"nodes", "tf_lower", "tf_upper", "kkt_tol", "feas_tol", "max_iterations",
                   "qp_max_iterations", "line_search_max", "lbfgs_memory", "penalty_initial"},
                  where);
  OcpOptions o;
  o.nodes = static_cast<int>(cfg::integer(j, "nodes", o.nodes, where));
  o.tf_lower = cfg::number(j, "tf_lower", o.tf_lower, where);
  o.tf_upper = cfg::number(j, "tf_upper", o.tf_upper, where);
  o.nlp.kkt_tol = cfg::number(j, "kkt_tol", o.nlp.kkt_tol, where);
  o.nlp.feas_tol = cfg::number(j, "feas_tol", o.nlp.feas_tol, where);
  o.nlp.max_iterations = static_cast<int>(cfg::integer(j, "max_iterations", o.nlp.max_iterations, where));
  o.nlp.qp_max_iterations = static_cast<int>(cfg::integer(j, "qp_max_iterations", o.nlp.qp_max_iterations, where));
  o.nlp.line_search_max = static_cast<int>(cfg::integer(j, "line_search_max", o.nlp.line_search_max, where));
  o.nlp.lbfgs_memory = static_cast<int>(cfg::integer(j, "lbfgs_memory", o.nlp.lbfgs_memory, where));
  o.nlp.penalty_initial = cfg::number(j, "penalty_initial", o.nlp.penalty_initial, where);
  return o;
}

inline Pose load_pose(const nlohmann::json& j, const std::string& where) {
  cfg::check_keys(j, {"position", "quaternion"}, where);
  if (!j.contains("position")) throw config_error(where + ": missing 'position'");
  const auto pos = cfg::number_array<3>(j.at("position"), where + ".position");
  Pose x;
  x.position = Eigen::Vector3d(pos[0], pos[1], pos[2]);
  if (j.contains("quaternion")) {
    const auto q = cfg::number_array<4>(j.at("quaternion"), where + ".quaternion");
    x.q = {q[0], q[1], q[2], q[3]};
    if (std::abs(x.q.norm() - 1.0) > 1e-6) {
      throw config_error(where + ".quaternion: must be unit-norm within 1e-6");
    }
    x.q = x.q.normalized();
  }
  return x;
}

inline BctSettings load_bct(const nlohmann::json& j, const std::string& where) {
  cfg::check_keys(j, {"variant", "m", "delta_fraction", "zeta", "mu", "node_budget"}, where);
  BctSettings b;
  if (j.contains("variant")) {
    const auto& v = j.at("variant");
    if (!v.is_string()) throw config_error(where + ".variant: expected a string");
    const std::string s = v.get<std::string>();
    if (s == "bct") b.variant = BctVariant::bct;
    else if (s == "bct_star") b.variant = BctVariant::bct_star;
    else throw config_error(where + ".variant: must be 'bct' or 'bct_star'");
  }
  b.m = static_cast<int>(cfg::integer(j, "m", b.m, where));
  b.delta_fraction = cfg::number(j, "delta_fraction", b.delta_fraction, where);
  b.zeta = cfg::number(j, "zeta", b.zeta, where);
  if (j.contains("mu")) b.mu = cfg::number_array<kNumUnits>(j.at("mu"), where + ".mu");
  b.node_budget = cfg::integer(j, "node_budget", b.node_budget, where);
  b.validate();
  return b;
}

inline SsgConfig load_ssg(const nlohmann::json& j, const std::string& where) {
  cfg::check_keys(j, {"duty_cap", "window", "dropout_prob"}, where);
  SsgConfig s;
  s.duty_cap = cfg::number(j, "duty_cap", s.duty_cap, where);
  s.window = static_cast<int>(cfg::integer(j, "window", s.window, where));
  s.dropout_prob = cfg::number(j, "dropout_prob", s.dropout_prob, where);
  s.validate();
  return s;
}

inline NoiseConfig load_noise(const nlohmann::json& j, const std::string& where) {
  cfg::check_keys(j, {"sigma_pos", "sigma_att"}, where);
  NoiseConfig n;
  n.sigma_pos = cfg::number(j, "sigma_pos", n.sigma_pos, where);
  n.sigma_att = cfg::number(j, "sigma_att", n.sigma_att, where);
  n.validate();
  return n;
}

// Full scenario loader; `start` and `goal` are required.
inline Scenario load_scenario(const nlohmann::json& root) {
  cfg::check_keys(root,
                  {"model", "model_true", "layout", "weights", "planner", "start", "goal", "bct",
                   "ssg", "noise", "loop"},
                  "config");
  Scenario sc;
  if (root.contains("model")) sc.p_plan = load_model_params(root.at("model"), "model");
  sc.p_true = root.contains("model_true") ? load_model_params(root.at("model_true"), "model_true")
                                          : sc.p_plan;
  if (root.contains("layout")) sc.layout = load_layout(root.at("layout"), "layout");
  if (root.contains("weights")) sc.weights = load_weights(root.at("weights"), "weights");
  if (root.contains("planner")) sc.ocp = load_planner(root.at("planner"), "planner");
  if (!root.contains("start")) throw config_error("config: missing 'start' pose");
  if (!root.contains("goal")) throw config_error("config: missing 'goal' pose");
  sc.x_0 = load_pose(root.at("start"), "start");
  sc.x_f = load_pose(root.at("goal"), "goal");
  if (root.contains("bct")) sc.bct = load_bct(root.at("bct"), "bct");
  if (root.contains("ssg")) sc.ssg = load_ssg(root.at("ssg"), "ssg");
  if (root.contains("noise")) sc.noise = load_noise(root.at("noise"), "noise");
  if (root.contains("loop")) {
    const auto& j = root.at("loop");
    const std::string where = "loop";
    cfg::check_keys(j, {"cycle_time", "max_cycles", "seed", "perfect", "plant_substeps",
                        "mpc_retries"},
                    where);
    sc.cycle_time = cfg::number(j, "cycle_time", sc.cycle_time, where);
    sc.max_cycles = static_cast<int>(cfg::integer(j, "max_cycles", sc.max_cycles, where));
    sc.seed = static_cast<std::uint64_t>(cfg::integer(j, "seed", static_cast<long long>(sc.seed), where));
    sc.perfect_loop = cfg::boolean(j, "perfect", sc.perfect_loop, where);
    sc.plant_substeps = static_cast<int>(cfg::integer(j, "plant_substeps", sc.plant_substeps, where));
    sc.mpc_retries = static_cast<int>(cfg::integer(j, "mpc_retries", sc.mpc_retries, where));
  }
  sc.validate();
  return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  return load_scenario(parse_json_file(path));
}

// --- run manifest -------------------------------------------------------------

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kManifestFormat = 1;

inline std::string fnv1a64_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  static const char* digits = "0123456789abcdef";
  for (int k = 15; k >= 0; --k) {
    buf[k] = digits[h & 0xf];
    h >>= 4;
  }
  buf[16] = '\0';
  return buf;
}

struct RunManifest {
  std::string subcommand;
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  nlohmann::json config;  // embedded snapshot of the effective config
  double wall_clock_seconds = 0.0;
};

inline nlohmann::json manifest_to_json(const RunManifest& m) {
  nlohmann::json j;
  j["subcommand"] = m.subcommand;
  j["config_path"] = m.config_path;
  j["output_dir"] = m.out_dir;
  j["seed"] = m.seed;
  j["config_hash"] = fnv1a64_hex(m.config.dump());
  j["versions"] = {{"meltnav", kVersion}, {"manifest_format", kManifestFormat}};
  j["wall_clock_seconds"] = m.wall_clock_seconds;  // volatile: excluded from byte comparisons
  j["config"] = m.config;
  return j;
}

inline void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  write_text_file(path, manifest_to_json(m).dump(2) + "\n");
}

}  // namespace meltnav
