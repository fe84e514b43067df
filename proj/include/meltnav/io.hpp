#pragma once

// CSV and small-file helpers. Doubles are written with shortest
// round-trip formatting and parsed with from_chars, so a write/read cycle
// reproduces every value bit for bit.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "meltnav/errors.hpp"
#include "meltnav/integrate.hpp"
#include "meltnav/model.hpp"

#include <Eigen/Dense>

namespace meltnav {

inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return {buf, res.ptr};
}

inline double parse_double(std::string_view s, const std::string& where) {
  double x = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  const auto res = std::from_chars(first, last, x);
  if (res.ec != std::errc{} || res.ptr != last) {
    throw config_error(where + ": cannot parse number '" + std::string(s) + "'");
  }
  return x;
}

inline long long parse_int(std::string_view s, const std::string& where) {
  long long x = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw config_error(where + ": cannot parse integer '" + std::string(s) + "'");
  }
  return x;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw config_error("cannot open for writing: " + path.string());
  f << content;
  if (!f) throw config_error("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw config_error("cannot open: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Rows of a CSV file with the given expected header (first line checked).
inline std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path,
                                                           const std::string& header) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw config_error("cannot open: " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw config_error(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) {
    throw config_error(path.string() + ": expected header '" + header + "', got '" + line + "'");
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    rows.push_back(std::move(cells));
  }
  return rows;
}

// --- trajectory: t,x,y,z,q_w,q_x,q_y,q_z ------------------------------------

inline constexpr const char* kTrajectoryHeader = "t,x,y,z,q_w,q_x,q_y,q_z";

inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  std::string out = kTrajectoryHeader;
  out += '\n';
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    const Pose& x = traj.states[k];
    out += format_double(traj.times[k]);
    for (int i = 0; i < 3; ++i) out += ',' + format_double(x.position(i));
    out += ',' + format_double(x.q.w) + ',' + format_double(x.q.x) + ',' +
           format_double(x.q.y) + ',' + format_double(x.q.z);
    out += '\n';
  }
  write_text_file(path, out);
}

inline Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  Trajectory traj;
  const auto rows = read_csv_rows(path, kTrajectoryHeader);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& c = rows[r];
    const std::string where = path.string() + " row " + std::to_string(r + 2);
    if (c.size() != 8) throw config_error(where + ": expected 8 fields");
    traj.times.push_back(parse_double(c[0], where));
    Pose x;
    for (int i = 0; i < 3; ++i) x.position(i) = parse_double(c[static_cast<std::size_t>(1 + i)], where);
    x.q = {parse_double(c[4], where), parse_double(c[5], where), parse_double(c[6], where),
           parse_double(c[7], where)};
    traj.states.push_back(x);
  }
  return traj;
}

// --- group duties: t,u_1..u_8 ------------------------------------------------

inline constexpr const char* kGroupsHeader = "t,u_1,u_2,u_3,u_4,u_5,u_6,u_7,u_8";

inline void write_groups_csv(const std::filesystem::path& path, const ControlSchedule& s) {
  std::string out = kGroupsHeader;
  out += '\n';
  for (std::size_t k = 0; k < s.times.size(); ++k) {
    out += format_double(s.times[k]);
    for (int g = 0; g < kNumFreeGroups; ++g) out += ',' + format_double(s.values[k].u[static_cast<std::size_t>(g)]);
    out += '\n';
  }
  write_text_file(path, out);
}

inline ControlSchedule read_groups_csv(const std::filesystem::path& path, Interp interp) {
  ControlSchedule s;
  s.interpolation = interp;
  const auto rows = read_csv_rows(path, kGroupsHeader);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& c = rows[r];
    const std::string where = path.string() + " row " + std::to_string(r + 2);
    if (c.size() != 9) throw config_error(where + ": expected 9 fields");
    s.times.push_back(parse_double(c[0], where));
    GroupControls u;
    for (int g = 0; g < kNumFreeGroups; ++g) {
      u.u[static_cast<std::size_t>(g)] = parse_double(c[static_cast<std::size_t>(1 + g)], where);
    }
    s.values.push_back(u);
  }
  s.validate();
  return s;
}

// --- planner rates: t,v,omega_x,omega_y,omega_z,u_1..u_8 ---------------------

inline constexpr const char* kRatesHeader =
    "t,v,omega_x,omega_y,omega_z,u_1,u_2,u_3,u_4,u_5,u_6,u_7,u_8";

inline void write_rates_csv(const std::filesystem::path& path, const RateSchedule& s) {
  std::string out = kRatesHeader;
  out += '\n';
  for (std::size_t k = 0; k < s.times.size(); ++k) {
    const AugmentedControls& c = s.values[k];
    out += format_double(s.times[k]);
    out += ',' + format_double(c.v);
    for (int i = 0; i < 3; ++i) out += ',' + format_double(c.omega(i));
    for (int g = 0; g < kNumFreeGroups; ++g) out += ',' + format_double(c.u.u[static_cast<std::size_t>(g)]);
    out += '\n';
  }
  write_text_file(path, out);
}

inline RateSchedule read_rates_csv(const std::filesystem::path& path, Interp interp) {
  RateSchedule s;
  s.interpolation = interp;
  const auto rows = read_csv_rows(path, kRatesHeader);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& c = rows[r];
    const std::string where = path.string() + " row " + std::to_string(r + 2);
    if (c.size() != 13) throw config_error(where + ": expected 13 fields");
    s.times.push_back(parse_double(c[0], where));
    AugmentedControls a;
    a.v = parse_double(c[1], where);
    for (int i = 0; i < 3; ++i) a.omega(i) = parse_double(c[static_cast<std::size_t>(2 + i)], where);
    for (int g = 0; g < kNumFreeGroups; ++g) {
      a.u.u[static_cast<std::size_t>(g)] = parse_double(c[static_cast<std::size_t>(5 + g)], where);
    }
    s.values.push_back(a);
  }
  return s;
}

// --- binary schedule: step,v_01..v_32 ----------------------------------------

inline std::string schedule_csv_header() {
  std::string h = "step";
  for (int i = 1; i <= kNumUnits; ++i) {
    h += ",v_";
    if (i < 10) h += '0';
    h += std::to_string(i);
  }
  return h;
}

inline void write_schedule_csv(const std::filesystem::path& path, const Eigen::MatrixXi& v) {
  if (v.size() > 0 && v.cols() != kNumUnits) {
    throw config_error("write_schedule_csv: schedule must have 32 columns");
  }
  std::string out = schedule_csv_header();
  out += '\n';
  for (int j = 0; j < v.rows(); ++j) {
    out += std::to_string(j + 1);
    for (int i = 0; i < kNumUnits; ++i) out += v(j, i) != 0 ? ",1" : ",0";
    out += '\n';
  }
  write_text_file(path, out);
}

inline Eigen::MatrixXi read_schedule_csv(const std::filesystem::path& path) {
  const auto rows = read_csv_rows(path, schedule_csv_header());
  Eigen::MatrixXi v(static_cast<int>(rows.size()), kNumUnits);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& c = rows[r];
    const std::string where = path.string() + " row " + std::to_string(r + 2);
    if (c.size() != 1 + kNumUnits) throw config_error(where + ": expected 33 fields");
    for (int i = 0; i < kNumUnits; ++i) {
      const long long b = parse_int(c[static_cast<std::size_t>(1 + i)], where);
      if (b != 0 && b != 1) throw config_error(where + ": schedule entries must be 0 or 1");
      v(static_cast<int>(r), i) = static_cast<int>(b);
    }
  }
  return v;
}

}  // namespace meltnav
