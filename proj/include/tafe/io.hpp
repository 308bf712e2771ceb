#pragma once

// Plain-text key-value files and the trajectory CSV schema
// `t,px,py,psi,vx,vy,wz,v_cmd,w_cmd`.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "tafe/core.hpp"

namespace tafe {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shortest decimal text that parses back to the same double.
inline std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw IoError("fmt_double: conversion failed");
  return {buf, end};
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw IoError("cannot parse number '" + std::string(s) + "'");
  return v;
}

inline std::vector<double> parse_doubles(std::string_view s) {
  std::vector<double> out;
  std::istringstream in{std::string(s)};
  std::string tok;
  while (in >> tok) out.push_back(parse_double(tok));
  return out;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// `key = value` lines; '#' starts a comment. Keys may repeat (list entries).
class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse(std::istream& in, const std::string& origin = "<stream>") {
    KeyValueFile kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw IoError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      kv.entries_.emplace_back(trim(std::string_view(t).substr(0, eq)),
                               trim(std::string_view(t).substr(eq + 1)));
    }
    return kv;
  }

  static KeyValueFile load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return parse(in, path.string());
  }

  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = value;
        return;
      }
    entries_.emplace_back(key, value);
  }
  void add(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }

  [[nodiscard]] bool has(const std::string& key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return true;
    return false;
  }

  /// Last occurrence wins.
  [[nodiscard]] const std::string* find(const std::string& key) const {
    const std::string* found = nullptr;
    for (const auto& [k, v] : entries_)
      if (k == key) found = &v;
    return found;
  }

  [[nodiscard]] std::string get(const std::string& key) const {
    if (const auto* v = find(key)) return *v;
    throw IoError("missing key '" + key + "'");
  }
  [[nodiscard]] std::string get_or(const std::string& key, std::string fallback) const {
    if (const auto* v = find(key)) return *v;
    return fallback;
  }
  [[nodiscard]] double get_double(const std::string& key, double fallback) const {
    if (const auto* v = find(key)) return parse_double(*v);
    return fallback;
  }
  [[nodiscard]] long get_int(const std::string& key, long fallback) const {
    if (const auto* v = find(key)) {
      const double d = parse_double(*v);
      if (d != static_cast<double>(static_cast<long>(d)))
        throw IoError("key '" + key + "' expects an integer");
      return static_cast<long>(d);
    }
    return fallback;
  }
  [[nodiscard]] std::vector<std::string> get_all(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_)
      if (k == key) out.push_back(v);
    return out;
  }

  [[nodiscard]] const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

  void write(std::ostream& out) const {
    for (const auto& [k, v] : entries_) out << k << " = " << v << '\n';
  }
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    write(out);
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline constexpr std::string_view kTrajectoryHeader = "t,px,py,psi,vx,vy,wz,v_cmd,w_cmd";

/// One row per sample. The final row repeats the last applied control.
inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  traj.validate();
  out << kTrajectoryHeader << '\n';
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const State& s = traj.states[i];
    const Control u = traj.controls.empty()
                          ? Control{}
                          : traj.controls[std::min(i, traj.controls.size() - 1)];
    out << fmt_double(traj.times[i]) << ',' << fmt_double(s.px) << ',' << fmt_double(s.py) << ','
        << fmt_double(s.psi) << ',' << fmt_double(s.vx) << ',' << fmt_double(s.vy) << ','
        << fmt_double(s.wz) << ',' << fmt_double(u.v_cmd) << ',' << fmt_double(u.w_cmd) << '\n';
  }
}

inline void save_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_trajectory_csv(out, traj);
}

inline Trajectory read_trajectory_csv(std::istream& in, const std::string& origin = "<stream>") {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kTrajectoryHeader)
    throw IoError(origin + ": missing or unexpected CSV header");
  Trajectory traj;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    double f[9];
    std::string_view rest(line);
    for (int c = 0; c < 9; ++c) {
      const auto comma = rest.find(',');
      if ((comma == std::string_view::npos) != (c == 8))
        throw IoError(origin + ":" + std::to_string(lineno) + ": expected 9 columns");
      f[c] = parse_double(rest.substr(0, comma));
      if (comma != std::string_view::npos) rest.remove_prefix(comma + 1);
    }
    traj.times.push_back(f[0]);
    traj.states.push_back({f[1], f[2], f[3], f[4], f[5], f[6]});
    traj.controls.push_back({f[7], f[8]});
  }
  if (!traj.controls.empty()) traj.controls.pop_back();
  traj.validate();
  return traj;
}

inline Trajectory load_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_trajectory_csv(in, path.string());
}

}  // namespace tafe
