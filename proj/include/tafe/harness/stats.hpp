#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <nlohmann/json.hpp>

#include "tafe/fenode.hpp"
#include "tafe/harness/config.hpp"

namespace tafe::harness {

/// Linear-interpolation quantile of a sample (q in [0, 1]).
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return v[lo];
  return v[lo] + frac * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

class Stopwatch {
 public:
  Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
  [[nodiscard]] double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

/// Batched rollouts allocate and free the same large matrices at every step.
/// Keeping those on the heap instead of fresh mmaps avoids repeated page faults.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

/// Wall-clock measurements live apart from the results so that the results
/// stay bit-identical across runs.
inline void record_timing(const Layout& layout, const std::string& key, const nlohmann::json& value) {
  nlohmann::json j = nlohmann::json::object();
  if (fs::exists(layout.timings())) j = read_json_file(layout.timings());
  j[key] = value;
  ensure_dir(layout.root);
  write_json_file(layout.timings(), j);
}

}  // namespace tafe::harness
