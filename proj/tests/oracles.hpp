#pragma once

// Independent reference computations used to check the library. Nothing here
// calls into the code under test except plain data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "evps/core.hpp"

namespace oracle {

inline constexpr double pi = std::numbers::pi;

// Light azimuth at time t written out from the trajectory definition.
inline double azimuth(double t, double period, int direction, double offset) {
  const double cyc = t - period * std::floor(t / period);
  return offset + direction * 2.0 * pi * cyc / period;
}

inline std::array<double, 3> light(double t, double elevation, double period, int direction,
                                   double offset) {
  const double th = azimuth(t, period, direction, offset);
  return {std::cos(elevation) * std::cos(th), std::cos(elevation) * std::sin(th),
          std::sin(elevation)};
}

// Exact exponential contrast I(t_k)/I(t_0) of a lit Lambertian point at the
// M+1 segment boundaries of one counterclockwise cycle starting at azimuth 0.
struct ExactSeries {
  std::vector<double> samples;
  std::vector<double> phases;
};

inline ExactSeries exact_series(const evps::Normal& n, double elevation, int segments) {
  ExactSeries s;
  double i0 = 0.0;
  for (int k = 0; k <= segments; ++k) {
    const double th = 2.0 * pi * k / segments;
    const double i = n.x * std::cos(elevation) * std::cos(th) +
                     n.y * std::cos(elevation) * std::sin(th) + n.z * std::sin(elevation);
    if (k == 0) i0 = i;
    s.samples.push_back(i / i0);
    s.phases.push_back(th >= 2.0 * pi ? th - 2.0 * pi : th);
  }
  return s;
}

// Minimum of n.l over one cycle; positive means lit throughout.
inline double min_shading(const evps::Normal& n, double elevation) {
  return n.z * std::sin(elevation) - std::hypot(n.x, n.y) * std::cos(elevation);
}

struct Cosine {
  double amplitude, phase, offset;
};

inline double sse(const std::vector<double>& y, const std::vector<double>& th, const Cosine& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - (c.amplitude * std::cos(th[i] - c.phase) + c.offset);
    s += r * r;
  }
  return s;
}

// Exhaustive grid search over (amplitude, phase, offset), repeatedly zoomed
// around the best cell. grid^3 evaluations per round.
inline Cosine brute_force_fit(const std::vector<double>& y, const std::vector<double>& th,
                              int grid = 40, int rounds = 8) {
  const auto [lo_it, hi_it] = std::minmax_element(y.begin(), y.end());
  const double span = std::max(*hi_it - *lo_it, 1e-9);
  double a_lo = 0.0, a_hi = span;
  double p_lo = 0.0, p_hi = 2.0 * pi;
  double o_lo = *lo_it - span, o_hi = *hi_it + span;
  Cosine best{0.0, 0.0, 0.5 * (*lo_it + *hi_it)};
  double best_e = sse(y, th, best);
  for (int r = 0; r < rounds; ++r) {
    const double da = (a_hi - a_lo) / (grid - 1);
    const double dp = (p_hi - p_lo) / (grid - 1);
    const double dof = (o_hi - o_lo) / (grid - 1);
    for (int i = 0; i < grid; ++i)
      for (int j = 0; j < grid; ++j)
        for (int k = 0; k < grid; ++k) {
          const Cosine c{std::max(0.0, a_lo + i * da), p_lo + j * dp, o_lo + k * dof};
          const double e = sse(y, th, c);
          if (e < best_e) {
            best_e = e;
            best = c;
          }
        }
    a_lo = std::max(0.0, best.amplitude - 2 * da);
    a_hi = best.amplitude + 2 * da;
    p_lo = best.phase - 2 * dp;
    p_hi = best.phase + 2 * dp;
    o_lo = best.offset - 2 * dof;
    o_hi = best.offset + 2 * dof;
  }
  best.phase = std::fmod(std::fmod(best.phase, 2.0 * pi) + 2.0 * pi, 2.0 * pi);
  return best;
}

// Central difference of f at x with step h.
inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Uniform random unit normal with nz >= min_z.
inline evps::Normal random_normal(std::mt19937_64& rng, double min_z = 0.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    evps::Normal v{g(rng), g(rng), g(rng)};
    const double len = v.norm();
    if (len < 1e-9) continue;
    v = v * (1.0 / len);
    if (v.z < 0.0) v = -v;
    if (v.z >= min_z) return v;
  }
}

inline double angle_deg(const evps::Normal& a, const evps::Normal& b) {
  // atan2 form: acos cannot resolve angles below ~1e-6 degrees.
  const double cx = a.y * b.z - a.z * b.y, cy = a.z * b.x - a.x * b.z, cz = a.x * b.y - a.y * b.x;
  return std::atan2(std::sqrt(cx * cx + cy * cy + cz * cz), a.dot(b)) * 180.0 / pi;
}

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("evps_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace oracle
