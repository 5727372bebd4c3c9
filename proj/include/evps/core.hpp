#pragma once

// Domain types shared across the pipeline: events, light trajectory,
// normal maps, contrast-threshold model and the shading kernel.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace evps {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Vec3
// ---------------------------------------------------------------------------

struct Vec3 {
  double x{0.0};
  double y{0.0};
  double z{0.0};

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr bool operator==(const Vec3&) const = default;

  constexpr double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }

  // Divides by max(|v|, floor) so the map stays total.
  Vec3 normalized(double floor = 1e-12) const { return *this * (1.0 / std::max(norm(), floor)); }
};

// Unit surface normal (nx, ny, nz). Pipeline outputs keep nz >= 0.
using Normal = Vec3;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// Wraps an angle into [0, 2pi).
inline double wrap_angle(double a) {
  double w = std::fmod(a, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  if (w >= kTwoPi) w = 0.0;
  return w;
}

// Negates v when its z component is negative.
inline Vec3 flip_to_camera(const Vec3& v) { return v.z < 0.0 ? -v : v; }

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

struct Event {
  double t{0.0};  // seconds
  std::uint16_t x{0};
  std::uint16_t y{0};
  std::int8_t p{1};  // +1 or -1

  bool operator==(const Event&) const = default;
};

// Stream order: timestamp, then y, then x.
inline bool event_before(const Event& a, const Event& b) {
  if (a.t != b.t) return a.t < b.t;
  if (a.y != b.y) return a.y < b.y;
  return a.x < b.x;
}

// Circular light path around the optical axis at constant elevation.
struct LightTrajectory {
  double elevation{kPi / 4.0};  // radians, (0, pi/2)
  double period{1.0};           // seconds per rotation
  int direction{+1};            // +1 counterclockwise, -1 clockwise
  double azimuth_offset{0.0};   // radians, azimuth at cycle start

  bool operator==(const LightTrajectory&) const = default;

  void validate() const {
    if (!(elevation > 0.0 && elevation < kPi / 2.0))
      throw InvalidArgument("trajectory elevation must lie in (0, pi/2)");
    if (!(period > 0.0) || !std::isfinite(period))
      throw InvalidArgument("trajectory period must be positive");
    if (direction != 1 && direction != -1)
      throw InvalidArgument("trajectory direction must be +1 or -1");
    if (!std::isfinite(azimuth_offset))
      throw InvalidArgument("trajectory azimuth offset must be finite");
  }
};

struct EventStream {
  std::uint32_t width{0};
  std::uint32_t height{0};
  std::vector<Event> events;
  LightTrajectory trajectory;

  bool operator==(const EventStream&) const = default;

  // Throws InvalidArgument on the first broken invariant.
  void validate() const {
    trajectory.validate();
    for (std::size_t i = 0; i < events.size(); ++i) {
      const Event& e = events[i];
      if (!(e.t >= 0.0) || !std::isfinite(e.t))
        throw InvalidArgument("event timestamp must be finite and >= 0");
      if (e.p != 1 && e.p != -1) throw InvalidArgument("event polarity must be +1 or -1");
      if (e.x >= width || e.y >= height) throw InvalidArgument("event coordinate out of range");
      if (i > 0 && e.t < events[i - 1].t) throw InvalidArgument("event timestamps not sorted");
    }
  }
};

// ---------------------------------------------------------------------------
// Grids and normal maps
// ---------------------------------------------------------------------------

// Row-major 2D grid.
template <typename T>
struct Grid {
  std::uint32_t width{0};
  std::uint32_t height{0};
  std::vector<T> data;

  Grid() = default;
  Grid(std::uint32_t w, std::uint32_t h, T fill = T{})
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(std::uint32_t x, std::uint32_t y) const {
    return static_cast<std::size_t>(y) * width + x;
  }
  T& operator()(std::uint32_t x, std::uint32_t y) { return data[index(x, y)]; }
  const T& operator()(std::uint32_t x, std::uint32_t y) const { return data[index(x, y)]; }
  bool operator==(const Grid&) const = default;
};

// Uses uint8_t rather than bool so the storage is a plain array.
using Mask = Grid<std::uint8_t>;

struct NormalMap {
  std::uint32_t width{0};
  std::uint32_t height{0};
  std::vector<Normal> normals;  // row-major
  std::vector<std::uint8_t> mask;

  NormalMap() = default;
  NormalMap(std::uint32_t w, std::uint32_t h)
      : width(w),
        height(h),
        normals(static_cast<std::size_t>(w) * h),
        mask(static_cast<std::size_t>(w) * h, 0) {}

  std::size_t size() const { return normals.size(); }
  std::size_t index(std::uint32_t x, std::uint32_t y) const {
    return static_cast<std::size_t>(y) * width + x;
  }
  bool valid(std::size_t i) const { return mask[i] != 0; }

  void set(std::size_t i, const Normal& n) {
    normals[i] = n;
    mask[i] = 1;
  }
  void invalidate(std::size_t i) {
    normals[i] = {};
    mask[i] = 0;
  }

  Mask mask_grid() const {
    Mask m(width, height);
    m.data = mask;
    return m;
  }

  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }

  bool operator==(const NormalMap&) const = default;
};

// ---------------------------------------------------------------------------
// Contrast threshold
// ---------------------------------------------------------------------------

// Gaussian contrast threshold; samples are clamped to >= 0.1 * mean.
struct ContrastThresholdModel {
  double mean{0.2};
  double std_dev{0.02};
  std::uint64_t seed{0};

  void validate() const {
    if (!(mean > 0.0)) throw InvalidArgument("contrast threshold mean must be positive");
    if (!(std_dev >= 0.0)) throw InvalidArgument("contrast threshold std must be >= 0");
    if (!(std_dev < mean)) throw InvalidArgument("contrast threshold std must be below the mean");
  }

  double min_threshold() const { return 0.1 * mean; }
};

// ---------------------------------------------------------------------------
// Shading
// ---------------------------------------------------------------------------

// Per-point reflectance: diffuse albedo plus an unnormalized Phong lobe.
struct Material {
  double albedo{1.0};
  double specular_weight{0.0};
  double specular_exponent{1.0};
};

// Intensity floor applied before log conversion, relative to light intensity.
inline constexpr double kIntensityFloorFraction = 1e-4;

inline double intensity_floor(double light_intensity) {
  return kIntensityFloorFraction * light_intensity;
}

// Camera looks down -z; the view vector points to +z (orthographic).
inline constexpr Vec3 kViewDirection{0.0, 0.0, 1.0};

// Phase of a timestamp in [0, 2pi), signed by the rotation direction.
inline double normalize_phase(double timestamp, const LightTrajectory& traj) {
  const double cycle_pos = std::fmod(timestamp, traj.period) / traj.period;
  return wrap_angle(traj.direction * kTwoPi * cycle_pos);
}

// Light azimuth at the given time: azimuth_offset plus the signed phase.
inline double light_azimuth(const LightTrajectory& traj, double time) {
  return traj.azimuth_offset + normalize_phase(time, traj);
}

inline Vec3 light_direction(const LightTrajectory& traj, double time) {
  const double theta = light_azimuth(traj, time);
  const double ce = std::cos(traj.elevation);
  return {ce * std::cos(theta), ce * std::sin(theta), std::sin(traj.elevation)};
}

// Raw shaded intensity, no floor applied.
inline double shade(const Normal& n, const Material& m, double light_intensity, const Vec3& l) {
  const double ndotl = n.dot(l);
  if (ndotl <= 0.0) return 0.0;
  double value = m.albedo * ndotl;
  if (m.specular_weight > 0.0) {
    const Vec3 r = n * (2.0 * ndotl) - l;
    const double rdotv = std::max(r.dot(kViewDirection), 0.0);
    value += m.specular_weight * std::pow(rdotv, m.specular_exponent);
  }
  return light_intensity * value;
}

// shade() clamped at the intensity floor, ready for log conversion.
inline double shade_floored(const Normal& n, const Material& m, double light_intensity,
                            const Vec3& l) {
  return std::max(shade(n, m, light_intensity, l), intensity_floor(light_intensity));
}

// ---------------------------------------------------------------------------
// Seeds and parallelism
// ---------------------------------------------------------------------------

// SplitMix64 finalizer; used to derive independent per-item seeds.
inline constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Maps a 64-bit hash to a double in [0, 1).
inline constexpr double unit_from_bits(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// 0 means "auto" (hardware concurrency).
inline unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks are
// independent, so results do not depend on the thread count as long as
// fn only writes to its own index range.
inline void parallel_for(std::size_t n, unsigned threads,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(resolve_threads(threads), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t b = w * chunk;
      const std::size_t e = std::min(n, b + chunk);
      if (b >= e) break;
      pool.emplace_back([&fn, &errors, w, b, e] {
        try {
          fn(b, e);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
}

}  // namespace evps
