#pragma once

// Closed-form normal recovery from the exponential contrast series:
// least-squares cosine fit followed by inversion through the light elevation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "evps/core.hpp"
#include "evps/representation.hpp"

namespace evps {

struct DegenerateFit : Error {
  using Error::Error;
};

struct DegenerateParams : Error {
  using Error::Error;
};

// E(theta) = amplitude * cos(theta - phase) + offset.
struct CosineParams {
  double amplitude{0.0};
  double phase{0.0};  // [0, 2pi)
  double offset{0.0};

  // Azimuth of the normal.
  double alpha() const { return phase; }

  // nx^2 + ny^2 implied by the inversion below.
  double beta(double elevation) const {
    const double a = amplitude * std::tan(elevation);
    const double d = a * a + offset * offset;
    return d > 0.0 ? a * a / d : 0.0;
  }
};

// Amplitudes below this fraction of the series scale are treated as zero,
// which leaves the phase undefined; it is reported as 0.
inline constexpr double kZeroAmplitudeTolerance = 1e-12;

// Linear least squares of samples against (cos, sin, 1).
inline CosineParams fit_cosine(const ContrastSeries& series) {
  const std::size_t n = series.samples.size();
  if (n != series.phases.size()) throw InvalidArgument("series samples and phases differ in length");
  if (n < 3) throw DegenerateFit("cosine fit needs at least three samples");

  Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
  Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d row(std::cos(series.phases[i]), std::sin(series.phases[i]), 1.0);
    normal.noalias() += row * row.transpose();
    rhs.noalias() += row * series.samples[i];
    scale = std::max(scale, std::abs(series.samples[i]));
  }
  Eigen::FullPivLU<Eigen::Matrix3d> lu(normal);
  lu.setThreshold(1e-10);
  if (lu.rank() < 3) throw DegenerateFit("cosine fit is singular (fewer than three distinct phases)");
  const Eigen::Vector3d coef = lu.solve(rhs);

  CosineParams p;
  p.amplitude = std::hypot(coef[0], coef[1]);
  p.offset = coef[2];
  if (p.amplitude <= kZeroAmplitudeTolerance * std::max(scale, 1.0)) {
    p.amplitude = 0.0;
    p.phase = 0.0;
  } else {
    p.phase = wrap_angle(std::atan2(coef[1], coef[0]));
  }
  return p;
}

inline Normal normal_from_params(const CosineParams& params, double elevation) {
  if (!(elevation > 0.0 && elevation < kPi / 2.0))
    throw InvalidArgument("elevation must lie in (0, pi/2)");
  const double lateral = params.amplitude * std::tan(elevation);
  const double denom = std::hypot(lateral, params.offset);
  if (!(denom > 0.0) || !std::isfinite(denom))
    throw DegenerateParams("amplitude and offset both vanish");
  const Normal n{lateral * std::cos(params.phase) / denom, lateral * std::sin(params.phase) / denom,
                 params.offset / denom};
  return flip_to_camera(n);
}

inline constexpr int kDefaultMinEvents = 4;

struct AnalyticSolution {
  NormalMap normals;
  // Pixels inverted from a non-positive fitted offset (typically specular).
  Mask nonpositive_offset;
  std::size_t nonpositive_count{0};
};

// Per pixel: polarity vector, contrast series, cosine fit, inversion. Pixels
// with fewer than min_events events or a degenerate fit are left invalid.
inline AnalyticSolution solve_map(const EventStream& stream, double threshold, double elevation,
                                  int segments = kDefaultSegments,
                                  int min_events = kDefaultMinEvents, unsigned threads = 1) {
  if (!(threshold > 0.0)) throw InvalidArgument("contrast threshold must be positive");
  if (!(elevation > 0.0 && elevation < kPi / 2.0))
    throw InvalidArgument("elevation must lie in (0, pi/2)");
  if (segments < 2) throw InvalidArgument("segment count must be >= 2");

  const PixelEventIndex index(stream);
  AnalyticSolution sol;
  sol.normals = NormalMap(stream.width, stream.height);
  sol.nonpositive_offset = Mask(stream.width, stream.height, 0);

  parallel_for(index.pixels(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t p = b; p < e; ++p) {
      const auto events = index.at(p);
      if (events.size() < static_cast<std::size_t>(std::max(min_events, 1))) continue;
      const PolarityVector pv = polarity_vector(events, stream.trajectory, segments);
      try {
        const CosineParams params = fit_cosine(contrast_series(pv, threshold, stream.trajectory));
        sol.normals.set(p, normal_from_params(params, elevation));
        if (params.offset <= 0.0) sol.nonpositive_offset.data[p] = 1;
      } catch (const DegenerateFit&) {
      } catch (const DegenerateParams&) {
      }
    }
  });
  sol.nonpositive_count = static_cast<std::size_t>(
      std::count(sol.nonpositive_offset.data.begin(), sol.nonpositive_offset.data.end(), 1));
  return sol;
}

}  // namespace evps
