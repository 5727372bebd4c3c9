#pragma once

// Per-pixel event representations: the polarity-sum vector fed to the
// network and the exponential contrast series used by the analytic solver.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "evps/core.hpp"

namespace evps {

inline constexpr int kDefaultSegments = 96;

// Events grouped by pixel (CSR layout), time order preserved within a pixel.
class PixelEventIndex {
 public:
  explicit PixelEventIndex(const EventStream& stream)
      : width_(stream.width), height_(stream.height) {
    const std::size_t npix = static_cast<std::size_t>(width_) * height_;
    offsets_.assign(npix + 1, 0);
    for (const Event& e : stream.events) {
      if (e.x >= width_ || e.y >= height_)
        throw InvalidArgument("event coordinate out of range");
      ++offsets_[static_cast<std::size_t>(e.y) * width_ + e.x + 1];
    }
    for (std::size_t i = 1; i <= npix; ++i) offsets_[i] += offsets_[i - 1];
    events_.resize(stream.events.size());
    std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for (const Event& e : stream.events)
      events_[cursor[static_cast<std::size_t>(e.y) * width_ + e.x]++] = e;
  }

  std::uint32_t width() const { return width_; }
  std::uint32_t height() const { return height_; }
  std::size_t pixels() const { return offsets_.size() - 1; }

  std::span<const Event> at(std::size_t pixel) const {
    return {events_.data() + offsets_[pixel], offsets_[pixel + 1] - offsets_[pixel]};
  }
  std::size_t count(std::size_t pixel) const { return offsets_[pixel + 1] - offsets_[pixel]; }

 private:
  std::uint32_t width_;
  std::uint32_t height_;
  std::vector<std::size_t> offsets_;
  std::vector<Event> events_;
};

// Per-pixel total event counts.
inline Grid<std::uint32_t> event_counts(const EventStream& stream) {
  Grid<std::uint32_t> counts(stream.width, stream.height, 0);
  for (const Event& e : stream.events) ++counts(e.x, e.y);
  return counts;
}

// Segment k (0-based) covers [k*T/M, (k+1)*T/M); the last one also takes t = T.
inline int segment_index(double t, double period, int segments) {
  if (!(t >= 0.0) || t > period) throw InvalidArgument("timestamp outside the cycle");
  const double width = period / segments;
  int k = static_cast<int>(std::floor(t / width));
  k = std::clamp(k, 0, segments - 1);
  // Snap against the boundaries as computed, so t == k*T/M lands in segment k.
  while (k + 1 < segments && t >= (k + 1) * width) ++k;
  while (k > 0 && t < k * width) --k;
  return k;
}

struct PolarityVector {
  std::vector<int> values;  // length M, values[k] is segment k (0-based)
  std::uint32_t x{0};
  std::uint32_t y{0};

  int segments() const { return static_cast<int>(values.size()); }
};

inline PolarityVector polarity_vector(std::span<const Event> pixel_events,
                                      const LightTrajectory& traj,
                                      int segments = kDefaultSegments, std::uint32_t x = 0,
                                      std::uint32_t y = 0) {
  if (segments < 2) throw InvalidArgument("segment count must be >= 2");
  PolarityVector pv{std::vector<int>(static_cast<std::size_t>(segments), 0), x, y};
  for (const Event& e : pixel_events)
    pv.values[static_cast<std::size_t>(segment_index(e.t, traj.period, segments))] += e.p;
  return pv;
}

struct ContrastSeries {
  std::vector<double> samples;  // E at the M+1 segment boundaries, samples[0] == 1
  std::vector<double> phases;   // light azimuth at each boundary
};

// samples[k] = exp(C * sum_{j<k} P[j]). Phases are the light azimuth
// (offset + signed phase) at the boundary times k*T/M.
inline ContrastSeries contrast_series(const PolarityVector& pv, double threshold,
                                      const LightTrajectory& traj) {
  if (!(threshold > 0.0)) throw InvalidArgument("contrast threshold must be positive");
  const int m = pv.segments();
  ContrastSeries cs;
  cs.samples.resize(static_cast<std::size_t>(m) + 1);
  cs.phases.resize(static_cast<std::size_t>(m) + 1);
  long long acc = 0;
  for (int k = 0; k <= m; ++k) {
    if (k > 0) acc += pv.values[static_cast<std::size_t>(k - 1)];
    cs.samples[static_cast<std::size_t>(k)] = std::exp(threshold * static_cast<double>(acc));
    cs.phases[static_cast<std::size_t>(k)] =
        wrap_angle(light_azimuth(traj, k * traj.period / m));
  }
  return cs;
}

// Per-pixel samples for the network: M raw polarity sums per record.
struct Dataset {
  int segments{kDefaultSegments};
  bool has_targets{false};
  std::vector<double> features;  // size() x segments, row-major
  std::vector<Normal> targets;   // empty unless has_targets
  std::vector<std::array<std::uint32_t, 2>> pixels;
  std::vector<std::uint32_t> event_counts;

  std::size_t size() const { return pixels.size(); }
  std::span<const double> feature(std::size_t i) const {
    return {features.data() + i * static_cast<std::size_t>(segments),
            static_cast<std::size_t>(segments)};
  }

  void append(const Dataset& other) {
    if (size() == 0 && features.empty()) {
      *this = other;
      return;
    }
    if (other.segments != segments) throw InvalidArgument("dataset segment counts differ");
    if (other.has_targets != has_targets) throw InvalidArgument("dataset target presence differs");
    features.insert(features.end(), other.features.begin(), other.features.end());
    targets.insert(targets.end(), other.targets.begin(), other.targets.end());
    pixels.insert(pixels.end(), other.pixels.begin(), other.pixels.end());
    event_counts.insert(event_counts.end(), other.event_counts.begin(), other.event_counts.end());
  }
};

// One record per masked pixel in row-major order. With ground truth, pixels
// whose ground truth is invalid are skipped as well.
inline Dataset build_dataset(const EventStream& stream, const Mask& mask,
                             int segments = kDefaultSegments, const NormalMap* gt = nullptr) {
  if (segments < 2) throw InvalidArgument("segment count must be >= 2");
  if (mask.width != stream.width || mask.height != stream.height)
    throw InvalidArgument("mask dimensions do not match the event stream");
  if (gt && (gt->width != stream.width || gt->height != stream.height))
    throw InvalidArgument("ground-truth dimensions do not match the event stream");

  const PixelEventIndex index(stream);
  Dataset ds;
  ds.segments = segments;
  ds.has_targets = gt != nullptr;
  for (std::uint32_t y = 0; y < stream.height; ++y)
    for (std::uint32_t x = 0; x < stream.width; ++x) {
      const std::size_t p = mask.index(x, y);
      if (!mask.data[p]) continue;
      if (gt && !gt->valid(p)) continue;
      const PolarityVector pv = polarity_vector(index.at(p), stream.trajectory, segments, x, y);
      for (int v : pv.values) ds.features.push_back(static_cast<double>(v));
      if (gt) ds.targets.push_back(gt->normals[p]);
      ds.pixels.push_back({x, y});
      ds.event_counts.push_back(static_cast<std::uint32_t>(index.count(p)));
    }
  return ds;
}

// Center crop of an event stream to width x height pixels.
inline EventStream center_crop(const EventStream& stream, std::uint32_t width,
                               std::uint32_t height) {
  if (width == 0 || height == 0 || width > stream.width || height > stream.height)
    throw InvalidArgument("crop size must be positive and within the stream resolution");
  const std::uint32_t x0 = (stream.width - width) / 2;
  const std::uint32_t y0 = (stream.height - height) / 2;
  EventStream out;
  out.width = width;
  out.height = height;
  out.trajectory = stream.trajectory;
  for (const Event& e : stream.events) {
    if (e.x < x0 || e.y < y0 || e.x >= x0 + width || e.y >= y0 + height) continue;
    Event c = e;
    c.x = static_cast<std::uint16_t>(e.x - x0);
    c.y = static_cast<std::uint16_t>(e.y - y0);
    out.events.push_back(c);
  }
  return out;
}

inline NormalMap center_crop(const NormalMap& map, std::uint32_t width, std::uint32_t height) {
  if (width == 0 || height == 0 || width > map.width || height > map.height)
    throw InvalidArgument("crop size must be positive and within the map resolution");
  const std::uint32_t x0 = (map.width - width) / 2;
  const std::uint32_t y0 = (map.height - height) / 2;
  NormalMap out(width, height);
  for (std::uint32_t y = 0; y < height; ++y)
    for (std::uint32_t x = 0; x < width; ++x) {
      const std::size_t src = map.index(x + x0, y + y0);
      if (map.valid(src)) out.set(out.index(x, y), map.normals[src]);
    }
  return out;
}

}  // namespace evps
