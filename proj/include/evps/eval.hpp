#pragma once

// Angular-error metrics: per-pixel error maps, MAE, and MAE binned by the
// number of events each pixel produced.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evps/core.hpp"
#include "evps/representation.hpp"

namespace evps {

struct EmptyMask : Error {
  using Error::Error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};

inline double angular_error(const Normal& pred, const Normal& gt) {
  return rad2deg(std::acos(std::clamp(pred.dot(gt), -1.0, 1.0)));
}

struct ErrorMap {
  std::uint32_t width{0};
  std::uint32_t height{0};
  std::vector<double> errors;  // degrees, 0 where invalid
  std::vector<std::uint8_t> mask;

  std::size_t size() const { return errors.size(); }
  bool valid(std::size_t i) const { return mask[i] != 0; }
};

namespace detail {

inline void check_same_size(const NormalMap& a, const NormalMap& b) {
  if (a.width != b.width || a.height != b.height)
    throw DimensionMismatch("normal maps differ in size: " + std::to_string(a.width) + "x" +
                            std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                            std::to_string(b.height));
}

}  // namespace detail

// Valid where both maps are valid.
inline ErrorMap error_map(const NormalMap& pred, const NormalMap& gt) {
  detail::check_same_size(pred, gt);
  ErrorMap em;
  em.width = pred.width;
  em.height = pred.height;
  em.errors.assign(pred.size(), 0.0);
  em.mask.assign(pred.size(), 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!pred.valid(i) || !gt.valid(i)) continue;
    em.errors[i] = angular_error(pred.normals[i], gt.normals[i]);
    em.mask[i] = 1;
  }
  return em;
}

inline double mae(const NormalMap& pred, const NormalMap& gt) {
  const ErrorMap em = error_map(pred, gt);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < em.size(); ++i) {
    if (!em.valid(i)) continue;
    sum += em.errors[i];
    ++n;
  }
  if (n == 0) throw EmptyMask("no pixel is valid in both normal maps");
  return sum / static_cast<double>(n);
}

struct CountBin {
  std::uint32_t lo{0};  // inclusive event-count range
  std::uint32_t hi{0};
  std::size_t pixels{0};
  std::optional<double> mae;  // absent for empty bins

  std::string label() const { return std::to_string(lo) + "-" + std::to_string(hi); }
};

struct BinnedReport {
  std::vector<CountBin> bins;
  std::size_t total_pixels{0};  // pixels that fell into some bin
  double overall_mae{0.0};      // over binned pixels
};

// Bins [1, w], [w+1, 2w], ... up to max_count; pixels with zero events or
// more than max_count events are left out.
inline BinnedReport mae_by_event_count(const NormalMap& pred, const NormalMap& gt,
                                       const EventStream& stream, std::uint32_t bin_width = 2,
                                       std::uint32_t max_count = 20) {
  detail::check_same_size(pred, gt);
  if (stream.width != pred.width || stream.height != pred.height)
    throw DimensionMismatch("event stream and normal maps differ in size");
  if (bin_width == 0 || max_count < bin_width)
    throw InvalidArgument("bin width must be positive and no larger than the max count");

  const Grid<std::uint32_t> counts = event_counts(stream);
  const ErrorMap em = error_map(pred, gt);
  const std::uint32_t nbins = max_count / bin_width;
  BinnedReport rep;
  std::vector<double> sums(nbins, 0.0);
  rep.bins.resize(nbins);
  for (std::uint32_t b = 0; b < nbins; ++b) {
    rep.bins[b].lo = b * bin_width + 1;
    rep.bins[b].hi = (b + 1) * bin_width;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < em.size(); ++i) {
    if (!em.valid(i)) continue;
    const std::uint32_t c = counts.data[i];
    if (c == 0 || c > nbins * bin_width) continue;
    const std::uint32_t b = (c - 1) / bin_width;
    sums[b] += em.errors[i];
    ++rep.bins[b].pixels;
    total += em.errors[i];
    ++rep.total_pixels;
  }
  if (rep.total_pixels == 0) throw EmptyMask("no valid pixel falls into any event-count bin");
  for (std::uint32_t b = 0; b < nbins; ++b)
    if (rep.bins[b].pixels > 0) rep.bins[b].mae = sums[b] / static_cast<double>(rep.bins[b].pixels);
  rep.overall_mae = total / static_cast<double>(rep.total_pixels);
  return rep;
}

}  // namespace evps
