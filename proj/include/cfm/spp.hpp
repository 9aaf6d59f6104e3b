#pragma once

// Spatial pyramid pooling and the two box+segment feature wirings.
//
// Pooled vector layout (frozen; classifier weights depend on it):
//   for each level in PyramidSpec order
//     for each bin, row-major over the n x n grid
//       for each channel
// so element (level l, bin row r, bin col q, channel c) sits at
//   offset(l) + (r * n_l + q) * C + c,   offset(l) = C * sum_{i<l} n_i^2.

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cfm/core_types.hpp"
#include "cfm/masking.hpp"
#include "cfm/netgeom.hpp"
#include "json.hpp"

namespace cfm {

struct PyramidSpec {
  std::vector<int> levels{6, 3, 2, 1};

  int total_bins() const {
    int n = 0;
    for (int l : levels) n += l * l;
    return n;
  }
  void validate() const {
    if (levels.empty()) throw std::invalid_argument("PyramidSpec: no levels");
    for (int l : levels)
      if (l < 1) throw std::invalid_argument("PyramidSpec: level sizes must be >= 1");
  }

  friend bool operator==(const PyramidSpec&, const PyramidSpec&) = default;
};

struct PooledFeature {
  std::vector<float> values;
  PyramidSpec pyramid;
  int channels = 0;
};

// Half-open cell range [first, second).
using BinRange = std::pair<int, int>;

// Bin j = [floor(j w / n), ceil((j + 1) w / n)); bins may overlap, never empty.
inline std::vector<BinRange> bin_boundaries(int window_len, int bins) {
  if (window_len < 1 || bins < 1) {
    throw std::invalid_argument("bin_boundaries: window_len and bins must be >= 1");
  }
  std::vector<BinRange> out(bins);
  const long long w = window_len, n = bins;
  for (long long j = 0; j < n; ++j) {
    out[j] = {static_cast<int>(j * w / n), static_cast<int>(((j + 1) * w + n - 1) / n)};
  }
  return out;
}

namespace detail {

inline void check_window(const CellBox& window, int height, int width, const char* what) {
  if (window.u0 > window.u1 || window.v0 > window.v1) {
    throw std::invalid_argument(std::string(what) + ": empty window");
  }
  if (window.u0 < 0 || window.v0 < 0 || window.u1 >= width || window.v1 >= height) {
    throw std::invalid_argument(std::string(what) + ": window outside the feature map");
  }
}

// Shared pooling loop; `mask` may be null (unmasked).
inline PooledFeature pool(const FeatureMap& f, const FeatureMask* mask, const CellBox& window,
                          const PyramidSpec& pyr) {
  pyr.validate();
  check_window(window, f.height(), f.width(), "spp_pool");
  if (mask && (mask->height() != f.height() || mask->width() != f.width())) {
    throw DimensionMismatch("spp_pool: mask and feature map dims differ");
  }
  const int C = f.channels();
  PooledFeature out;
  out.pyramid = pyr;
  out.channels = C;
  out.values.assign(static_cast<std::size_t>(C) * pyr.total_bins(), 0.0f);
  std::size_t offset = 0;
  for (int n : pyr.levels) {
    const auto xb = bin_boundaries(window.width(), n);
    const auto yb = bin_boundaries(window.height(), n);
    for (int r = 0; r < n; ++r) {
      for (int q = 0; q < n; ++q) {
        float* dst = out.values.data() + offset + static_cast<std::size_t>(r * n + q) * C;
        for (int c = 0; c < C; ++c) {
          const auto plane = f.plane(c);
          float best = -std::numeric_limits<float>::infinity();
          for (int y = window.v0 + yb[r].first; y < window.v0 + yb[r].second; ++y) {
            const float* row = plane.data() + static_cast<std::size_t>(y) * f.width();
            for (int x = window.u0 + xb[q].first; x < window.u0 + xb[q].second; ++x) {
              const float v = mask ? row[x] * (mask->test(y, x) ? 1.0f : 0.0f) : row[x];
              best = std::max(best, v);
            }
          }
          dst[c] = best;
        }
      }
    }
    offset += static_cast<std::size_t>(n) * n * C;
  }
  return out;
}

}  // namespace detail

// Per channel, per bin max over the window's cells.
inline PooledFeature spp_pool(const FeatureMap& f, const CellBox& window, const PyramidSpec& pyr) {
  return detail::pool(f, nullptr, window, pyr);
}

// spp_pool(apply_mask(f, mask), window, pyr) without materialising the masked map.
inline PooledFeature masked_spp_pool(const FeatureMap& f, const FeatureMask& mask,
                                     const CellBox& window, const PyramidSpec& pyr) {
  return detail::pool(f, &mask, window, pyr);
}

// Bit (r, q) = mean of the mask over bin (r, q) of the window >= 0.5.
inline std::vector<std::uint8_t> downsample_mask_to_grid(const FeatureMask& m,
                                                          const CellBox& window, int n) {
  detail::check_window(window, m.height(), m.width(), "downsample_mask_to_grid");
  const auto xb = bin_boundaries(window.width(), n);
  const auto yb = bin_boundaries(window.height(), n);
  std::vector<std::uint8_t> grid(static_cast<std::size_t>(n) * n, 0);
  for (int r = 0; r < n; ++r)
    for (int q = 0; q < n; ++q) {
      long long set = 0, total = 0;
      for (int y = window.v0 + yb[r].first; y < window.v0 + yb[r].second; ++y)
        for (int x = window.u0 + xb[q].first; x < window.u0 + xb[q].second; ++x) {
          set += m.test(y, x);
          ++total;
        }
      grid[static_cast<std::size_t>(r) * n + q] = 2 * set >= total;
    }
  return grid;
}

struct DesignAFeatures {
  PooledFeature box_feature;
  PooledFeature segment_feature;
};

// Two pathways over the same window: the plain map, and the map masked by
// the projected segment.
inline DesignAFeatures design_a_features(const FeatureMap& conv, const SegmentProposal& p,
                                         const NetGeometry& g, const PyramidSpec& pyr) {
  const auto window = feature_extent(g, p.box(), conv.height(), conv.width());
  const auto fmask = project_mask(g, p.mask(), conv.height(), conv.width());
  return {spp_pool(conv, window, pyr), spp_pool(apply_mask(conv, fmask), window, pyr)};
}

// Zeroes the finest-level bins whose downsampled mask bit is unset.
inline void mask_finest_level(PooledFeature& pooled, const FeatureMask& fmask,
                              const CellBox& window) {
  const int n = pooled.pyramid.levels.front();
  const auto grid = downsample_mask_to_grid(fmask, window, n);
  const std::size_t C = static_cast<std::size_t>(pooled.channels);
  for (std::size_t b = 0; b < grid.size(); ++b) {
    if (!grid[b]) std::fill_n(pooled.values.begin() + b * C, C, 0.0f);
  }
}

// Unmasked pyramid with the segment mask applied to the finest level only.
// The first pyramid level is taken as the finest.
inline PooledFeature design_b_features(const FeatureMap& conv, const SegmentProposal& p,
                                       const NetGeometry& g, const PyramidSpec& pyr) {
  const auto window = feature_extent(g, p.box(), conv.height(), conv.width());
  auto pooled = spp_pool(conv, window, pyr);
  mask_finest_level(pooled, project_mask(g, p.mask(), conv.height(), conv.width()), window);
  return pooled;
}

// Which features a proposal contributes to the classifier.
enum class FeatureDesign {
  box_only,  // no masking: plain SPP over the box window
  design_a,  // box pathway || masked-map pathway
  design_b,  // masked finest pyramid level
};

inline std::string to_string(FeatureDesign d) {
  switch (d) {
    case FeatureDesign::box_only: return "none";
    case FeatureDesign::design_a: return "A";
    case FeatureDesign::design_b: return "B";
  }
  return "?";
}

inline FeatureDesign design_from_string(const std::string& s) {
  if (s == "A" || s == "a") return FeatureDesign::design_a;
  if (s == "B" || s == "b") return FeatureDesign::design_b;
  if (s == "none" || s == "box") return FeatureDesign::box_only;
  throw std::invalid_argument("design must be A, B or none, got '" + s + "'");
}

inline std::size_t feature_length(FeatureDesign d, int channels, const PyramidSpec& pyr) {
  const std::size_t one = static_cast<std::size_t>(channels) * pyr.total_bins();
  return d == FeatureDesign::design_a ? 2 * one : one;
}

// Feature extraction for many proposals of one image at one scale. Holds the
// projection tables so each proposal only touches its own window.
class RegionFeatureExtractor {
 public:
  RegionFeatureExtractor(const FeatureMap& conv, const NetGeometry& g, int image_width,
                         int image_height, PyramidSpec pyr)
      : conv_(conv),
        geometry_(g),
        pyramid_(std::move(pyr)),
        projector_(g, image_width, image_height, conv.height(), conv.width()) {
    pyramid_.validate();
  }

  CellBox window(const SegmentProposal& p) const {
    return feature_extent(geometry_, p.box(), conv_.height(), conv_.width());
  }

  FeatureMask projected(const SegmentProposal& p) const {
    return projector_.project_window(p.mask(), window(p));
  }

  // Concatenated classifier input for `design`.
  std::vector<float> extract(const SegmentProposal& p, FeatureDesign design) const {
    const auto win = window(p);
    auto box = spp_pool(conv_, win, pyramid_);
    if (design == FeatureDesign::box_only) return std::move(box.values);
    const auto fmask = projector_.project_window(p.mask(), win);
    if (design == FeatureDesign::design_b) {
      mask_finest_level(box, fmask, win);
      return std::move(box.values);
    }
    auto seg = masked_spp_pool(conv_, fmask, win, pyramid_);
    box.values.insert(box.values.end(), seg.values.begin(), seg.values.end());
    return std::move(box.values);
  }

 private:
  const FeatureMap& conv_;
  NetGeometry geometry_;
  PyramidSpec pyramid_;
  MaskProjector projector_;
};

inline nlohmann::json pooled_sidecar(const PooledFeature& f) {
  return {{"pyramid", f.pyramid.levels}, {"channels", f.channels}, {"length", f.values.size()}};
}

}  // namespace cfm
