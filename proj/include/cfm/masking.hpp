#pragma once

// Convolutional feature masking: an image-domain segment mask becomes a
// binary mask over feature cells, which is then multiplied into every channel.
//
// Each image pixel votes for the cell whose receptive-field center is nearest
// (per axis; ties go to the smaller index; pixels beyond the outermost centers
// vote for the boundary cell). A cell is set when it received at least one
// vote and the mean of its votes is >= 0.5.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfm/core_types.hpp"
#include "cfm/netgeom.hpp"

namespace cfm {

class FeatureMask {
 public:
  FeatureMask() = default;
  FeatureMask(int height, int width) : height_(height), width_(width) {
    if (height < 1 || width < 1) throw std::invalid_argument("FeatureMask: zero-sized dims");
    bits_.assign(static_cast<std::size_t>(height) * width, 0);
  }

  static FeatureMask full(int height, int width) {
    FeatureMask m(height, width);
    std::fill(m.bits_.begin(), m.bits_.end(), 1);
    return m;
  }

  int height() const { return height_; }
  int width() const { return width_; }
  bool test(int v, int u) const { return bits_[static_cast<std::size_t>(v) * width_ + u] != 0; }
  void set(int v, int u, bool value = true) {
    bits_[static_cast<std::size_t>(v) * width_ + u] = value ? 1 : 0;
  }
  std::span<const std::uint8_t> bits() const { return bits_; }
  long long count() const {
    long long n = 0;
    for (auto b : bits_) n += b;
    return n;
  }

  // Same grid viewed as a BinaryMask (for PGM output).
  BinaryMask as_binary_mask() const { return BinaryMask(width_, height_, bits_); }
  static FeatureMask from_binary_mask(const BinaryMask& m) {
    FeatureMask out(m.height(), m.width());
    out.bits_.assign(m.bits().begin(), m.bits().end());
    return out;
  }

  friend bool operator==(const FeatureMask&, const FeatureMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Index of the nearest center to pixel coordinate p among cells [0, cells).
// With t = (p - O) / S the nearest index is round(t) with halves rounded
// down, i.e. ceil(t - 1/2). All quantities are exact in double.
inline int nearest_cell(const NetGeometry& g, int p, int cells) {
  const double t = (p - g.center_offset) / g.stride;
  const double u = std::ceil(t - 0.5);
  if (u < 0) return 0;
  if (u > cells - 1) return cells - 1;
  return static_cast<int>(u);
}

// Per-axis pixel -> cell tables for one (geometry, image size, map size).
// project() visits every pixel once; project_window() only visits pixels
// whose cell lies inside the window, since assignment is monotone in p.
class MaskProjector {
 public:
  MaskProjector(const NetGeometry& g, int image_width, int image_height, int fh, int fw)
      : fh_(fh), fw_(fw), image_width_(image_width), image_height_(image_height) {
    if (fh < 1 || fw < 1 || image_width < 1 || image_height < 1) {
      throw std::invalid_argument("project_mask: zero-sized dims");
    }
    col_cell_.resize(image_width);
    row_cell_.resize(image_height);
    for (int x = 0; x < image_width; ++x) col_cell_[x] = nearest_cell(g, x, fw);
    for (int y = 0; y < image_height; ++y) row_cell_[y] = nearest_cell(g, y, fh);
    col_begin_ = bucket_starts(col_cell_, fw);
    row_begin_ = bucket_starts(row_cell_, fh);
  }

  int feature_height() const { return fh_; }
  int feature_width() const { return fw_; }

  FeatureMask project(const BinaryMask& mask) const {
    return project_window(mask, {0, 0, fw_ - 1, fh_ - 1});
  }

  // Cells outside `window` are left unset.
  FeatureMask project_window(const BinaryMask& mask, const CellBox& window) const {
    if (mask.width() != image_width_ || mask.height() != image_height_) {
      throw DimensionMismatch("project_mask: mask is " + std::to_string(mask.width()) + "x" +
                              std::to_string(mask.height()) + ", projector expects " +
                              std::to_string(image_width_) + "x" + std::to_string(image_height_));
    }
    FeatureMask out(fh_, fw_);
    const int ww = window.width();
    std::vector<long long> set_votes(static_cast<std::size_t>(window.height()) * ww, 0);
    const int x_begin = col_begin_[window.u0], x_end = col_begin_[window.u1 + 1];
    const int y_begin = row_begin_[window.v0], y_end = row_begin_[window.v1 + 1];
    for (int y = y_begin; y < y_end; ++y) {
      const auto row = mask.row(y);
      long long* votes = set_votes.data() + static_cast<std::size_t>(row_cell_[y] - window.v0) * ww;
      for (int x = x_begin; x < x_end; ++x) votes[col_cell_[x] - window.u0] += row[x];
    }
    for (int v = window.v0; v <= window.v1; ++v) {
      const long long rows = row_begin_[v + 1] - row_begin_[v];
      for (int u = window.u0; u <= window.u1; ++u) {
        const long long total = rows * (col_begin_[u + 1] - col_begin_[u]);
        const long long set =
            set_votes[static_cast<std::size_t>(v - window.v0) * ww + (u - window.u0)];
        if (total > 0 && 2 * set >= total) out.set(v, u);
      }
    }
    return out;
  }

 private:
  // starts[c] = first pixel assigned to cell c; starts[cells] = pixel count.
  static std::vector<int> bucket_starts(const std::vector<int>& cell_of, int cells) {
    std::vector<int> starts(cells + 1, static_cast<int>(cell_of.size()));
    for (int p = static_cast<int>(cell_of.size()) - 1; p >= 0; --p) starts[cell_of[p]] = p;
    for (int c = cells - 1; c >= 0; --c) starts[c] = std::min(starts[c], starts[c + 1]);
    return starts;
  }

  int fh_, fw_, image_width_, image_height_;
  std::vector<int> col_cell_, row_cell_;
  std::vector<int> col_begin_, row_begin_;
};

inline FeatureMask project_mask(const NetGeometry& g, const BinaryMask& image_mask, int fh, int fw) {
  return MaskProjector(g, image_mask.width(), image_mask.height(), fh, fw).project(image_mask);
}

// Reference projection: for every pixel, scan every cell for the smallest
// squared 2-D distance to its center (ties to the smaller row-major index),
// then average the votes per cell. No bucketing, no separability shortcut.
inline FeatureMask brute_force_project(const NetGeometry& g, const BinaryMask& image_mask, int fh,
                                       int fw) {
  if (fh < 1 || fw < 1) throw std::invalid_argument("brute_force_project: zero-sized dims");
  std::vector<long long> votes(static_cast<std::size_t>(fh) * fw, 0);
  std::vector<long long> set(static_cast<std::size_t>(fh) * fw, 0);
  for (int y = 0; y < image_mask.height(); ++y) {
    for (int x = 0; x < image_mask.width(); ++x) {
      std::size_t best = 0;
      double best_d = INFINITY;
      for (int v = 0; v < fh; ++v) {
        for (int u = 0; u < fw; ++u) {
          const double dx = x - g.center(u);
          const double dy = y - g.center(v);
          const double d = dx * dx + dy * dy;
          if (d < best_d) {
            best_d = d;
            best = static_cast<std::size_t>(v) * fw + u;
          }
        }
      }
      ++votes[best];
      set[best] += image_mask.test(x, y) ? 1 : 0;
    }
  }
  FeatureMask out(fh, fw);
  for (int v = 0; v < fh; ++v)
    for (int u = 0; u < fw; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * fw + u;
      if (votes[i] > 0 && static_cast<double>(set[i]) / static_cast<double>(votes[i]) >= 0.5) {
        out.set(v, u);
      }
    }
  return out;
}

// out[c, y, x] = f[c, y, x] * m[y, x]
inline FeatureMap apply_mask(const FeatureMap& f, const FeatureMask& m) {
  if (f.height() != m.height() || f.width() != m.width()) {
    throw DimensionMismatch("apply_mask: feature map is " + std::to_string(f.height()) + "x" +
                            std::to_string(f.width()) + ", mask is " +
                            std::to_string(m.height()) + "x" + std::to_string(m.width()));
  }
  std::vector<float> out(f.values().begin(), f.values().end());
  const std::size_t plane = f.plane_size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m.bits()[i % plane] ? 1.0f : 0.0f;
  return FeatureMap(f.channels(), f.height(), f.width(), std::move(out));
}

}  // namespace cfm
