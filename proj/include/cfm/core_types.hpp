#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cfm {

// Raised when two inputs that must share a shape do not.
class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised for a proposal whose mask has no set pixel.
class DegenerateProposal : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inclusive pixel rectangle.
struct PixelBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  long long area() const { return static_cast<long long>(width()) * height(); }
  bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  bool valid() const { return x0 >= 0 && y0 >= 0 && x0 <= x1 && y0 <= y1; }

  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

// Row-major boolean grid at image resolution.
class BinaryMask {
 public:
  BinaryMask() = default;

  BinaryMask(int width, int height) : width_(width), height_(height) {
    if (width < 1 || height < 1) {
      throw std::invalid_argument("BinaryMask: width and height must be >= 1");
    }
    bits_.assign(static_cast<std::size_t>(width) * height, 0);
  }

  BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
      : width_(width), height_(height), bits_(std::move(bits)) {
    if (width < 1 || height < 1) {
      throw std::invalid_argument("BinaryMask: width and height must be >= 1");
    }
    if (bits_.size() != static_cast<std::size_t>(width) * height) {
      throw std::invalid_argument("BinaryMask: bit count != width*height");
    }
    for (auto& b : bits_) b = b ? 1 : 0;
  }

  static BinaryMask full(int width, int height) {
    return BinaryMask(width, height,
                      std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 1));
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return bits_.size(); }

  bool test(int x, int y) const { return bits_[index(x, y)] != 0; }
  void set(int x, int y, bool value = true) { bits_[index(x, y)] = value ? 1 : 0; }

  std::span<const std::uint8_t> bits() const { return bits_; }
  std::span<const std::uint8_t> row(int y) const {
    return std::span<const std::uint8_t>(bits_).subspan(static_cast<std::size_t>(y) * width_, width_);
  }

  long long count() const {
    long long n = 0;
    for (auto b : bits_) n += b;
    return n;
  }

  bool same_shape(const BinaryMask& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionMismatch(std::string(what) + ": mask dimensions differ (" +
                            std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                            " vs " + std::to_string(b.width()) + "x" +
                            std::to_string(b.height()) + ")");
  }
}

// |a ∩ b| / |a ∪ b|, 0 when the union is empty.
inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "mask_iou");
  long long inter = 0;
  long long uni = 0;
  const auto ab = a.bits();
  const auto bb = b.bits();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    inter += ab[i] & bb[i];
    uni += ab[i] | bb[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline PixelBox bbox_of(const BinaryMask& mask) {
  int x0 = mask.width(), y0 = mask.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height(); ++y) {
    const auto r = mask.row(y);
    for (int x = 0; x < mask.width(); ++x) {
      if (r[x]) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) throw DegenerateProposal("bbox_of: mask has no set pixel");
  return {x0, y0, x1, y1};
}

inline BinaryMask rectangle_mask(int width, int height, const PixelBox& box) {
  BinaryMask m(width, height);
  for (int y = std::max(box.y0, 0); y <= std::min(box.y1, height - 1); ++y)
    for (int x = std::max(box.x0, 0); x <= std::min(box.x1, width - 1); ++x) m.set(x, y);
  return m;
}

inline BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "mask_and");
  std::vector<std::uint8_t> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.bits()[i] & b.bits()[i];
  return BinaryMask(a.width(), a.height(), std::move(out));
}

// A binary segment plus its tight box. The mask keeps full image resolution.
class SegmentProposal {
 public:
  SegmentProposal(std::string id, BinaryMask mask)
      : id_(std::move(id)), mask_(std::move(mask)), box_(bbox_of(mask_)), area_(mask_.count()) {}

  const std::string& id() const { return id_; }
  const BinaryMask& mask() const { return mask_; }
  const PixelBox& box() const { return box_; }
  long long area() const { return area_; }

 private:
  std::string id_;
  BinaryMask mask_;
  PixelBox box_;
  long long area_;
};

// mask_iou for proposals, restricted to the intersection of their boxes.
inline double segment_iou(const SegmentProposal& a, const SegmentProposal& b) {
  require_same_shape(a.mask(), b.mask(), "segment_iou");
  const int x0 = std::max(a.box().x0, b.box().x0);
  const int x1 = std::min(a.box().x1, b.box().x1);
  const int y0 = std::max(a.box().y0, b.box().y0);
  const int y1 = std::min(a.box().y1, b.box().y1);
  long long inter = 0;
  for (int y = y0; y <= y1; ++y) {
    const auto ra = a.mask().row(y);
    const auto rb = b.mask().row(y);
    for (int x = x0; x <= x1; ++x) inter += ra[x] & rb[x];
  }
  const long long uni = a.area() + b.area() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Dense channels x height x width activation tensor, channel-major then row-major.
class FeatureMap {
 public:
  FeatureMap() = default;

  FeatureMap(int channels, int height, int width)
      : channels_(channels), height_(height), width_(width) {
    check_dims();
    values_.assign(static_cast<std::size_t>(channels) * height * width, 0.0f);
  }

  FeatureMap(int channels, int height, int width, std::vector<float> values)
      : channels_(channels), height_(height), width_(width), values_(std::move(values)) {
    check_dims();
    if (values_.size() != static_cast<std::size_t>(channels) * height * width) {
      throw std::invalid_argument("FeatureMap: value count != channels*height*width");
    }
    for (float v : values_) {
      if (!std::isfinite(v)) throw std::invalid_argument("FeatureMap: non-finite value");
    }
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }

  float at(int c, int y, int x) const {
    return values_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  std::span<const float> values() const { return values_; }
  std::span<const float> plane(int c) const {
    return std::span<const float>(values_).subspan(static_cast<std::size_t>(c) * plane_size(),
                                                   plane_size());
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  void check_dims() const {
    if (channels_ < 1 || height_ < 1 || width_ < 1) {
      throw std::invalid_argument("FeatureMap: channels, height and width must be >= 1");
    }
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> values_;
};

// Per-pixel category index; 0 is background.
class LabelMap {
 public:
  LabelMap() = default;

  LabelMap(int width, int height) : width_(width), height_(height) {
    if (width < 1 || height < 1) throw std::invalid_argument("LabelMap: empty dimensions");
    labels_.assign(static_cast<std::size_t>(width) * height, 0);
  }

  LabelMap(int width, int height, std::vector<std::uint16_t> labels)
      : width_(width), height_(height), labels_(std::move(labels)) {
    if (width < 1 || height < 1) throw std::invalid_argument("LabelMap: empty dimensions");
    if (labels_.size() != static_cast<std::size_t>(width) * height) {
      throw std::invalid_argument("LabelMap: label count != width*height");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::uint16_t at(int x, int y) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int x, int y, std::uint16_t label) {
    labels_[static_cast<std::size_t>(y) * width_ + x] = label;
  }
  std::span<const std::uint16_t> labels() const { return labels_; }

  // Throws unless every label is below num_categories.
  void check_categories(int num_categories) const {
    for (auto l : labels_) {
      if (l >= num_categories) {
        throw std::invalid_argument("LabelMap: label " + std::to_string(l) +
                                    " >= number of categories " + std::to_string(num_categories));
      }
    }
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint16_t> labels_;
};

inline BinaryMask mask_of_label(const LabelMap& labels, std::uint16_t category) {
  std::vector<std::uint8_t> bits(labels.labels().size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = labels.labels()[i] == category;
  return BinaryMask(labels.width(), labels.height(), std::move(bits));
}

}  // namespace cfm
