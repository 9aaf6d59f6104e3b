#pragma once

// Synthetic scenes for desk-scale training and evaluation.
//
// Objects are flat-coloured shapes, one shape and hue per category. Stuff is a
// textured band along the top or bottom edge with a wavy boundary. Everything
// else is background (category 0) with a gentle gradient.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "cfm/core_types.hpp"
#include "cfm/pursuit.hpp"
#include "cfm/random.hpp"
#include "json.hpp"

namespace cfm {

enum class ShapeKind { rectangle, ellipse, triangle, cross };

struct ObjectShape {
  int category = 1;
  ShapeKind kind = ShapeKind::rectangle;
  PixelBox box;
  std::array<float, 3> color{1.0f, 0.0f, 0.0f};
};

enum class BandSide { top, bottom };

struct StuffBand {
  int category = 4;
  BandSide side = BandSide::top;
  int depth = 20;            // mean band thickness in pixels
  double wave_amplitude = 4;  // boundary displacement in pixels
  double wave_period = 40;
  double wave_phase = 0;
  int texture = 0;  // 0: speckle noise, 1: vertical stripes
  std::array<float, 3> color{0.5f, 0.5f, 0.5f};
};

struct SceneSpec {
  int width = 128;
  int height = 128;
  std::vector<StuffBand> bands;     // painted first
  std::vector<ObjectShape> objects; // painted in order, later ones on top
  std::uint64_t seed = 0;
};

struct Scene {
  FeatureMap image;  // 3 channels in [0, 1]
  LabelMap gt;
  std::vector<GroundTruthSegment> segments;  // visible pixels of each object and band
};

inline bool shape_contains(const ObjectShape& s, int x, int y) {
  const auto& b = s.box;
  if (!b.contains(x, y)) return false;
  const double w = b.width(), h = b.height();
  const double fx = (x - b.x0 + 0.5) / w, fy = (y - b.y0 + 0.5) / h;  // in (0, 1)
  switch (s.kind) {
    case ShapeKind::rectangle:
      return true;
    case ShapeKind::ellipse: {
      const double dx = fx - 0.5, dy = fy - 0.5;
      return dx * dx + dy * dy <= 0.25;
    }
    case ShapeKind::triangle:  // apex at top centre
      return std::abs(fx - 0.5) <= 0.5 * fy;
    case ShapeKind::cross:
      return std::abs(fx - 0.5) <= 0.17 || std::abs(fy - 0.5) <= 0.17;
  }
  return false;
}

inline bool band_contains(const StuffBand& band, int width, int height, int x, int y) {
  (void)width;
  const double edge =
      band.depth + band.wave_amplitude *
                       std::sin(2.0 * std::numbers::pi * x / band.wave_period + band.wave_phase);
  return band.side == BandSide::top ? y < edge : y >= height - edge;
}

inline Scene generate_scene(const SceneSpec& spec) {
  if (spec.width < 1 || spec.height < 1) throw std::invalid_argument("generate_scene: empty image");
  for (const auto& o : spec.objects) {
    if (!o.box.valid() || o.box.x1 >= spec.width || o.box.y1 >= spec.height) {
      throw std::invalid_argument("generate_scene: object box out of bounds");
    }
    if (o.category < 1) throw std::invalid_argument("generate_scene: object category must be >= 1");
  }
  const int W = spec.width, H = spec.height;
  const std::size_t plane = static_cast<std::size_t>(W) * H;
  std::vector<float> rgb(3 * plane);
  LabelMap gt(W, H);
  std::vector<int> owner(plane, -1);  // index into segments list order below

  Rng rng(spec.seed);
  const double gx = rng.uniform(-0.1, 0.1), gy = rng.uniform(-0.1, 0.1);
  const std::array<double, 3> bg{rng.uniform(0.45, 0.6), rng.uniform(0.42, 0.55),
                                 rng.uniform(0.38, 0.5)};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double ramp = gx * x / W + gy * y / H;
      const double n = rng.uniform(-0.03, 0.03);
      for (int c = 0; c < 3; ++c) {
        rgb[c * plane + y * W + x] = static_cast<float>(std::clamp(bg[c] + ramp + n, 0.0, 1.0));
      }
    }

  const std::size_t nb = spec.bands.size();
  for (std::size_t b = 0; b < nb; ++b) {
    const auto& band = spec.bands[b];
    const double freq = 2.0 * std::numbers::pi / 3.0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (!band_contains(band, W, H, x, y)) continue;
        double t = band.texture == 0 ? rng.uniform(-0.25, 0.25)
                                     : 0.22 * std::sin(freq * x) + rng.uniform(-0.05, 0.05);
        for (int c = 0; c < 3; ++c) {
          rgb[c * plane + y * W + x] =
              static_cast<float>(std::clamp(band.color[c] + t, 0.0, 1.0));
        }
        gt.set(x, y, static_cast<std::uint16_t>(band.category));
        owner[static_cast<std::size_t>(y) * W + x] = static_cast<int>(b);
      }
  }
  for (std::size_t o = 0; o < spec.objects.size(); ++o) {
    const auto& s = spec.objects[o];
    for (int y = s.box.y0; y <= s.box.y1; ++y)
      for (int x = s.box.x0; x <= s.box.x1; ++x) {
        if (!shape_contains(s, x, y)) continue;
        for (int c = 0; c < 3; ++c) rgb[c * plane + y * W + x] = s.color[c];
        gt.set(x, y, static_cast<std::uint16_t>(s.category));
        owner[static_cast<std::size_t>(y) * W + x] = static_cast<int>(nb + o);
      }
  }

  Scene scene{FeatureMap(3, H, W, std::move(rgb)), std::move(gt), {}};
  const std::size_t n_owners = nb + spec.objects.size();
  std::vector<std::vector<std::uint8_t>> bits(n_owners, std::vector<std::uint8_t>(plane, 0));
  for (std::size_t i = 0; i < plane; ++i)
    if (owner[i] >= 0) bits[owner[i]][i] = 1;
  for (std::size_t k = 0; k < n_owners; ++k) {
    BinaryMask m(W, H, std::move(bits[k]));
    if (m.count() == 0) continue;  // fully occluded
    const int cat = k < nb ? spec.bands[k].category : spec.objects[k - nb].category;
    scene.segments.push_back({std::move(m), cat});
  }
  return scene;
}

// Category layout used by random_scene_spec.
struct SceneCategories {
  int num_objects = 3;  // categories 1..num_objects
  int num_stuff = 2;    // categories num_objects+1 ..
  int total() const { return 1 + num_objects + num_stuff; }
  bool is_stuff(int c) const { return c > num_objects && c < total(); }
};

inline SceneSpec random_scene_spec(std::uint64_t seed, int width = 128, int height = 128,
                                   SceneCategories cats = {}) {
  static constexpr std::array<std::array<float, 3>, 6> kObjectColors{{
      {0.90f, 0.15f, 0.12f}, {0.95f, 0.85f, 0.10f}, {0.65f, 0.20f, 0.85f},
      {0.10f, 0.80f, 0.85f}, {0.95f, 0.55f, 0.10f}, {0.30f, 0.30f, 0.30f}}};
  static constexpr std::array<ShapeKind, 4> kShapes{ShapeKind::ellipse, ShapeKind::triangle,
                                                    ShapeKind::cross, ShapeKind::rectangle};
  static constexpr std::array<std::array<float, 3>, 4> kStuffColors{
      {{0.45f, 0.60f, 0.90f}, {0.30f, 0.62f, 0.25f}, {0.55f, 0.40f, 0.25f}, {0.7f, 0.7f, 0.75f}}};

  Rng rng(seed);
  SceneSpec spec;
  spec.width = width;
  spec.height = height;
  spec.seed = mix_seed(seed, 1);
  for (int s = 0; s < cats.num_stuff && s < 2; ++s) {
    if (rng.uniform() < 0.2) continue;
    StuffBand band;
    band.category = cats.num_objects + 1 + s;
    band.side = s == 0 ? BandSide::top : BandSide::bottom;
    band.depth = rng.between(height / 5, height * 2 / 5);
    band.wave_amplitude = rng.uniform(2.0, height / 12.0);
    band.wave_period = rng.uniform(width / 3.0, width);
    band.wave_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    band.texture = s % 2;
    band.color = kStuffColors[s % kStuffColors.size()];
    spec.bands.push_back(band);
  }
  const int count = rng.between(1, 3);
  for (int i = 0; i < count; ++i) {
    ObjectShape o;
    o.category = rng.between(1, cats.num_objects);
    o.kind = kShapes[(o.category - 1) % kShapes.size()];
    const int w = rng.between(width / 6, width * 5 / 16);
    const int h = rng.between(height / 6, height * 5 / 16);
    const int x0 = rng.between(0, width - w);
    const int y0 = rng.between(0, height - h);
    o.box = {x0, y0, x0 + w - 1, y0 + h - 1};
    const auto& base = kObjectColors[(o.category - 1) % kObjectColors.size()];
    for (int c = 0; c < 3; ++c) {
      o.color[c] = static_cast<float>(std::clamp(base[c] + rng.uniform(-0.06, 0.06), 0.0, 1.0));
    }
    spec.objects.push_back(o);
  }
  return spec;
}

// ---- proposals -------------------------------------------------------------

struct ProposalParams {
  std::vector<int> grid_cells{16, 32};  // super-pixel grid granularities (pixels)
  int jitter = 2;                       // max shift of ground-truth copies; 0 = exact copies
  int erode = 2;
  int dilate = 3;
};

inline BinaryMask shift_mask(const BinaryMask& m, int dx, int dy) {
  BinaryMask out(m.width(), m.height());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      const int sx = x - dx, sy = y - dy;
      if (sx >= 0 && sy >= 0 && sx < m.width() && sy < m.height() && m.test(sx, sy)) out.set(x, y);
    }
  return out;
}

// Square structuring element of the given radius.
inline BinaryMask morph(const BinaryMask& m, int radius, bool dilate) {
  BinaryMask out(m.width(), m.height());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      bool any = false, all = true;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const int sx = x + dx, sy = y + dy;
          const bool v = sx >= 0 && sy >= 0 && sx < m.width() && sy < m.height() && m.test(sx, sy);
          any |= v;
          all &= v;
        }
      if (dilate ? any : all) out.set(x, y);
    }
  return out;
}

// The first `fraction` of a mask's pixels in row-major order.
inline BinaryMask leading_fraction(const BinaryMask& m, double fraction) {
  const long long keep = std::max<long long>(1, static_cast<long long>(fraction * m.count()));
  BinaryMask out(m.width(), m.height());
  long long taken = 0;
  for (int y = 0; y < m.height() && taken < keep; ++y)
    for (int x = 0; x < m.width() && taken < keep; ++x)
      if (m.test(x, y)) {
        out.set(x, y);
        ++taken;
      }
  return out;
}

// Grid super-pixels (grid cells split along ground-truth region borders)
// merged over 1x1 and 2x2 cell windows, plus perturbed copies of every
// ground-truth segment. Duplicates are dropped; the survivors are shuffled by
// seed and numbered p0000, p0001, ...
inline std::vector<SegmentProposal> toy_proposals(int width, int height,
                                                  const std::vector<GroundTruthSegment>& gt,
                                                  const ProposalParams& params,
                                                  std::uint64_t seed) {
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  std::vector<int> region(plane, static_cast<int>(gt.size()));  // background region = gt.size()
  for (std::size_t k = 0; k < gt.size(); ++k) {
    if (gt[k].mask.width() != width || gt[k].mask.height() != height) {
      throw DimensionMismatch("toy_proposals: ground-truth mask dimensions differ");
    }
    for (std::size_t i = 0; i < plane; ++i)
      if (gt[k].mask.bits()[i]) region[i] = static_cast<int>(k);
  }

  std::vector<BinaryMask> masks;
  auto add = [&](BinaryMask m) {
    if (m.count() > 0) masks.push_back(std::move(m));
  };

  for (int cell : params.grid_cells) {
    if (cell < 1) throw std::invalid_argument("toy_proposals: grid cell size must be >= 1");
    const int gw = (width + cell - 1) / cell, gh = (height + cell - 1) / cell;
    for (int span : {1, 2}) {
      if (span == 1 && cell != params.grid_cells.back()) continue;  // single cells only at coarsest
      for (int cy = 0; cy + span <= gh; ++cy)
        for (int cx = 0; cx + span <= gw; ++cx) {
          const PixelBox box{cx * cell, cy * cell, std::min(width, (cx + span) * cell) - 1,
                             std::min(height, (cy + span) * cell) - 1};
          std::vector<BinaryMask> per_region(gt.size() + 1, BinaryMask(width, height));
          std::vector<bool> used(gt.size() + 1, false);
          for (int y = box.y0; y <= box.y1; ++y)
            for (int x = box.x0; x <= box.x1; ++x) {
              const int r = region[static_cast<std::size_t>(y) * width + x];
              per_region[r].set(x, y);
              used[r] = true;
            }
          int distinct = 0;
          for (std::size_t r = 0; r < used.size(); ++r)
            if (used[r]) {
              ++distinct;
              add(per_region[r]);
            }
          if (distinct > 1) add(rectangle_mask(width, height, box));
        }
    }
  }

  Rng rng(seed);
  for (const auto& g : gt) {
    const int dx = params.jitter > 0 ? rng.between(-params.jitter, params.jitter) : 0;
    const int dy = params.jitter > 0 ? rng.between(-params.jitter, params.jitter) : 0;
    add(shift_mask(g.mask, dx, dy));
    if (params.erode > 0) add(morph(g.mask, params.erode, false));
    if (params.dilate > 0) add(morph(g.mask, params.dilate, true));
    add(rectangle_mask(width, height, bbox_of(g.mask)));
    add(leading_fraction(g.mask, 0.2));
    const auto b = bbox_of(g.mask);
    add(mask_and(g.mask, rectangle_mask(width, height, {b.x0, b.y0, (b.x0 + b.x1) / 2, b.y1})));
  }

  // Deduplicate by content, keeping first occurrence.
  std::vector<BinaryMask> unique;
  {
    struct Hash {
      std::size_t operator()(const BinaryMask* m) const {
        std::uint64_t h = 1469598103934665603ULL;
        for (auto b : m->bits()) h = (h ^ b) * 1099511628211ULL;
        return static_cast<std::size_t>(h);
      }
    };
    struct Eq {
      bool operator()(const BinaryMask* a, const BinaryMask* b) const { return *a == *b; }
    };
    std::unordered_set<const BinaryMask*, Hash, Eq> seen;
    for (const auto& m : masks)
      if (seen.insert(&m).second) unique.push_back(m);
  }
  rng.shuffle(std::span<BinaryMask>(unique));

  std::vector<SegmentProposal> out;
  out.reserve(unique.size());
  for (std::size_t i = 0; i < unique.size(); ++i) {
    char id[24];
    std::snprintf(id, sizeof id, "p%04zu", i);
    out.emplace_back(id, std::move(unique[i]));
  }
  return out;
}

// ---- JSON ----------------------------------------------------------------

inline nlohmann::json scene_spec_to_json(const SceneSpec& s) {
  nlohmann::json objects = nlohmann::json::array(), bands = nlohmann::json::array();
  static const char* kShapeNames[] = {"rectangle", "ellipse", "triangle", "cross"};
  for (const auto& o : s.objects) {
    objects.push_back({{"category", o.category},
                       {"shape", kShapeNames[static_cast<int>(o.kind)]},
                       {"box", {o.box.x0, o.box.y0, o.box.x1, o.box.y1}},
                       {"color", o.color}});
  }
  for (const auto& b : s.bands) {
    bands.push_back({{"category", b.category},
                     {"side", b.side == BandSide::top ? "top" : "bottom"},
                     {"depth", b.depth},
                     {"wave_amplitude", b.wave_amplitude},
                     {"wave_period", b.wave_period},
                     {"wave_phase", b.wave_phase},
                     {"texture", b.texture},
                     {"color", b.color}});
  }
  return {{"width", s.width}, {"height", s.height}, {"seed", s.seed},
          {"objects", objects}, {"bands", bands}};
}

inline SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.width = j.at("width").get<int>();
  s.height = j.at("height").get<int>();
  s.seed = j.value("seed", std::uint64_t{0});
  for (const auto& o : j.value("objects", nlohmann::json::array())) {
    ObjectShape shape;
    shape.category = o.at("category").get<int>();
    const auto kind = o.value("shape", std::string("rectangle"));
    if (kind == "rectangle") shape.kind = ShapeKind::rectangle;
    else if (kind == "ellipse") shape.kind = ShapeKind::ellipse;
    else if (kind == "triangle") shape.kind = ShapeKind::triangle;
    else if (kind == "cross") shape.kind = ShapeKind::cross;
    else throw std::invalid_argument("scene spec: unknown shape '" + kind + "'");
    const auto& b = o.at("box");
    shape.box = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
    if (o.contains("color")) shape.color = o.at("color").get<std::array<float, 3>>();
    s.objects.push_back(shape);
  }
  for (const auto& b : j.value("bands", nlohmann::json::array())) {
    StuffBand band;
    band.category = b.at("category").get<int>();
    band.side = b.value("side", std::string("top")) == "bottom" ? BandSide::bottom : BandSide::top;
    band.depth = b.value("depth", 20);
    band.wave_amplitude = b.value("wave_amplitude", 4.0);
    band.wave_period = b.value("wave_period", 40.0);
    band.wave_phase = b.value("wave_phase", 0.0);
    band.texture = b.value("texture", 0);
    if (b.contains("color")) band.color = b.at("color").get<std::array<float, 3>>();
    s.bands.push_back(band);
  }
  return s;
}

}  // namespace cfm
