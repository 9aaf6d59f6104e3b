#pragma once

// Small deterministic convolutional feature extractor.
//
// Weights come from cfm::Rng (std::mt19937_64) seeded with ToyNetSpec::seed and
// are drawn layer by layer in [out][in][ky][kx] order:
//   w = (2u - 1) * sqrt(6 / (in_channels * k * k)),  u = Rng::uniform()
// computed in double and rounded to float. Biases are zero. A rectifier
// follows every conv layer; pool layers are max pools that ignore padding.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfm/core_types.hpp"
#include "cfm/netgeom.hpp"
#include "cfm/parallel.hpp"
#include "cfm/random.hpp"
#include "json.hpp"

namespace cfm {

struct ToyLayer {
  LayerSpec geometry;
  int out_channels = 0;  // ignored for pool layers
};

struct ToyNetSpec {
  int in_channels = 3;
  std::vector<ToyLayer> layers;
  std::uint64_t seed = 0;
};

// 3 conv layers, k=3 s=2 p=1, 3 -> 8 -> 16 -> 32 channels: S=8, RF=15.
inline ToyNetSpec default_toynet_spec(std::uint64_t seed = 0) {
  ToyNetSpec spec;
  spec.in_channels = 3;
  spec.seed = seed;
  for (int ch : {8, 16, 32}) spec.layers.push_back({{LayerKind::conv, 3, 2, 1}, ch});
  return spec;
}

inline ToyNetSpec toynet_spec_from_json(const nlohmann::json& j) {
  ToyNetSpec spec;
  spec.in_channels = j.value("in_channels", 3);
  spec.seed = j.value("seed", std::uint64_t{0});
  for (const auto& item : j.at("layers")) {
    ToyLayer l;
    l.geometry = layer_from_json(item);
    l.out_channels = item.value("out_channels", 0);
    spec.layers.push_back(l);
  }
  return spec;
}

inline nlohmann::json toynet_spec_to_json(const ToyNetSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    auto j = layer_to_json(l.geometry);
    if (l.geometry.kind == LayerKind::conv) j["out_channels"] = l.out_channels;
    layers.push_back(j);
  }
  return {{"in_channels", spec.in_channels}, {"seed", spec.seed}, {"layers", layers}};
}

class ToyNet {
 public:
  explicit ToyNet(ToyNetSpec spec) : spec_(std::move(spec)) {
    if (spec_.layers.empty()) throw std::invalid_argument("ToyNet: no layers");
    if (spec_.in_channels < 1) throw std::invalid_argument("ToyNet: in_channels must be >= 1");
    Rng rng(spec_.seed);
    int channels = spec_.in_channels;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& l = spec_.layers[i];
      validate_layer(l.geometry);
      LayerParams p;
      p.in_channels = channels;
      if (l.geometry.kind == LayerKind::conv) {
        if (l.out_channels < 1) {
          throw std::invalid_argument("ToyNet: layer " + std::to_string(i) +
                                      " needs out_channels >= 1");
        }
        const int k = l.geometry.kernel;
        const double fan_in = static_cast<double>(channels) * k * k;
        const double scale = std::sqrt(6.0 / fan_in);
        p.weights.resize(static_cast<std::size_t>(l.out_channels) * channels * k * k);
        for (auto& w : p.weights) w = static_cast<float>((2.0 * rng.uniform() - 1.0) * scale);
        p.bias.assign(l.out_channels, 0.0f);
        channels = l.out_channels;
      } else if (l.out_channels != 0 && l.out_channels != channels) {
        throw std::invalid_argument("ToyNet: pool layer " + std::to_string(i) +
                                    " cannot change channel count");
      }
      p.out_channels = channels;
      params_.push_back(std::move(p));
    }
  }

  const ToyNetSpec& spec() const { return spec_; }
  int in_channels() const { return spec_.in_channels; }
  int out_channels() const { return params_.back().out_channels; }

  std::vector<LayerSpec> layer_geometry() const {
    std::vector<LayerSpec> out;
    for (const auto& l : spec_.layers) out.push_back(l.geometry);
    return out;
  }
  NetGeometry geometry() const { return compose_geometry(layer_geometry()); }

  // Conv weights of layer i, [out][in][ky][kx]; empty for pool layers.
  std::span<const float> weights(std::size_t i) const { return params_.at(i).weights; }
  std::span<const float> bias(std::size_t i) const { return params_.at(i).bias; }

  // Replaces the parameters of conv layer i; sizes must match.
  void set_conv_params(std::size_t i, std::vector<float> weights, std::vector<float> bias) {
    auto& p = params_.at(i);
    if (spec_.layers[i].geometry.kind != LayerKind::conv) {
      throw std::invalid_argument("ToyNet: layer " + std::to_string(i) + " is not a conv layer");
    }
    if (weights.size() != p.weights.size() || bias.size() != p.bias.size()) {
      throw std::invalid_argument("ToyNet: parameter size mismatch at layer " + std::to_string(i));
    }
    for (float v : weights)
      if (!std::isfinite(v)) throw std::invalid_argument("ToyNet: non-finite weight");
    p.weights = std::move(weights);
    p.bias = std::move(bias);
  }

  // Output (height, width) for an input of the given size; throws naming the
  // first layer whose output would be empty.
  std::pair<int, int> output_dims(int height, int width) const {
    long long h = height, w = width;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      h = layer_output_extent(spec_.layers[i].geometry, h);
      w = layer_output_extent(spec_.layers[i].geometry, w);
      if (h < 1 || w < 1) {
        throw std::invalid_argument("ToyNet: input " + std::to_string(height) + "x" +
                                    std::to_string(width) + " too small at layer " +
                                    std::to_string(i));
      }
    }
    return {static_cast<int>(h), static_cast<int>(w)};
  }

  // Parallel over output channels; each channel's sum order is fixed, so the
  // result does not depend on `threads`.
  FeatureMap forward(const FeatureMap& image, int threads = 1) const {
    if (image.channels() != spec_.in_channels) {
      throw DimensionMismatch("ToyNet: image has " + std::to_string(image.channels()) +
                              " channels, net expects " + std::to_string(spec_.in_channels));
    }
    output_dims(image.height(), image.width());
    std::vector<float> cur(image.values().begin(), image.values().end());
    int c = image.channels(), h = image.height(), w = image.width();
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& g = spec_.layers[i].geometry;
      const int oh = static_cast<int>(layer_output_extent(g, h));
      const int ow = static_cast<int>(layer_output_extent(g, w));
      const int oc = params_[i].out_channels;
      std::vector<float> next(static_cast<std::size_t>(oc) * oh * ow);
      if (g.kind == LayerKind::conv) {
        conv_layer(params_[i], g, cur, c, h, w, next, oh, ow, threads);
      } else {
        pool_layer(g, cur, c, h, w, next, oh, ow, threads);
      }
      cur = std::move(next);
      c = oc;
      h = oh;
      w = ow;
    }
    return FeatureMap(c, h, w, std::move(cur));
  }

 private:
  struct LayerParams {
    int in_channels = 0;
    int out_channels = 0;
    std::vector<float> weights;
    std::vector<float> bias;
  };

  // Output indices o in [lo, hi) read input o*s - p + k inside [0, n).
  static std::pair<int, int> valid_range(int n, int out_n, int s, int p, int k) {
    int lo = 0;
    while (lo < out_n && lo * s - p + k < 0) ++lo;
    int hi = out_n;
    while (hi > lo && (hi - 1) * s - p + k >= n) --hi;
    return {lo, hi};
  }

  static void conv_layer(const LayerParams& p, const LayerSpec& g, const std::vector<float>& in,
                         int c, int h, int w, std::vector<float>& out, int oh, int ow,
                         int threads) {
    const int k = g.kernel, s = g.stride, pad = g.pad;
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    parallel_for(static_cast<std::size_t>(p.out_channels), threads, [&](std::size_t o) {
      float* acc = out.data() + o * plane;
      std::fill(acc, acc + plane, p.bias[o]);
      for (int ic = 0; ic < c; ++ic) {
        const float* src = in.data() + static_cast<std::size_t>(ic) * h * w;
        for (int ky = 0; ky < k; ++ky) {
          const auto [oy0, oy1] = valid_range(h, oh, s, pad, ky);
          for (int kx = 0; kx < k; ++kx) {
            const float wt = p.weights[((o * c + ic) * k + ky) * k + kx];
            if (wt == 0.0f) continue;
            const auto [ox0, ox1] = valid_range(w, ow, s, pad, kx);
            for (int oy = oy0; oy < oy1; ++oy) {
              const float* srow = src + static_cast<std::size_t>(oy * s - pad + ky) * w;
              float* drow = acc + static_cast<std::size_t>(oy) * ow;
              for (int ox = ox0; ox < ox1; ++ox) drow[ox] += wt * srow[ox * s - pad + kx];
            }
          }
        }
      }
      for (std::size_t i = 0; i < plane; ++i) acc[i] = std::max(acc[i], 0.0f);
    });
  }

  static void pool_layer(const LayerSpec& g, const std::vector<float>& in, int c, int h, int w,
                         std::vector<float>& out, int oh, int ow, int threads) {
    parallel_for(static_cast<std::size_t>(c), threads, [&](std::size_t ch) {
      const float* src = in.data() + ch * h * w;
      float* dst = out.data() + ch * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          for (int ky = 0; ky < g.kernel; ++ky) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < g.kernel; ++kx) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= w) continue;
              best = std::max(best, src[iy * w + ix]);
            }
          }
          dst[oy * ow + ox] = std::isfinite(best) ? best : 0.0f;
        }
      }
    });
  }

  ToyNetSpec spec_;
  std::vector<LayerParams> params_;
};

// Nearest-neighbour resample: destination index d reads source
// floor((d + 0.5) * src / dst).
inline int nearest_source(int d, int src_len, int dst_len) {
  return static_cast<int>((static_cast<long long>(2 * d + 1) * src_len) / (2LL * dst_len));
}

inline FeatureMap resize_nearest(const FeatureMap& f, int height, int width) {
  if (height == f.height() && width == f.width()) return f;
  std::vector<float> out(static_cast<std::size_t>(f.channels()) * height * width);
  std::vector<int> xs(width);
  for (int x = 0; x < width; ++x) xs[x] = nearest_source(x, f.width(), width);
  std::size_t i = 0;
  for (int c = 0; c < f.channels(); ++c)
    for (int y = 0; y < height; ++y) {
      const int sy = nearest_source(y, f.height(), height);
      for (int x = 0; x < width; ++x) out[i++] = f.at(c, sy, xs[x]);
    }
  return FeatureMap(f.channels(), height, width, std::move(out));
}

inline BinaryMask resize_nearest(const BinaryMask& m, int width, int height) {
  if (width == m.width() && height == m.height()) return m;
  BinaryMask out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = nearest_source(y, m.height(), height);
    for (int x = 0; x < width; ++x) {
      if (m.test(nearest_source(x, m.width(), width), sy)) out.set(x, y);
    }
  }
  return out;
}

inline FeatureMap crop(const FeatureMap& f, const PixelBox& box) {
  if (!box.valid() || box.x1 >= f.width() || box.y1 >= f.height()) {
    throw std::invalid_argument("crop: box outside the image");
  }
  std::vector<float> out(static_cast<std::size_t>(f.channels()) * box.height() * box.width());
  std::size_t i = 0;
  for (int c = 0; c < f.channels(); ++c)
    for (int y = box.y0; y <= box.y1; ++y)
      for (int x = box.x0; x <= box.x1; ++x) out[i++] = f.at(c, y, x);
  return FeatureMap(f.channels(), box.height(), box.width(), std::move(out));
}

// Crop-and-warp baseline: one full forward pass per region.
inline FeatureMap forward_region(const ToyNet& net, const FeatureMap& image, const PixelBox& box,
                                 int warp_side, int threads = 1) {
  if (warp_side < 1) throw std::invalid_argument("forward_region: warp_side must be >= 1");
  return net.forward(resize_nearest(crop(image, box), warp_side, warp_side), threads);
}

}  // namespace cfm
