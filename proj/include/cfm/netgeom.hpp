#pragma once

// Receptive-field geometry of a conv/pool stack along one axis. Both axes
// share the same layer parameters, so one NetGeometry serves rows and columns.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfm/core_types.hpp"
#include "json.hpp"

namespace cfm {

enum class LayerKind { conv, pool };

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline void validate_layer(const LayerSpec& l) {
  if (l.kernel < 1 || l.stride < 1 || l.pad < 0) {
    throw std::invalid_argument("LayerSpec: need kernel >= 1, stride >= 1, pad >= 0");
  }
}

// Output length of one layer for input length n; < 1 means the input is too small.
inline long long layer_output_extent(const LayerSpec& l, long long n) {
  const long long span = n + 2LL * l.pad - l.kernel;
  if (span < 0) return 0;
  return span / l.stride + 1;
}

// center(u) = u * stride + center_offset, in image pixel coordinates.
struct NetGeometry {
  int stride = 1;
  int rf_size = 1;
  double center_offset = 0.0;

  double center(long long u) const { return static_cast<double>(u) * stride + center_offset; }

  friend bool operator==(const NetGeometry&, const NetGeometry&) = default;
};

// Closed form: S = prod s_i, RF = 1 + sum (k_i - 1) J_i,
// O = (RF - 1)/2 - sum p_i J_i, where J_i = prod_{j<i} s_j.
inline NetGeometry compose_geometry(std::span<const LayerSpec> layers) {
  if (layers.empty()) throw std::invalid_argument("compose_geometry: empty layer list");
  long long jump = 1;
  long long rf = 1;
  long long pad_sum = 0;
  for (const auto& l : layers) {
    validate_layer(l);
    rf += static_cast<long long>(l.kernel - 1) * jump;
    pad_sum += static_cast<long long>(l.pad) * jump;
    jump *= l.stride;
  }
  return {static_cast<int>(jump), static_cast<int>(rf), static_cast<double>(rf - 1) / 2.0 -
                                                            static_cast<double>(pad_sum)};
}

// Traces the input interval of top units 0 and 1 back through every layer and
// reads S, RF and O off the resulting intervals.
inline NetGeometry brute_force_geometry(std::span<const LayerSpec> layers) {
  if (layers.empty()) throw std::invalid_argument("brute_force_geometry: empty layer list");
  for (const auto& l : layers) validate_layer(l);
  auto trace = [&](long long u) {
    long long lo = u, hi = u;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
      lo = lo * it->stride - it->pad;
      hi = hi * it->stride - it->pad + it->kernel - 1;
    }
    return std::pair{lo, hi};
  };
  const auto [lo0, hi0] = trace(0);
  const auto [lo1, hi1] = trace(1);
  return {static_cast<int>(lo1 - lo0), static_cast<int>(hi0 - lo0 + 1),
          static_cast<double>(lo0 + hi0) / 2.0};
}

// Inclusive rectangle of feature-map cells.
struct CellBox {
  int u0 = 0;  // first column
  int v0 = 0;  // first row
  int u1 = 0;
  int v1 = 0;

  int width() const { return u1 - u0 + 1; }
  int height() const { return v1 - v0 + 1; }

  friend bool operator==(const CellBox&, const CellBox&) = default;
};

namespace detail {
inline std::pair<int, int> extent_1d(const NetGeometry& g, int p0, int p1, int cells) {
  const double lo = std::floor((p0 - g.center_offset) / g.stride);
  const double hi = std::ceil((p1 - g.center_offset) / g.stride);
  const auto clamp = [cells](double v) {
    return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(cells - 1)));
  };
  return {clamp(lo), clamp(hi)};
}
}  // namespace detail

// Smallest cell rectangle whose centers span the pixel box, clamped to the map.
inline CellBox feature_extent(const NetGeometry& g, const PixelBox& box, int fh, int fw) {
  if (fh < 1 || fw < 1) throw std::invalid_argument("feature_extent: empty feature map");
  const auto [u0, u1] = detail::extent_1d(g, box.x0, box.x1, fw);
  const auto [v0, v1] = detail::extent_1d(g, box.y0, box.y1, fh);
  return {u0, v0, u1, v1};
}

// ---- JSON ----------------------------------------------------------------

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec l;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "conv") {
    l.kind = LayerKind::conv;
  } else if (kind == "pool") {
    l.kind = LayerKind::pool;
  } else {
    throw std::invalid_argument("layer kind must be \"conv\" or \"pool\", got \"" + kind + "\"");
  }
  l.kernel = j.at("kernel").get<int>();
  l.stride = j.at("stride").get<int>();
  l.pad = j.value("pad", 0);
  validate_layer(l);
  return l;
}

inline nlohmann::json layer_to_json(const LayerSpec& l) {
  return {{"kind", l.kind == LayerKind::conv ? "conv" : "pool"},
          {"kernel", l.kernel},
          {"stride", l.stride},
          {"pad", l.pad}};
}

// Accepts either a bare layer array or an object with a "layers" array.
inline std::vector<LayerSpec> layers_from_json(const nlohmann::json& j) {
  const auto& arr = j.is_object() ? j.at("layers") : j;
  if (!arr.is_array()) throw std::invalid_argument("geometry config must be a JSON array");
  std::vector<LayerSpec> out;
  for (const auto& item : arr) out.push_back(layer_from_json(item));
  return out;
}

inline nlohmann::json geometry_to_json(const NetGeometry& g) {
  return {{"S", g.stride}, {"RF", g.rf_size}, {"O", g.center_offset}};
}

}  // namespace cfm
