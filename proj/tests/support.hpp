#pragma once

// Hand-rolled generators and small fixtures shared by the test binaries.

#include <filesystem>
#include <string>
#include <vector>

#include "cfm/core_types.hpp"
#include "cfm/netgeom.hpp"
#include "cfm/pursuit.hpp"
#include "cfm/random.hpp"

namespace cfm::testing {

inline std::vector<LayerSpec> random_layers(Rng& rng, int max_depth = 5, int max_k = 7,
                                            int max_s = 3, int max_p = 3) {
  std::vector<LayerSpec> out(rng.between(1, max_depth));
  for (auto& l : out) {
    l.kind = rng.uniform() < 0.7 ? LayerKind::conv : LayerKind::pool;
    l.kernel = rng.between(1, max_k);
    l.stride = rng.between(1, max_s);
    l.pad = rng.between(0, max_p);
  }
  return out;
}

// Same, but every pad <= (k - 1) / 2 so the receptive-field centre of cell 0
// stays inside the image.
inline std::vector<LayerSpec> random_sane_layers(Rng& rng, int max_depth = 4) {
  std::vector<LayerSpec> out(rng.between(1, max_depth));
  for (auto& l : out) {
    l.kind = LayerKind::conv;
    l.kernel = rng.between(1, 5);
    l.stride = rng.between(1, 3);
    l.pad = rng.between(0, (l.kernel - 1) / 2);
  }
  return out;
}

inline BinaryMask random_mask(Rng& rng, int w, int h, double density) {
  BinaryMask m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (rng.uniform() < density) m.set(x, y);
  return m;
}

// Union of a few random rectangles; never empty.
inline BinaryMask random_blob(Rng& rng, int w, int h, int pieces = 3) {
  BinaryMask m(w, h);
  for (int k = 0; k < pieces; ++k) {
    const int x0 = rng.between(0, w - 1), y0 = rng.between(0, h - 1);
    const int x1 = rng.between(x0, std::min(w - 1, x0 + w / 2));
    const int y1 = rng.between(y0, std::min(h - 1, y0 + h / 2));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) m.set(x, y);
  }
  return m;
}

inline BinaryMask rect(int w, int h, int x0, int y0, int x1, int y1) {
  return rectangle_mask(w, h, {x0, y0, x1, y1});
}

inline FeatureMap random_feature_map(Rng& rng, int c, int h, int w, double lo = 0.0,
                                     double hi = 1.0) {
  std::vector<float> v(static_cast<std::size_t>(c) * h * w);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return FeatureMap(c, h, w, std::move(v));
}

// Proposals named s00, s01, ... from masks.
inline std::vector<SegmentProposal> as_proposals(const std::vector<BinaryMask>& masks) {
  std::vector<SegmentProposal> out;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    std::string id = std::to_string(i);
    if (id.size() < 2) id = "0" + id;
    out.emplace_back("s" + id, masks[i]);
  }
  return out;
}

// Random candidate set: up to `max_n` rectangular segments over a stuff
// region that covers most of a small image. Returns the proposals; the
// caller builds candidates from them.
struct CandidateScene {
  BinaryMask stuff;
  std::vector<SegmentProposal> proposals;
};

inline CandidateScene random_candidate_scene(Rng& rng, int max_n, int w = 24, int h = 24) {
  CandidateScene s{BinaryMask(w, h), {}};
  const int cut = rng.between(h / 3, h - 1);
  for (int y = 0; y < cut; ++y)
    for (int x = 0; x < w; ++x) s.stuff.set(x, y);
  std::vector<BinaryMask> masks;
  const int n = rng.between(1, max_n);
  for (int i = 0; i < n; ++i) {
    const int x0 = rng.between(0, w - 2), y0 = rng.between(0, cut - 1);
    const int x1 = rng.between(x0, std::min(w - 1, x0 + rng.between(1, w)));
    const int y1 = rng.between(y0, std::min(cut - 1, y0 + rng.between(1, h)));
    masks.push_back(rect(w, h, x0, y0, x1, y1));
  }
  s.proposals = as_proposals(masks);
  return s;
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(std::hash<std::string>{}(tag) ^ reinterpret_cast<std::uintptr_t>(this));
    path_ = std::filesystem::temp_directory_path() /
            ("cfm_" + tag + "_" + std::to_string(rng.next_u64() % 1000000007ULL));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace cfm::testing
