#pragma once

// End-to-end inference: scale assignment, per-scale feature caching, region
// scoring, greedy pasting, dataset mean IoU, and the conv-once vs
// per-region timing comparison. Training orchestration lives here too since
// it reuses the same feature path.

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <tuple>
#include <string>
#include <vector>

#include "cfm/classify.hpp"
#include "cfm/core_types.hpp"
#include "cfm/formats.hpp"
#include "cfm/masking.hpp"
#include "cfm/netgeom.hpp"
#include "cfm/parallel.hpp"
#include "cfm/pursuit.hpp"
#include "cfm/random.hpp"
#include "cfm/spp.hpp"
#include "cfm/synth.hpp"
#include "cfm/toynet.hpp"
#include "json.hpp"

namespace cfm {

// Scale assignment aims a region at this warped area (pixels^2).
inline constexpr double kScaleTargetArea = 224.0 * 224.0;

struct PipelineConfig {
  std::vector<int> scales{480, 576, 688, 864, 1200};  // shorter-edge pixels, ascending
  double paste_inhibit_iou = 0.3;
  FeatureDesign design = FeatureDesign::design_b;
  PyramidSpec pyramid;

  void validate() const {
    if (scales.empty()) throw std::invalid_argument("PipelineConfig: no scales");
    if (!std::is_sorted(scales.begin(), scales.end()) || scales.front() < 1) {
      throw std::invalid_argument("PipelineConfig: scales must be positive and ascending");
    }
    if (!(paste_inhibit_iou > 0.0 && paste_inhibit_iou < 1.0)) {
      throw std::invalid_argument("PipelineConfig: paste_inhibit_iou must lie in (0, 1)");
    }
    pyramid.validate();
  }
};

// Scale whose resize brings the box area closest to 224^2; ties to the smaller scale.
inline int assign_scale(const PixelBox& box, int image_shorter_edge, const std::vector<int>& scales) {
  if (scales.empty()) throw std::invalid_argument("assign_scale: empty scale list");
  if (!box.valid()) throw std::invalid_argument("assign_scale: degenerate box");
  if (image_shorter_edge < 1) throw std::invalid_argument("assign_scale: bad image size");
  int best = scales.front();
  double best_gap = INFINITY;
  std::vector<int> sorted = scales;
  std::sort(sorted.begin(), sorted.end());
  for (int s : sorted) {
    const double f = static_cast<double>(s) / image_shorter_edge;
    const double gap = std::abs(static_cast<double>(box.area()) * f * f - kScaleTargetArea);
    if (gap < best_gap) {
      best_gap = gap;
      best = s;
    }
  }
  return best;
}

// (height, width) of the image resized so its shorter edge equals `scale`.
inline std::pair<int, int> scaled_dims(int height, int width, int scale) {
  const int shorter = std::min(height, width);
  if (shorter == scale) return {height, width};
  auto resize = [&](int n) {
    return std::max(1, static_cast<int>(std::lround(static_cast<double>(n) * scale / shorter)));
  };
  return {resize(height), resize(width)};
}

// Proposal mask carried to a resized image. A mask that vanishes under
// nearest-neighbour sampling keeps the pixel under its box centre.
inline SegmentProposal rescale_proposal(const SegmentProposal& p, int width, int height) {
  auto mask = resize_nearest(p.mask(), width, height);
  if (mask.count() == 0) {
    const double cx = (p.box().x0 + p.box().x1 + 1) * 0.5 * width / p.mask().width();
    const double cy = (p.box().y0 + p.box().y1 + 1) * 0.5 * height / p.mask().height();
    mask.set(std::clamp(static_cast<int>(cx), 0, width - 1),
             std::clamp(static_cast<int>(cy), 0, height - 1));
  }
  return SegmentProposal(p.id(), std::move(mask));
}

// Convolutional features of one image, computed at most once per scale.
// Safe for concurrent use: each scale is initialised under std::call_once.
class ScaleFeatureCache {
 public:
  ScaleFeatureCache(const FeatureMap& image, const ToyNet& net, const PipelineConfig& cfg,
                    int threads = 1)
      : image_(image), net_(net), cfg_(cfg), threads_(threads), geometry_(net.geometry()) {
    cfg_.validate();
    for (int s : cfg_.scales) slots_.emplace(s, std::make_unique<Slot>());
  }

  int shorter_edge() const { return std::min(image_.height(), image_.width()); }
  int scale_for(const SegmentProposal& p) const {
    return assign_scale(p.box(), shorter_edge(), cfg_.scales);
  }

  // Classifier input for one proposal.
  std::vector<float> features(const SegmentProposal& p) const {
    const int s = scale_for(p);
    const Slot& slot = ensure(s);
    if (slot.height == image_.height() && slot.width == image_.width()) {
      return slot.extractor->extract(p, cfg_.design);
    }
    return slot.extractor->extract(rescale_proposal(p, slot.width, slot.height), cfg_.design);
  }

  const FeatureMap& conv(int scale) const { return ensure(scale).conv; }

  // Number of forward passes run so far.
  int forward_count() const { return forwards_.load(); }

 private:
  struct Slot {
    std::once_flag once;
    int height = 0, width = 0;
    FeatureMap conv;
    std::unique_ptr<RegionFeatureExtractor> extractor;
  };

  const Slot& ensure(int scale) const {
    auto it = slots_.find(scale);
    if (it == slots_.end()) throw std::invalid_argument("ScaleFeatureCache: unknown scale");
    Slot& slot = *it->second;
    std::call_once(slot.once, [&] {
      std::tie(slot.height, slot.width) = scaled_dims(image_.height(), image_.width(), scale);
      const bool native = slot.height == image_.height() && slot.width == image_.width();
      slot.conv = net_.forward(native ? image_ : resize_nearest(image_, slot.height, slot.width),
                               threads_);
      ++forwards_;
      slot.extractor = std::make_unique<RegionFeatureExtractor>(
          slot.conv, geometry_, slot.width, slot.height, cfg_.pyramid);
    });
    return slot;
  }

  const FeatureMap& image_;
  const ToyNet& net_;
  PipelineConfig cfg_;
  int threads_;
  NetGeometry geometry_;
  std::map<int, std::unique_ptr<Slot>> slots_;
  mutable std::atomic<int> forwards_{0};
};

struct ScoredRegion {
  const SegmentProposal* proposal = nullptr;
  int category = 0;
  double score = 0.0;
};

// Trained per-category classifiers plus the feature recipe they expect.
struct ModelBundle {
  FeatureDesign design = FeatureDesign::design_b;
  PyramidSpec pyramid;
  std::vector<int> scales;
  double feature_scale = 1.0;  // multiplies every feature before scoring
  int num_categories = 1;      // including background
  std::vector<LinearModel> models;
};

inline void scale_features(std::vector<float>& f, double s) {
  if (s == 1.0) return;
  for (auto& v : f) v = static_cast<float>(v * s);
}

// Scores every proposal against every model. Proposals run in parallel;
// each writes only its own slots.
inline std::vector<ScoredRegion> score_proposals(const std::vector<LinearModel>& models,
                                                 const std::vector<SegmentProposal>& proposals,
                                                 const FeatureMap& image, const ToyNet& net,
                                                 const PipelineConfig& cfg,
                                                 double feature_scale = 1.0, int threads = 1,
                                                 int* forward_count = nullptr) {
  ScaleFeatureCache cache(image, net, cfg, threads);
  const std::size_t expected = feature_length(cfg.design, net.out_channels(), cfg.pyramid);
  for (const auto& m : models) {
    if (m.weights.size() != expected) {
      throw std::invalid_argument("score_proposals: model length " +
                                  std::to_string(m.weights.size()) + " != feature length " +
                                  std::to_string(expected));
    }
  }
  std::vector<ScoredRegion> out(proposals.size() * models.size());
  parallel_for(proposals.size(), threads, [&](std::size_t i) {
    auto f = cache.features(proposals[i]);
    scale_features(f, feature_scale);
    for (std::size_t k = 0; k < models.size(); ++k) {
      out[i * models.size() + k] = {&proposals[i], models[k].category, score(models[k], f)};
    }
  });
  if (forward_count) *forward_count = cache.forward_count();
  return out;
}

// Greedy pasting: highest score first (ties: smaller id, then smaller
// category); each taken region suppresses later ones overlapping it by
// IoU > paste_inhibit_iou and labels the pixels still unlabeled. Scores <= 0
// are never pasted.
inline LabelMap paste(const std::vector<ScoredRegion>& scored, int width, int height,
                      const PipelineConfig& cfg) {
  if (!(cfg.paste_inhibit_iou > 0.0 && cfg.paste_inhibit_iou < 1.0)) {
    throw std::invalid_argument("paste: paste_inhibit_iou must lie in (0, 1)");
  }
  for (const auto& r : scored) {
    if (r.proposal->mask().width() != width || r.proposal->mask().height() != height) {
      throw DimensionMismatch("paste: region '" + r.proposal->id() + "' has mismatched dims");
    }
    if (!std::isfinite(r.score)) throw std::invalid_argument("paste: non-finite score");
  }
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = scored[a];
    const auto& rb = scored[b];
    if (ra.score != rb.score) return ra.score > rb.score;
    if (ra.proposal->id() != rb.proposal->id()) return ra.proposal->id() < rb.proposal->id();
    return ra.category < rb.category;
  });
  LabelMap out(width, height);
  std::vector<std::uint8_t> written(static_cast<std::size_t>(width) * height, 0);
  std::vector<std::uint8_t> suppressed(order.size(), 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& r = scored[order[k]];
    if (r.score <= 0.0) break;
    if (suppressed[k]) continue;
    for (std::size_t j = k + 1; j < order.size(); ++j) {
      if (!suppressed[j] &&
          segment_iou(*r.proposal, *scored[order[j]].proposal) > cfg.paste_inhibit_iou) {
        suppressed[j] = 1;
      }
    }
    const auto& b = r.proposal->box();
    for (int y = b.y0; y <= b.y1; ++y) {
      const auto row = r.proposal->mask().row(y);
      for (int x = b.x0; x <= b.x1; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * width + x;
        if (row[x] && !written[i]) {
          written[i] = 1;
          out.set(x, y, static_cast<std::uint16_t>(r.category));
        }
      }
    }
  }
  return out;
}

struct IouReport {
  std::vector<std::optional<double>> per_category;  // nullopt: absent from pred and gt
  std::vector<long long> intersection, union_;
  double mean = 0.0;
};

// Dataset-global IoU per category, averaged over categories that occur.
inline IouReport mean_iou(const std::vector<LabelMap>& pred, const std::vector<LabelMap>& gt,
                          int num_categories) {
  if (pred.size() != gt.size()) throw DimensionMismatch("mean_iou: list lengths differ");
  if (num_categories < 1) throw std::invalid_argument("mean_iou: need >= 1 category");
  IouReport r;
  r.intersection.assign(num_categories, 0);
  r.union_.assign(num_categories, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].width() != gt[i].width() || pred[i].height() != gt[i].height()) {
      throw DimensionMismatch("mean_iou: image " + std::to_string(i) + " dims differ");
    }
    pred[i].check_categories(num_categories);
    gt[i].check_categories(num_categories);
    const auto p = pred[i].labels();
    const auto g = gt[i].labels();
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (p[k] == g[k]) {
        ++r.intersection[p[k]];
        ++r.union_[p[k]];
      } else {
        ++r.union_[p[k]];
        ++r.union_[g[k]];
      }
    }
  }
  r.per_category.assign(num_categories, std::nullopt);
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_categories; ++c) {
    if (r.union_[c] == 0) continue;
    const double iou = static_cast<double>(r.intersection[c]) / static_cast<double>(r.union_[c]);
    r.per_category[c] = iou;
    sum += iou;
    ++present;
  }
  r.mean = present ? sum / present : 0.0;
  return r;
}

inline nlohmann::json iou_report_to_json(const IouReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& v : r.per_category) per.push_back(v ? nlohmann::json(*v) : nlohmann::json());
  return {{"per_category", per}, {"mean", r.mean}};
}

// ---- training --------------------------------------------------------------

struct SceneData {
  FeatureMap image;
  LabelMap gt;
  std::vector<GroundTruthSegment> segments;
  std::vector<SegmentProposal> proposals;
};

inline SceneData make_scene_data(const Scene& scene, const ProposalParams& params,
                                 std::uint64_t seed) {
  return {scene.image, scene.gt, scene.segments,
          toy_proposals(scene.image.width(), scene.image.height(), scene.segments, params, seed)};
}

struct TrainOptions {
  SceneCategories categories;
  SvmOptions svm;
  PursuitConfig pursuit;
  int negatives_per_scene = 40;  // random proposals per scene offered as negatives
  std::uint64_t seed = 0;
};

// Object categories: ground-truth segments are the positives; proposals whose
// best IoU with that category is below 0.3 are negatives.
// Stuff categories: the deterministic segment-pursuit selection is positive;
// proposals with purity below purity_neg are negatives.
inline ModelBundle train_models(const std::vector<SceneData>& scenes, const ToyNet& net,
                                const PipelineConfig& cfg, const TrainOptions& opt,
                                int threads = 1) {
  cfg.validate();
  const int num_cat = opt.categories.total();

  struct SceneSamples {
    std::vector<std::vector<float>> features;
    std::vector<std::vector<int>> pos, neg;  // per category: indices into features
  };
  std::vector<SceneSamples> per_scene(scenes.size());

  parallel_for(scenes.size(), threads, [&](std::size_t si) {
    const auto& sc = scenes[si];
    auto& out = per_scene[si];
    out.pos.assign(num_cat, {});
    out.neg.assign(num_cat, {});
    ScaleFeatureCache cache(sc.image, net, cfg, 1);
    std::map<const SegmentProposal*, int> slot;
    auto feature_index = [&](const SegmentProposal& p) {
      auto [it, inserted] = slot.emplace(&p, static_cast<int>(out.features.size()));
      if (inserted) out.features.push_back(cache.features(p));
      return it->second;
    };

    std::vector<SegmentProposal> gt_props;
    for (std::size_t k = 0; k < sc.segments.size(); ++k) {
      gt_props.emplace_back("gt" + std::to_string(k), sc.segments[k].mask);
    }
    Rng rng(mix_seed(opt.seed, si));
    std::vector<std::size_t> pool(sc.proposals.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(pool));
    pool.resize(std::min<std::size_t>(pool.size(), opt.negatives_per_scene));

    for (int c = 1; c < num_cat; ++c) {
      if (opt.categories.is_stuff(c)) {
        const auto stuff = mask_of_label(sc.gt, static_cast<std::uint16_t>(c));
        if (stuff.count() > 0) {
          const auto cands = candidate_set(sc.proposals, stuff, opt.pursuit);
          for (const auto& cand : deterministic_pursuit(cands, opt.pursuit)) {
            out.pos[c].push_back(feature_index(*cand.proposal));
          }
        }
        for (auto i : pool) {
          if (purity(sc.proposals[i], stuff) < opt.pursuit.purity_neg) {
            out.neg[c].push_back(feature_index(sc.proposals[i]));
          }
        }
      } else {
        for (std::size_t k = 0; k < sc.segments.size(); ++k) {
          if (sc.segments[k].category == c) out.pos[c].push_back(feature_index(gt_props[k]));
        }
        for (auto i : pool) {
          double best = 0.0;
          for (const auto& g : sc.segments) {
            if (g.category == c) best = std::max(best, mask_iou(sc.proposals[i].mask(), g.mask));
          }
          if (best < 0.3) out.neg[c].push_back(feature_index(sc.proposals[i]));
        }
      }
    }
  });

  // Global scale: mean L2 norm of all training features maps to 1.
  double norm_sum = 0.0;
  std::size_t norm_count = 0;
  for (const auto& s : per_scene)
    for (const auto& f : s.features) {
      double n2 = 0.0;
      for (float v : f) n2 += static_cast<double>(v) * v;
      norm_sum += std::sqrt(n2);
      ++norm_count;
    }
  ModelBundle bundle;
  bundle.design = cfg.design;
  bundle.pyramid = cfg.pyramid;
  bundle.scales = cfg.scales;
  bundle.num_categories = num_cat;
  bundle.feature_scale = norm_count && norm_sum > 0 ? norm_count / norm_sum : 1.0;
  for (auto& s : per_scene)
    for (auto& f : s.features) scale_features(f, bundle.feature_scale);

  bundle.models.resize(num_cat - 1);
  parallel_for(static_cast<std::size_t>(num_cat - 1), threads, [&](std::size_t k) {
    const int c = static_cast<int>(k) + 1;
    std::vector<std::vector<float>> pos, neg;
    for (const auto& s : per_scene) {
      for (int i : s.pos[c]) pos.push_back(s.features[i]);
      for (int i : s.neg[c]) neg.push_back(s.features[i]);
    }
    if (pos.empty() || neg.empty()) {
      LinearModel m;
      m.category = c;
      m.weights.assign(feature_length(cfg.design, net.out_channels(), cfg.pyramid), 0.0f);
      m.bias = -1.0f;  // never pasted
      bundle.models[k] = std::move(m);
      return;
    }
    SvmOptions svm = opt.svm;
    svm.seed = mix_seed(opt.svm.seed, static_cast<std::uint64_t>(c));
    bundle.models[k] = train_svm(pos, neg, svm, c).model;
  });
  return bundle;
}

inline LabelMap infer_labels(const ModelBundle& bundle, const SceneData& scene, const ToyNet& net,
                             const PipelineConfig& cfg, int threads = 1) {
  const auto scored = score_proposals(bundle.models, scene.proposals, scene.image, net, cfg,
                                      bundle.feature_scale, threads);
  return paste(scored, scene.image.width(), scene.image.height(), cfg);
}

// Manifest: design, pyramid, scales, feature_scale, the net layout, and one
// entry per model whose weights sit in a 1x1xL CFMT file beside it.
inline void save_bundle(const std::filesystem::path& dir, const ModelBundle& b,
                        const ToyNetSpec& net) {
  std::filesystem::create_directories(dir);
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : b.models) {
    const std::string file = "weights_" + std::to_string(m.category) + ".cfmt";
    save_feature_map(dir / file,
                     FeatureMap(1, 1, static_cast<int>(m.weights.size()), m.weights));
    models.push_back({{"category", m.category}, {"bias", m.bias}, {"weights", file}});
  }
  nlohmann::json j{{"design", to_string(b.design)},
                   {"pyramid", b.pyramid.levels},
                   {"scales", b.scales},
                   {"feature_scale", b.feature_scale},
                   {"num_categories", b.num_categories},
                   {"net", toynet_spec_to_json(net)},
                   {"models", models}};
  write_text(dir / "model.json", j.dump(2) + "\n");
}

inline std::pair<ModelBundle, ToyNetSpec> load_bundle(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(dir / "model.json"));
    ModelBundle b;
    b.design = design_from_string(j.at("design").get<std::string>());
    b.pyramid.levels = j.at("pyramid").get<std::vector<int>>();
    b.pyramid.validate();
    b.scales = j.at("scales").get<std::vector<int>>();
    b.feature_scale = j.at("feature_scale").get<double>();
    b.num_categories = j.at("num_categories").get<int>();
    for (const auto& e : j.at("models")) {
      LinearModel m;
      m.category = e.at("category").get<int>();
      m.bias = e.at("bias").get<float>();
      const auto w = load_feature_map(dir / e.at("weights").get<std::string>());
      m.weights.assign(w.values().begin(), w.values().end());
      b.models.push_back(std::move(m));
    }
    return {std::move(b), toynet_spec_from_json(j.at("net"))};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model bundle: ") + e.what());
  }
}

// ---- benchmark -------------------------------------------------------------

struct BenchmarkResult {
  std::size_t proposals = 0;
  int threads = 1;
  double conv_once_ms = 0;
  double masking_ms = 0;
  double per_region_ms = 0;
  double ratio = 0;  // per_region_ms / (conv_once_ms + masking_ms)
  bool deterministic = true;
  std::uint64_t digest = 0;  // hash of the conv-once features
};

inline nlohmann::json benchmark_to_json(const BenchmarkResult& r) {
  return {{"proposals", r.proposals},       {"conv_once_ms", r.conv_once_ms},
          {"masking_ms", r.masking_ms},     {"per_region_ms", r.per_region_ms},
          {"ratio", r.ratio},               {"threads", r.threads},
          {"deterministic", r.deterministic}};
}

struct BenchmarkOptions {
  int warp_side = 224;
  int repeats = 3;  // timings are medians over repeats
  int threads = 1;
  FeatureDesign design = FeatureDesign::design_b;
  PyramidSpec pyramid;
};

namespace detail {
inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
inline std::uint64_t hash_features(const std::vector<std::vector<float>>& feats) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& f : feats)
    for (float v : f) h = (h ^ std::bit_cast<std::uint32_t>(v)) * 1099511628211ULL;
  return h;
}
}  // namespace detail

// Times (a) one forward pass plus per-proposal masking and pooling against
// (b) a crop-warp-forward-pool pass per proposal. Uses the first `count`
// proposals, cycling when fewer are supplied. Proposal generation and I/O are
// outside the timed sections.
inline BenchmarkResult benchmark(const FeatureMap& image,
                                 const std::vector<SegmentProposal>& proposals,
                                 const ToyNet& net, std::size_t count,
                                 const BenchmarkOptions& opt) {
  if (proposals.empty() || count == 0) throw std::invalid_argument("benchmark: need >= 1 proposal");
  using clock = std::chrono::steady_clock;
  auto ms = [](clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };
  const auto g = net.geometry();
  std::vector<double> conv_t, mask_t, region_t;
  BenchmarkResult r;
  r.proposals = count;
  r.threads = opt.threads;
  for (int rep = 0; rep < std::max(1, opt.repeats); ++rep) {
    const auto t0 = clock::now();
    const auto conv = net.forward(image, opt.threads);
    const auto t1 = clock::now();
    std::vector<std::vector<float>> feats(count);
    {
      RegionFeatureExtractor ex(conv, g, image.width(), image.height(), opt.pyramid);
      parallel_for(count, opt.threads, [&](std::size_t i) {
        feats[i] = ex.extract(proposals[i % proposals.size()], opt.design);
      });
    }
    const auto t2 = clock::now();
    std::vector<std::vector<float>> region_feats(count);
    parallel_for(count, opt.threads, [&](std::size_t i) {
      const auto out =
          forward_region(net, image, proposals[i % proposals.size()].box(), opt.warp_side, 1);
      region_feats[i] =
          spp_pool(out, {0, 0, out.width() - 1, out.height() - 1}, opt.pyramid).values;
    });
    const auto t3 = clock::now();
    conv_t.push_back(ms(t1 - t0));
    mask_t.push_back(ms(t2 - t1));
    region_t.push_back(ms(t3 - t2));
    const auto h = detail::hash_features(feats);
    if (rep == 0) r.digest = h;
    else if (h != r.digest) r.deterministic = false;
  }
  r.conv_once_ms = detail::median(conv_t);
  r.masking_ms = detail::median(mask_t);
  r.per_region_ms = detail::median(region_t);
  r.ratio = r.per_region_ms / std::max(1e-9, r.conv_once_ms + r.masking_ms);
  return r;
}

}  // namespace cfm
