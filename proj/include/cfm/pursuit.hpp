#pragma once

// Training-sample selection: segment labeling for objects, and segment
// pursuit for stuff (compact, low-overlap combinations of large, pure
// segments).

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfm/core_types.hpp"
#include "cfm/random.hpp"

namespace cfm {

struct PursuitConfig {
  double purity_pos = 0.6;   // candidates need purity > this
  double purity_neg = 0.3;   // negatives need purity < this
  double inhibit_iou = 0.2;  // a pick removes candidates with IoU > this

  void validate() const {
    if (!(0.0 <= purity_neg && purity_neg < purity_pos && purity_pos <= 1.0)) {
      throw std::invalid_argument("PursuitConfig: need 0 <= purity_neg < purity_pos <= 1");
    }
    if (!(inhibit_iou > 0.0 && inhibit_iou < 1.0)) {
      throw std::invalid_argument("PursuitConfig: inhibit_iou must lie in (0, 1)");
    }
  }
};

struct Candidate {
  const SegmentProposal* proposal = nullptr;
  long long area = 0;
  double purity = 0.0;

  const std::string& id() const { return proposal->id(); }
};

// IoU of the segment with the stuff pixels inside the segment's box.
inline double purity(const SegmentProposal& seg, const BinaryMask& stuff) {
  require_same_shape(seg.mask(), stuff, "purity");
  const auto& b = seg.box();
  long long inter = 0, clipped = 0;
  for (int y = b.y0; y <= b.y1; ++y) {
    const auto rs = seg.mask().row(y);
    const auto rt = stuff.row(y);
    for (int x = b.x0; x <= b.x1; ++x) {
      inter += rs[x] & rt[x];
      clipped += rt[x];
    }
  }
  const long long uni = seg.area() + clipped - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Proposals with purity > cfg.purity_pos, in input order.
inline std::vector<Candidate> candidate_set(const std::vector<SegmentProposal>& proposals,
                                            const BinaryMask& stuff, const PursuitConfig& cfg) {
  std::vector<Candidate> out;
  for (const auto& p : proposals) {
    const double pur = purity(p, stuff);
    if (pur > cfg.purity_pos) out.push_back({&p, p.area(), pur});
  }
  return out;
}

namespace detail {

inline double mean_area(const std::vector<Candidate>& cands) {
  double sum = 0;
  for (const auto& c : cands) sum += static_cast<double>(c.area);
  return sum / static_cast<double>(cands.size());
}

// The shared loop. `pick` chooses among the eligible remaining candidates,
// which are presented in (id ascending) order.
template <typename Pick>
std::vector<Candidate> pursue(const std::vector<Candidate>& cands, const PursuitConfig& cfg,
                              Pick&& pick) {
  cfg.validate();
  if (cands.empty()) return {};
  const double threshold = mean_area(cands);
  std::vector<Candidate> remaining = cands;
  std::sort(remaining.begin(), remaining.end(),
            [](const Candidate& a, const Candidate& b) { return a.id() < b.id(); });
  std::vector<Candidate> selected;
  std::vector<std::size_t> eligible;
  for (;;) {
    eligible.clear();
    for (std::size_t i = 0; i < remaining.size(); ++i) {
      if (static_cast<double>(remaining[i].area) >= threshold) eligible.push_back(i);
    }
    if (eligible.empty()) break;
    const Candidate chosen = remaining[pick(remaining, eligible)];
    selected.push_back(chosen);
    std::erase_if(remaining, [&](const Candidate& c) {
      return c.proposal == chosen.proposal ||
             segment_iou(*c.proposal, *chosen.proposal) > cfg.inhibit_iou;
    });
  }
  return selected;
}

}  // namespace detail

// Repeatedly take the largest remaining candidate (ties to the smaller id)
// while some remaining candidate reaches the initial mean area; each pick
// removes every candidate overlapping it by IoU > inhibit_iou.
inline std::vector<Candidate> deterministic_pursuit(const std::vector<Candidate>& cands,
                                                    const PursuitConfig& cfg) {
  return detail::pursue(cands, cfg,
                        [](const std::vector<Candidate>& rem, const std::vector<std::size_t>& el) {
                          std::size_t best = el.front();
                          for (auto i : el)
                            if (rem[i].area > rem[best].area) best = i;
                          return best;
                        });
}

// Index into `eligible` drawn with probability proportional to area.
inline std::size_t area_proportional_pick(const std::vector<Candidate>& rem,
                                          const std::vector<std::size_t>& eligible, Rng& rng) {
  double total = 0;
  for (auto i : eligible) total += static_cast<double>(rem[i].area);
  const double target = rng.uniform() * total;
  double acc = 0;
  for (std::size_t k = 0; k < eligible.size(); ++k) {
    acc += static_cast<double>(rem[eligible[k]].area);
    if (target < acc) return k;
  }
  return eligible.size() - 1;
}

// As deterministic_pursuit, but each pick is drawn with probability
// proportional to area among the eligible candidates.
inline std::vector<Candidate> stochastic_pursuit(const std::vector<Candidate>& cands,
                                                 const PursuitConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return detail::pursue(
      cands, cfg, [&rng](const std::vector<Candidate>& rem, const std::vector<std::size_t>& el) {
        return el[area_proportional_pick(rem, el, rng)];
      });
}

// Seed for the stochastic combination of one image in one epoch.
inline std::uint64_t epoch_seed(std::uint64_t master, std::uint64_t image_index,
                                std::uint64_t epoch) {
  return mix_seed(mix_seed(master, image_index), epoch);
}

enum class SampleLabel { positive, negative, excluded };

// Closed bands: [0.5, 1] positive, [0.1, 0.3] negative, otherwise excluded.
inline SampleLabel label_for_iou(double iou) {
  if (iou >= 0.5 && iou <= 1.0) return SampleLabel::positive;
  if (iou >= 0.1 && iou <= 0.3) return SampleLabel::negative;
  return SampleLabel::excluded;
}

struct LabeledSample {
  const SegmentProposal* proposal = nullptr;
  SampleLabel label = SampleLabel::excluded;
  double max_iou = 0.0;
};

struct GroundTruthSegment {
  BinaryMask mask;
  int category = 0;
};

// Per proposal: max segment IoU against the category's ground-truth segments.
inline std::vector<LabeledSample> label_object_samples(
    const std::vector<SegmentProposal>& proposals, const std::vector<GroundTruthSegment>& gt,
    int category) {
  std::vector<LabeledSample> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) {
    double best = 0.0;
    for (const auto& g : gt) {
      if (g.category == category) best = std::max(best, mask_iou(p.mask(), g.mask));
    }
    out.push_back({&p, label_for_iou(best), best});
  }
  return out;
}

enum class PursuitMode { deterministic, stochastic };

struct StuffSamples {
  std::vector<Candidate> positives;
  std::vector<const SegmentProposal*> negatives;
};

// Positives: the pursuit selection. Negatives: purity < cfg.purity_neg.
inline StuffSamples stuff_samples(const std::vector<SegmentProposal>& proposals,
                                  const BinaryMask& stuff, const PursuitConfig& cfg,
                                  PursuitMode mode, std::uint64_t seed) {
  cfg.validate();
  StuffSamples out;
  const auto cands = candidate_set(proposals, stuff, cfg);
  out.positives = mode == PursuitMode::deterministic ? deterministic_pursuit(cands, cfg)
                                                     : stochastic_pursuit(cands, cfg, seed);
  for (const auto& p : proposals) {
    if (purity(p, stuff) < cfg.purity_neg) out.negatives.push_back(&p);
  }
  return out;
}

enum class SampleSource { object, stuff, background };

struct BatchEntry {
  SampleSource source;
  std::size_t index;  // into the matching pool

  friend bool operator==(const BatchEntry&, const BatchEntry&) = default;
};

struct BatchCounts {
  std::size_t object = 0, stuff = 0, background = 0;
};

// floor(0.3 B) objects, floor(0.3 B) stuff, remainder background.
inline BatchCounts minibatch_counts(std::size_t batch_size) {
  const std::size_t part = (3 * batch_size) / 10;
  return {part, part, batch_size - 2 * part};
}

// Draws pool indices without replacement (a pool smaller than its share is
// exhausted, reshuffled and drawn again), then permutes the whole batch.
inline std::vector<BatchEntry> compose_minibatch(std::size_t object_pool, std::size_t stuff_pool,
                                                 std::size_t background_pool,
                                                 std::size_t batch_size, std::uint64_t seed) {
  const auto counts = minibatch_counts(batch_size);
  Rng rng(seed);
  std::vector<BatchEntry> batch;
  batch.reserve(batch_size);
  auto draw = [&](SampleSource src, std::size_t pool, std::size_t count, const char* name) {
    if (count == 0) return;
    if (pool == 0) {
      throw std::invalid_argument(std::string("compose_minibatch: empty ") + name + " pool");
    }
    std::vector<std::size_t> order(pool);
    std::size_t next = pool;
    for (std::size_t k = 0; k < count; ++k) {
      if (next == pool) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(order));
        next = 0;
      }
      batch.push_back({src, order[next++]});
    }
  };
  draw(SampleSource::object, object_pool, counts.object, "object");
  draw(SampleSource::stuff, stuff_pool, counts.stuff, "stuff");
  draw(SampleSource::background, background_pool, counts.background, "background");
  rng.shuffle(std::span<BatchEntry>(batch));
  return batch;
}

}  // namespace cfm
