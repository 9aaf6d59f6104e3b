#pragma once

// One-vs-rest linear max-margin classifier trained by stochastic
// subgradient descent on the primal (Pegasos step 1/(reg t)).

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfm/random.hpp"
#include "json.hpp"

namespace cfm {

struct LinearModel {
  std::vector<float> weights;
  float bias = 0.0f;
  int category = 0;
};

struct SvmOptions {
  double reg = 1e-4;
  int epochs = 20;
  std::uint64_t seed = 0;
};

struct TrainResult {
  LinearModel model;
  std::vector<double> objective_trace;  // [0] = zero model, then one per epoch
  int best_epoch = 0;
};

inline double score(const LinearModel& m, std::span<const float> f) {
  if (f.size() != m.weights.size()) {
    throw std::invalid_argument("score: feature length " + std::to_string(f.size()) +
                                " != model length " + std::to_string(m.weights.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += static_cast<double>(m.weights[i]) * f[i];
  return s + m.bias;
}

struct LabeledFeature {
  std::span<const float> features;
  int label;  // +1 or -1
};

// (reg/2) |w|^2 + mean hinge.
inline double hinge_objective(const LinearModel& m, std::span<const LabeledFeature> samples,
                              double reg) {
  double norm2 = 0.0;
  for (float w : m.weights) norm2 += static_cast<double>(w) * w;
  double loss = 0.0;
  for (const auto& s : samples) loss += std::max(0.0, 1.0 - s.label * score(m, s.features));
  return 0.5 * reg * norm2 + (samples.empty() ? 0.0 : loss / static_cast<double>(samples.size()));
}

namespace detail {
inline void check_features(const std::vector<std::vector<float>>& set, std::size_t dim,
                           const char* name) {
  for (const auto& f : set) {
    if (f.size() != dim) throw std::invalid_argument(std::string("train_svm: ") + name +
                                                     " feature length mismatch");
    for (float v : f)
      if (!std::isfinite(v)) {
        throw std::invalid_argument(std::string("train_svm: non-finite value in ") + name);
      }
  }
}
}  // namespace detail

// Starts from the zero model; visits samples in a seeded permutation each
// epoch. The bias is learned as the weight of a constant unit feature inside
// the update, and excluded from the regulariser when reporting the objective.
// Returns the epoch-end iterate (or the zero start) with the lowest objective.
inline TrainResult train_svm(const std::vector<std::vector<float>>& positives,
                             const std::vector<std::vector<float>>& negatives,
                             const SvmOptions& opt, int category = 0) {
  if (positives.empty() || negatives.empty()) {
    throw std::invalid_argument("train_svm: both classes need at least one sample");
  }
  if (!(opt.reg > 0.0) || opt.epochs < 1) {
    throw std::invalid_argument("train_svm: reg must be > 0 and epochs >= 1");
  }
  const std::size_t dim = positives.front().size();
  detail::check_features(positives, dim, "positives");
  detail::check_features(negatives, dim, "negatives");

  std::vector<LabeledFeature> samples;
  samples.reserve(positives.size() + negatives.size());
  for (const auto& f : positives) samples.push_back({f, +1});
  for (const auto& f : negatives) samples.push_back({f, -1});

  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  double scale = 1.0;  // w_true = scale * w, keeps the shrink step O(1)
  long long t = 0;

  auto snapshot = [&] {
    LinearModel m;
    m.category = category;
    m.weights.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) m.weights[i] = static_cast<float>(scale * w[i]);
    m.bias = static_cast<float>(b);
    return m;
  };

  TrainResult result;
  result.model = snapshot();
  result.objective_trace.push_back(hinge_objective(result.model, samples, opt.reg));
  double best = result.objective_trace.front();

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(opt.seed);
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (auto idx : order) {
      ++t;
      const auto& s = samples[idx];
      const double eta = 1.0 / (opt.reg * static_cast<double>(t));
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += w[i] * s.features[i];
      const double margin = s.label * (scale * dot + b);
      const double shrink = 1.0 - eta * opt.reg;
      if (shrink <= 0.0) {
        std::fill(w.begin(), w.end(), 0.0);
        scale = 1.0;
        b = 0.0;
      } else {
        scale *= shrink;
        b *= shrink;
      }
      if (margin < 1.0) {
        const double step = eta * s.label / scale;
        for (std::size_t i = 0; i < dim; ++i) w[i] += step * s.features[i];
        b += eta * s.label;
      }
      if (scale < 1e-9) {
        for (auto& v : w) v *= scale;
        scale = 1.0;
      }
    }
    auto model = snapshot();
    const double obj = hinge_objective(model, samples, opt.reg);
    result.objective_trace.push_back(obj);
    if (obj < best) {
      best = obj;
      result.model = std::move(model);
      result.best_epoch = epoch;
    }
  }
  return result;
}

inline double training_accuracy(const LinearModel& m, const std::vector<std::vector<float>>& pos,
                                const std::vector<std::vector<float>>& neg) {
  std::size_t correct = 0;
  for (const auto& f : pos) correct += score(m, f) > 0;
  for (const auto& f : neg) correct += score(m, f) <= 0;
  return static_cast<double>(correct) / static_cast<double>(pos.size() + neg.size());
}

}  // namespace cfm
