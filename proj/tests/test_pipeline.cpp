#include <gtest/gtest.h>

#include <algorithm>

#include "cfm/pipeline.hpp"
#include "support.hpp"

using namespace cfm;
using cfm::testing::rect;

namespace {

LabelMap filled(int w, int h, std::uint16_t v) {
  return LabelMap(w, h, std::vector<std::uint16_t>(static_cast<std::size_t>(w) * h, v));
}

PipelineConfig native(int scale) {
  PipelineConfig cfg;
  cfg.scales = {scale};
  return cfg;
}

LinearModel random_model(Rng& rng, std::size_t len, int category) {
  LinearModel m;
  m.category = category;
  for (std::size_t i = 0; i < len; ++i) m.weights.push_back(static_cast<float>(rng.uniform(-1, 1)));
  m.bias = static_cast<float>(rng.uniform(-0.5, 0.5));
  return m;
}

}  // namespace

TEST(AssignScale, SingleScaleIsIdentity) {
  EXPECT_EQ(assign_scale({0, 0, 9, 9}, 64, {64}), 64);
  EXPECT_EQ(assign_scale({0, 0, 63, 63}, 64, {64}), 64);
}

TEST(AssignScale, PicksAreaClosestToTarget) {
  const std::vector<int> scales{480, 576, 688, 864, 1200};
  // 100^2 * (s/400)^2 nearest to 224^2 at s = 864
  EXPECT_EQ(assign_scale({0, 0, 99, 99}, 400, scales), 864);
  EXPECT_EQ(assign_scale({0, 0, 0, 0}, 400, scales), 1200);
  EXPECT_EQ(assign_scale({0, 0, 399, 399}, 400, scales), 480);
}

TEST(AssignScale, InvalidInputsRejected) {
  EXPECT_THROW(assign_scale({0, 0, 9, 9}, 64, {}), std::invalid_argument);
  EXPECT_THROW(assign_scale({0, 0, 9, 9}, 0, {64}), std::invalid_argument);
}

TEST(ScaledDims, ShorterEdgeHitsScale) {
  EXPECT_EQ(scaled_dims(100, 200, 100), (std::pair<int, int>{100, 200}));
  EXPECT_EQ(scaled_dims(100, 200, 50), (std::pair<int, int>{50, 100}));
  EXPECT_EQ(scaled_dims(300, 200, 100), (std::pair<int, int>{150, 100}));
}

TEST(ScoreProposals, ZeroModelsScoreBias) {
  const ToyNet net(default_toynet_spec(0));
  Rng rng(81);
  const auto img = cfm::testing::random_feature_map(rng, 3, 48, 48);
  const auto props = cfm::testing::as_proposals(
      {rect(48, 48, 0, 0, 20, 20), rect(48, 48, 10, 10, 40, 30)});
  const auto cfg = native(48);
  const auto len = feature_length(cfg.design, net.out_channels(), cfg.pyramid);
  const std::vector<LinearModel> models{{std::vector<float>(len, 0.0f), 0.0f, 1},
                                        {std::vector<float>(len, 0.0f), -0.5f, 2}};
  const auto s = score_proposals(models, props, img, net, cfg);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[0].score, 0.0);
  EXPECT_EQ(s[1].score, -0.5);
  EXPECT_EQ(s[3].category, 2);
  EXPECT_EQ(s[3].proposal, &props[1]);
}

TEST(ScoreProposals, DuplicateProposalsScoreIdentically) {
  const ToyNet net(default_toynet_spec(1));
  Rng rng(82);
  const auto img = cfm::testing::random_feature_map(rng, 3, 40, 56);
  const auto blob = cfm::testing::random_blob(rng, 56, 40);
  const std::vector<SegmentProposal> props{{"a", blob}, {"b", blob}};
  const auto cfg = native(40);
  const auto m = random_model(rng, feature_length(cfg.design, 32, cfg.pyramid), 1);
  const auto s = score_proposals({m}, props, img, net, cfg);
  EXPECT_EQ(s[0].score, s[1].score);
}

TEST(ScoreProposals, OneForwardPerUsedScale) {
  const ToyNet net(default_toynet_spec(2));
  Rng rng(83);
  const auto img = cfm::testing::random_feature_map(rng, 3, 240, 240);
  const auto props = cfm::testing::as_proposals({rect(240, 240, 0, 0, 239, 239),
                                                 rect(240, 240, 0, 0, 59, 59),
                                                 rect(240, 240, 60, 60, 119, 119)});
  PipelineConfig cfg;
  cfg.scales = {120, 240, 480};
  EXPECT_EQ(assign_scale(props[0].box(), 240, cfg.scales), 240);
  EXPECT_EQ(assign_scale(props[1].box(), 240, cfg.scales), 480);
  const auto len = feature_length(cfg.design, 32, cfg.pyramid);
  int forwards = -1;
  score_proposals({random_model(rng, len, 1)}, props, img, net, cfg, 1.0, 1, &forwards);
  EXPECT_EQ(forwards, 2);
  score_proposals({random_model(rng, len, 1)}, props, img, net, native(240), 1.0, 4, &forwards);
  EXPECT_EQ(forwards, 1);
}

TEST(ScoreProposals, SingleScaleListMatchesWhenAllAssignedThere) {
  // With every proposal assigned the native scale, adding more scales
  // changes nothing.
  const ToyNet net(default_toynet_spec(3));
  Rng rng(84);
  const auto img = cfm::testing::random_feature_map(rng, 3, 224, 224);
  const auto props = cfm::testing::as_proposals(
      {rect(224, 224, 0, 0, 223, 223), rect(224, 224, 2, 1, 221, 220)});
  PipelineConfig many;
  many.scales = {112, 160, 224, 448, 896};
  for (const auto& p : props) ASSERT_EQ(assign_scale(p.box(), 224, many.scales), 224);
  const auto len = feature_length(many.design, 32, many.pyramid);
  const auto m = random_model(rng, len, 1);
  const auto a = score_proposals({m}, props, img, net, native(224));
  const auto b = score_proposals({m}, props, img, net, many);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].score, b[i].score);
}

TEST(ScoreProposals, ThreadCountDoesNotChangeScores) {
  const ToyNet net(default_toynet_spec(4));
  Rng rng(85);
  const auto img = cfm::testing::random_feature_map(rng, 3, 64, 80);
  std::vector<BinaryMask> masks;
  for (int i = 0; i < 12; ++i) masks.push_back(cfm::testing::random_blob(rng, 80, 64));
  const auto props = cfm::testing::as_proposals(masks);
  PipelineConfig cfg;
  cfg.scales = {48, 64, 96};
  const auto m = random_model(rng, feature_length(cfg.design, 32, cfg.pyramid), 1);
  const auto a = score_proposals({m}, props, img, net, cfg, 0.5, 1);
  const auto b = score_proposals({m}, props, img, net, cfg, 0.5, 4);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].score, b[i].score);
}

TEST(ScoreProposals, WrongModelLengthRejected) {
  const ToyNet net(default_toynet_spec(0));
  const auto img = FeatureMap(3, 32, 32);
  const auto props = cfm::testing::as_proposals({rect(32, 32, 0, 0, 9, 9)});
  EXPECT_THROW(score_proposals({LinearModel{{1.0f, 2.0f}, 0.0f, 1}}, props, img, net, native(32)),
               std::invalid_argument);
}

TEST(Paste, NothingPositiveGivesBackground) {
  const auto props = cfm::testing::as_proposals({rect(8, 8, 0, 0, 3, 3)});
  EXPECT_EQ(paste({}, 8, 8, {}), LabelMap(8, 8));
  EXPECT_EQ(paste({{&props[0], 2, -1.0}, {&props[0], 1, 0.0}}, 8, 8, {}), LabelMap(8, 8));
}

TEST(Paste, DisjointRegionsBothLabelled) {
  const auto props = cfm::testing::as_proposals({rect(8, 4, 0, 0, 3, 3), rect(8, 4, 4, 0, 7, 3)});
  const auto out = paste({{&props[0], 1, 0.9}, {&props[1], 2, 0.4}}, 8, 4, {});
  EXPECT_EQ(out.at(0, 0), 1);
  EXPECT_EQ(out.at(7, 3), 2);
}

TEST(Paste, HigherScoreSuppressesOverlap) {
  // IoU of the two regions is 48/80
  const auto props = cfm::testing::as_proposals({rect(10, 8, 0, 0, 7, 7), rect(10, 8, 2, 0, 9, 7)});
  const auto out = paste({{&props[0], 1, 0.5}, {&props[1], 2, 0.8}}, 10, 8, {});
  EXPECT_EQ(out.at(0, 0), 0);
  EXPECT_EQ(out.at(2, 0), 2);
  EXPECT_EQ(out.at(9, 7), 2);
  EXPECT_EQ(mask_of_label(out, 1).count(), 0);
}

TEST(Paste, LowOverlapKeepsBothWithoutOverwrite) {
  const auto props = cfm::testing::as_proposals({rect(20, 4, 0, 0, 9, 3), rect(20, 4, 8, 0, 19, 3)});
  const auto out = paste({{&props[0], 1, 0.9}, {&props[1], 2, 0.8}}, 20, 4, {});
  EXPECT_EQ(out.at(9, 0), 1);
  EXPECT_EQ(out.at(10, 0), 2);
}

TEST(Paste, InputOrderIrrelevant) {
  Rng rng(86);
  for (int t = 0; t < 40; ++t) {
    std::vector<BinaryMask> masks;
    for (int i = 0; i < 8; ++i) masks.push_back(cfm::testing::random_blob(rng, 16, 16));
    const auto props = cfm::testing::as_proposals(masks);
    std::vector<ScoredRegion> scored;
    for (const auto& p : props)
      scored.push_back({&p, rng.between(1, 4), static_cast<double>(rng.between(-2, 4))});
    const auto base = paste(scored, 16, 16, {});
    for (int k = 0; k < 5; ++k) {
      rng.shuffle(std::span<ScoredRegion>(scored));
      ASSERT_EQ(paste(scored, 16, 16, {}), base);
    }
  }
}

TEST(Paste, MismatchedDimsRejected) {
  const auto props = cfm::testing::as_proposals({rect(8, 8, 0, 0, 3, 3)});
  EXPECT_THROW(paste({{&props[0], 1, 1.0}}, 9, 8, {}), DimensionMismatch);
}

TEST(MeanIou, IdentityIsOne) {
  LabelMap m(4, 4);
  m.set(0, 0, 1);
  m.set(3, 3, 2);
  const auto r = mean_iou({m}, {m}, 3);
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
  EXPECT_TRUE(r.per_category[2].has_value());
}

TEST(MeanIou, HalfCoveredHandExample) {
  // gt: left half 1, right half 0. pred: all 1.
  LabelMap gt(4, 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) gt.set(x, y, 1);
  const auto r = mean_iou({filled(4, 2, 1)}, {gt}, 2);
  EXPECT_DOUBLE_EQ(*r.per_category[1], 0.5);
  EXPECT_DOUBLE_EQ(*r.per_category[0], 0.0);
  EXPECT_DOUBLE_EQ(r.mean, 0.25);
}

TEST(MeanIou, AbsentCategoriesSkipped) {
  const auto r = mean_iou({filled(3, 3, 1)}, {filled(3, 3, 1)}, 5);
  EXPECT_FALSE(r.per_category[0].has_value());
  EXPECT_FALSE(r.per_category[4].has_value());
  EXPECT_DOUBLE_EQ(r.mean, 1.0);
}

TEST(MeanIou, SymmetricAndBounded) {
  Rng rng(87);
  for (int t = 0; t < 100; ++t) {
    std::vector<LabelMap> a, b;
    for (int i = 0; i < 3; ++i) {
      LabelMap x(6, 5), y(6, 5);
      for (int yy = 0; yy < 5; ++yy)
        for (int xx = 0; xx < 6; ++xx) {
          x.set(xx, yy, static_cast<std::uint16_t>(rng.between(0, 3)));
          y.set(xx, yy, static_cast<std::uint16_t>(rng.between(0, 3)));
        }
      a.push_back(x);
      b.push_back(y);
    }
    const auto ab = mean_iou(a, b, 4), ba = mean_iou(b, a, 4);
    EXPECT_DOUBLE_EQ(ab.mean, ba.mean);
    EXPECT_GE(ab.mean, 0.0);
    EXPECT_LE(ab.mean, 1.0);
  }
}

TEST(MeanIou, InvalidInputsRejected) {
  EXPECT_THROW(mean_iou({LabelMap(3, 3)}, {LabelMap(3, 4)}, 2), DimensionMismatch);
  EXPECT_THROW(mean_iou({LabelMap(3, 3)}, {}, 2), DimensionMismatch);
  EXPECT_THROW(mean_iou({filled(3, 3, 5)}, {LabelMap(3, 3)}, 2), std::invalid_argument);
}

TEST(TrainModels, SmallCorpusLearnsSomething) {
  const ToyNet net(default_toynet_spec(0));
  std::vector<SceneData> train, test;
  for (std::uint64_t i = 0; i < 24; ++i) {
    const auto spec = random_scene_spec(mix_seed(11, i), 64, 64);
    (i < 18 ? train : test).push_back(make_scene_data(generate_scene(spec), {}, i));
  }
  const auto cfg = native(64);
  TrainOptions opt;
  const auto bundle = train_models(train, net, cfg, opt, 2);
  EXPECT_EQ(bundle.num_categories, 6);
  ASSERT_EQ(bundle.models.size(), 5u);
  EXPECT_GT(bundle.feature_scale, 0.0);
  std::vector<LabelMap> pred, gt;
  for (const auto& s : test) {
    pred.push_back(infer_labels(bundle, s, net, cfg));
    gt.push_back(s.gt);
  }
  EXPECT_GT(mean_iou(pred, gt, 6).mean, 0.2);
  const auto again = train_models(train, net, cfg, opt, 1);
  for (std::size_t k = 0; k < again.models.size(); ++k) {
    EXPECT_EQ(again.models[k].weights, bundle.models[k].weights);
  }
}

TEST(Bundle, SaveLoadRoundTrip) {
  cfm::testing::TempDir dir("bundle");
  ModelBundle b;
  b.design = FeatureDesign::design_a;
  b.scales = {64, 128};
  b.feature_scale = 0.125;
  b.num_categories = 3;
  b.models = {{{1.0f, -2.0f, 0.5f}, 0.25f, 1}, {{0.0f, 0.0f, 3.0f}, -1.0f, 2}};
  save_bundle(dir.path(), b, default_toynet_spec(9));
  const auto [back, spec] = load_bundle(dir.path());
  EXPECT_EQ(back.design, b.design);
  EXPECT_EQ(back.scales, b.scales);
  EXPECT_EQ(back.feature_scale, b.feature_scale);
  EXPECT_EQ(back.pyramid.levels, b.pyramid.levels);
  ASSERT_EQ(back.models.size(), 2u);
  EXPECT_EQ(back.models[1].weights, b.models[1].weights);
  EXPECT_EQ(back.models[0].bias, 0.25f);
  EXPECT_EQ(spec.seed, 9u);
  EXPECT_EQ(load_feature_map(dir / "weights_1.cfmt").height(), 1);
}

TEST(Bundle, MalformedManifestIsFormatError) {
  cfm::testing::TempDir dir("badbundle");
  write_text(dir / "model.json", "{\"design\": \"B\"}");
  EXPECT_THROW(load_bundle(dir.path()), FormatError);
}

TEST(Benchmark, SmokeRun) {
  const ToyNet net(default_toynet_spec(0));
  Rng rng(88);
  const auto img = cfm::testing::random_feature_map(rng, 3, 64, 64);
  const auto props = cfm::testing::as_proposals({rect(64, 64, 0, 0, 31, 31), rect(64, 64, 16, 16, 63, 63)});
  BenchmarkOptions opt;
  opt.warp_side = 64;
  opt.repeats = 2;
  const auto r = benchmark(img, props, net, 5, opt);
  EXPECT_EQ(r.proposals, 5u);
  EXPECT_TRUE(r.deterministic);
  EXPECT_GT(r.per_region_ms, 0.0);
  EXPECT_GT(r.ratio, 0.0);
  EXPECT_THROW(benchmark(img, {}, net, 5, opt), std::invalid_argument);
}
