#pragma once

// Command-line front end. Every subcommand wraps one library operation;
// reports go to stdout as JSON, binary artifacts only to --out paths.

#include <filesystem>
#include <iostream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cfm/core_types.hpp"
#include "cfm/formats.hpp"
#include "cfm/masking.hpp"
#include "cfm/netgeom.hpp"
#include "cfm/pipeline.hpp"
#include "cfm/pursuit.hpp"
#include "cfm/spp.hpp"
#include "cfm/synth.hpp"
#include "cfm/toynet.hpp"
#include "json.hpp"

namespace cfm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

inline void print(std::ostream& out, const json& j) { out << j.dump(2) << "\n"; }

inline ToyNetSpec net_spec_or_default(const std::string& path, std::uint64_t seed) {
  return path.empty() ? default_toynet_spec(seed) : toynet_spec_from_json(read_json(path));
}

inline PyramidSpec pyramid_from(const std::vector<int>& levels) {
  PyramidSpec p;
  p.levels = levels;
  p.validate();
  return p;
}

// ---- scene directories -----------------------------------------------------
// image.cfmt, gt.cfml, segments.json (+ segments/*.pgm), proposals.json (+ masks/*.pgm)

inline void save_scene_dir(const fs::path& dir, const SceneData& s, const SceneSpec* spec) {
  fs::create_directories(dir / "segments");
  save_feature_map(dir / "image.cfmt", s.image);
  save_label_map(dir / "gt.cfml", s.gt);
  json segs = json::array();
  for (std::size_t k = 0; k < s.segments.size(); ++k) {
    const std::string rel = "segments/s" + std::to_string(k) + ".pgm";
    save_mask(dir / rel, s.segments[k].mask);
    segs.push_back({{"mask", rel}, {"category", s.segments[k].category}});
  }
  write_text(dir / "segments.json", segs.dump(1) + "\n");
  save_proposals(dir / "proposals.json", s.proposals);
  if (spec) write_text(dir / "scene.json", scene_spec_to_json(*spec).dump(1) + "\n");
}

inline SceneData load_scene_dir(const fs::path& dir) {
  SceneData s{load_feature_map(dir / "image.cfmt"), load_label_map(dir / "gt.cfml"), {},
              load_proposals(dir / "proposals.json")};
  for (const auto& e : read_json(dir / "segments.json")) {
    s.segments.push_back({load_mask(dir / e.at("mask").get<std::string>()),
                          e.at("category").get<int>()});
  }
  return s;
}

inline SceneData synth_scene_data(const SceneSpec& spec, const ProposalParams& params,
                                  std::uint64_t seed) {
  return make_scene_data(generate_scene(spec), params, mix_seed(seed, 1));
}

// ---- scores files ----------------------------------------------------------

inline json scores_to_json(const std::vector<ScoredRegion>& scored) {
  json arr = json::array();
  for (const auto& r : scored) {
    arr.push_back({{"id", r.proposal->id()}, {"category", r.category}, {"score", r.score}});
  }
  return arr;
}

inline std::vector<ScoredRegion> scores_from_json(const json& arr,
                                                  const std::vector<SegmentProposal>& props) {
  std::map<std::string, const SegmentProposal*> by_id;
  for (const auto& p : props) by_id[p.id()] = &p;
  std::vector<ScoredRegion> out;
  for (const auto& e : arr) {
    const auto id = e.at("id").get<std::string>();
    auto it = by_id.find(id);
    if (it == by_id.end()) throw std::invalid_argument("scores: unknown proposal '" + id + "'");
    out.push_back({it->second, e.at("category").get<int>(), e.at("score").get<double>()});
  }
  return out;
}

// ---- subcommands -----------------------------------------------------------

struct Options {
  // shared
  int threads = 1;
  std::uint64_t seed = 0;
  std::string out;
  // inputs
  std::string layers, net, image, mask, features, proposals, stuff, spec, scores, model, gt_path;
  std::vector<std::string> scene_dirs, preds, gts;
  int fh = 0, fw = 0, width = 128, height = 128, categories = 0;
  std::string design = "B", mode = "deterministic", out_dir, scores_out;
  std::vector<int> pyramid{6, 3, 2, 1};
  std::vector<int> scales{480, 576, 688, 864, 1200};
  std::vector<int> counts{1, 10, 50, 200};
  std::vector<int> grid{16, 32};
  int jitter = 2, erode = 2, dilate = 3;
  double purity_pos = 0.6, purity_neg = 0.3, inhibit_iou = 0.2, paste_iou = 0.3;
  double reg = 1e-4;
  int epochs = 20, negatives_per_scene = 40, synthetic = 0;
  int warp_side = 224, repeats = 3;
};

inline void add_threads(CLI::App* c, Options& o) {
  c->add_option("--threads", o.threads, "Worker threads; outputs do not depend on it")
      ->check(CLI::Range(1, 256));
}
inline void add_seed(CLI::App* c, Options& o, const char* what) {
  c->add_option("--seed", o.seed, what);
}

inline int cmd_geometry(const Options& o, std::ostream& out) {
  print(out, geometry_to_json(compose_geometry(layers_from_json(read_json(o.layers)))));
  return 0;
}

inline int cmd_forward(const Options& o, std::ostream& out) {
  const ToyNet net(net_spec_or_default(o.net, o.seed));
  const auto conv = net.forward(load_feature_map(o.image), o.threads);
  save_feature_map(o.out, conv);
  print(out, {{"channels", conv.channels()}, {"height", conv.height()}, {"width", conv.width()},
              {"geometry", geometry_to_json(net.geometry())}});
  return 0;
}

inline int cmd_mask_project(const Options& o, std::ostream& out) {
  const auto g = compose_geometry(layers_from_json(read_json(o.layers)));
  const auto fm = project_mask(g, load_mask(o.mask), o.fh, o.fw);
  save_mask(o.out, fm.as_binary_mask());
  print(out, {{"fh", o.fh}, {"fw", o.fw}, {"cells_set", fm.count()}});
  return 0;
}

inline int cmd_pool(const Options& o, std::ostream& out) {
  const auto conv = load_feature_map(o.features);
  const auto g = compose_geometry(layers_from_json(read_json(o.layers)));
  const auto pyr = pyramid_from(o.pyramid);
  const auto design = design_from_string(o.design);
  const SegmentProposal seg("region", load_mask(o.mask));
  const RegionFeatureExtractor ex(conv, g, seg.mask().width(), seg.mask().height(), pyr);
  auto values = ex.extract(seg, design);
  const auto win = ex.window(seg);
  const int len = static_cast<int>(values.size());
  save_feature_map(o.out, FeatureMap(1, 1, len, std::move(values)));
  print(out, {{"design", to_string(design)},
              {"pyramid", pyr.levels},
              {"channels", conv.channels()},
              {"length", len},
              {"window", {win.u0, win.v0, win.u1, win.v1}}});
  return 0;
}

inline int cmd_pursue(const Options& o, std::ostream& out) {
  const auto props = load_proposals(o.proposals);
  const auto stuff = load_mask(o.stuff);
  const PursuitConfig cfg{o.purity_pos, o.purity_neg, o.inhibit_iou};
  const auto mode = o.mode == "stochastic" ? PursuitMode::stochastic : PursuitMode::deterministic;
  const auto res = stuff_samples(props, stuff, cfg, mode, o.seed);
  json sel = json::array();
  for (const auto& c : res.positives) {
    sel.push_back({{"id", c.id()}, {"area", c.area}, {"purity", c.purity}});
  }
  json neg = json::array();
  for (const auto* p : res.negatives) neg.push_back(p->id());
  print(out, {{"mode", o.mode},
              {"candidates", candidate_set(props, stuff, cfg).size()},
              {"selected", sel},
              {"negatives", neg}});
  return 0;
}

inline ProposalParams proposal_params(const Options& o) {
  ProposalParams p;
  p.grid_cells = o.grid;
  p.jitter = o.jitter;
  p.erode = o.erode;
  p.dilate = o.dilate;
  return p;
}

inline int cmd_synth(const Options& o, std::ostream& out) {
  const SceneSpec spec = o.spec.empty() ? random_scene_spec(o.seed, o.width, o.height)
                                        : scene_spec_from_json(read_json(o.spec));
  const auto data = synth_scene_data(spec, proposal_params(o), o.seed);
  save_scene_dir(o.out_dir, data, &spec);
  print(out, {{"width", spec.width},
              {"height", spec.height},
              {"segments", data.segments.size()},
              {"proposals", data.proposals.size()}});
  return 0;
}

inline int cmd_train(const Options& o, std::ostream& out) {
  std::vector<SceneData> scenes;
  for (const auto& d : o.scene_dirs) scenes.push_back(load_scene_dir(d));
  for (int i = 0; i < o.synthetic; ++i) {
    const auto s = mix_seed(o.seed, 1000 + static_cast<std::uint64_t>(i));
    scenes.push_back(synth_scene_data(random_scene_spec(s, o.width, o.height),
                                      proposal_params(o), s));
  }
  if (scenes.empty()) throw std::invalid_argument("train: no scenes (use --scene-dir or --synthetic)");
  const auto net_spec = net_spec_or_default(o.net, o.seed);
  const ToyNet net(net_spec);
  PipelineConfig cfg;
  cfg.scales = o.scales;
  cfg.design = design_from_string(o.design);
  cfg.pyramid = pyramid_from(o.pyramid);
  cfg.paste_inhibit_iou = o.paste_iou;
  TrainOptions topt;
  if (o.categories > 0) topt.categories.num_stuff = o.categories - 1 - topt.categories.num_objects;
  topt.svm.reg = o.reg;
  topt.svm.epochs = o.epochs;
  topt.svm.seed = o.seed;
  topt.pursuit = {o.purity_pos, o.purity_neg, o.inhibit_iou};
  topt.negatives_per_scene = o.negatives_per_scene;
  topt.seed = o.seed;
  const auto bundle = train_models(scenes, net, cfg, topt, o.threads);
  save_bundle(o.out_dir, bundle, net_spec);
  print(out, {{"design", to_string(bundle.design)},
              {"scenes", scenes.size()},
              {"models", bundle.models.size()},
              {"feature_scale", bundle.feature_scale}});
  return 0;
}

inline PipelineConfig bundle_config(const ModelBundle& b, double paste_iou) {
  PipelineConfig cfg;
  cfg.scales = b.scales;
  cfg.design = b.design;
  cfg.pyramid = b.pyramid;
  cfg.paste_inhibit_iou = paste_iou;
  return cfg;
}

inline int cmd_infer(const Options& o, std::ostream& out) {
  const auto [bundle, net_spec] = load_bundle(o.model);
  const ToyNet net(net_spec);
  const auto cfg = bundle_config(bundle, o.paste_iou);
  const auto image = load_feature_map(o.image);
  const auto props = load_proposals(o.proposals);
  int forwards = 0;
  const auto scored = score_proposals(bundle.models, props, image, net, cfg, bundle.feature_scale,
                                      o.threads, &forwards);
  if (!o.scores_out.empty()) write_text(o.scores_out, scores_to_json(scored).dump(1) + "\n");
  const auto labels = paste(scored, image.width(), image.height(), cfg);
  save_label_map(o.out, labels);
  json report{{"proposals", props.size()}, {"forward_passes", forwards}};
  if (!o.gt_path.empty()) {
    report["eval"] = iou_report_to_json(
        mean_iou({labels}, {load_label_map(o.gt_path)}, bundle.num_categories));
  }
  print(out, report);
  return 0;
}

inline int cmd_paste(const Options& o, std::ostream& out) {
  const auto props = load_proposals(o.proposals);
  const auto scored = scores_from_json(read_json(o.scores), props);
  int w = o.width, h = o.height;
  if (!props.empty()) {
    w = props.front().mask().width();
    h = props.front().mask().height();
  }
  PipelineConfig cfg;
  cfg.paste_inhibit_iou = o.paste_iou;
  const auto labels = paste(scored, w, h, cfg);
  save_label_map(o.out, labels);
  std::size_t labeled = 0;
  for (auto v : labels.labels()) labeled += v != 0;
  print(out, {{"width", w}, {"height", h}, {"labeled_pixels", labeled}});
  return 0;
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  if (o.preds.size() != o.gts.size()) {
    throw DimensionMismatch("eval: --pred and --gt counts differ");
  }
  std::vector<LabelMap> pred, gt;
  for (const auto& p : o.preds) pred.push_back(load_label_map(p));
  for (const auto& g : o.gts) gt.push_back(load_label_map(g));
  print(out, iou_report_to_json(mean_iou(pred, gt, o.categories)));
  return 0;
}

inline int cmd_bench(const Options& o, std::ostream& out) {
  const ToyNet net(net_spec_or_default(o.net, o.seed));
  const auto image = load_feature_map(o.image);
  const auto props = load_proposals(o.proposals);
  BenchmarkOptions bopt;
  bopt.warp_side = o.warp_side;
  bopt.repeats = o.repeats;
  bopt.design = design_from_string(o.design);
  bopt.pyramid = pyramid_from(o.pyramid);
  std::vector<int> thread_counts{1};
  if (o.threads > 1) thread_counts.push_back(o.threads);
  json runs = json::array();
  for (int t : thread_counts) {
    bopt.threads = t;
    for (int c : o.counts) {
      if (c < 1) throw std::invalid_argument("bench: counts must be >= 1");
      runs.push_back(benchmark_to_json(benchmark(image, props, net, c, bopt)));
    }
  }
  if (!o.out.empty()) {
    // Conv-once features of the largest count, one row per proposal.
    const int n = *std::max_element(o.counts.begin(), o.counts.end());
    const auto conv = net.forward(image, o.threads);
    const RegionFeatureExtractor ex(conv, net.geometry(), image.width(), image.height(),
                                    bopt.pyramid);
    const auto len = feature_length(bopt.design, conv.channels(), bopt.pyramid);
    std::vector<float> all(len * n);
    parallel_for(n, o.threads, [&](std::size_t i) {
      const auto f = ex.extract(props[i % props.size()], bopt.design);
      std::copy(f.begin(), f.end(), all.begin() + i * len);
    });
    save_feature_map(o.out, FeatureMap(1, n, static_cast<int>(len), std::move(all)));
  }
  print(out, {{"runs", runs}});
  return 0;
}

// ---- dispatch --------------------------------------------------------------

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Convolutional feature masking segmentation tools", "cfm"};
  app.require_subcommand(1);

  auto* geometry = app.add_subcommand("geometry", "Print stride, receptive field and offset");
  geometry->add_option("--layers", o.layers, "Layer stack JSON")->required();
  add_threads(geometry, o);

  auto* forward = app.add_subcommand("forward", "Run the toy net on an image");
  forward->add_option("--image", o.image, "Input image (CFMT)")->required();
  forward->add_option("--net", o.net, "Net spec JSON (default: built-in toy net)");
  forward->add_option("--out", o.out, "Output feature map (CFMT)")->required();
  add_seed(forward, o, "Weight seed for the built-in net");
  add_threads(forward, o);

  auto* mproj = app.add_subcommand("mask-project", "Project an image mask onto the feature grid");
  mproj->add_option("--geometry", o.layers, "Layer stack JSON")->required();
  mproj->add_option("--mask", o.mask, "Image mask (PGM)")->required();
  mproj->add_option("--fh", o.fh, "Feature map height")->required()->check(CLI::PositiveNumber);
  mproj->add_option("--fw", o.fw, "Feature map width")->required()->check(CLI::PositiveNumber);
  mproj->add_option("--out", o.out, "Output feature mask (PGM)")->required();
  add_threads(mproj, o);

  auto* pool = app.add_subcommand("pool", "Pool one region's features");
  pool->add_option("--features", o.features, "Conv feature map (CFMT)")->required();
  pool->add_option("--geometry", o.layers, "Layer stack JSON")->required();
  pool->add_option("--mask", o.mask, "Region mask at image size (PGM)")->required();
  pool->add_option("--design", o.design, "Feature design: none, A or B")
      ->check(CLI::IsMember({"none", "A", "B"}));
  pool->add_option("--pyramid", o.pyramid, "Pyramid levels")->delimiter(',');
  pool->add_option("--out", o.out, "Output vector as a 1x1xL CFMT")->required();
  add_threads(pool, o);

  auto* pursue = app.add_subcommand("pursue", "Segment pursuit for one stuff region");
  pursue->add_option("--proposals", o.proposals, "Proposal index JSON")->required();
  pursue->add_option("--stuff", o.stuff, "Stuff mask (PGM)")->required();
  pursue->add_option("--mode", o.mode, "deterministic or stochastic")
      ->check(CLI::IsMember({"deterministic", "stochastic"}));
  pursue->add_option("--purity-pos", o.purity_pos, "Candidate purity threshold");
  pursue->add_option("--purity-neg", o.purity_neg, "Negative purity threshold");
  pursue->add_option("--inhibit-iou", o.inhibit_iou, "Inhibition IoU threshold");
  add_seed(pursue, o, "Seed for stochastic picks");
  add_threads(pursue, o);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene with proposals");
  synth->add_option("--spec", o.spec, "Scene spec JSON (default: random scene from --seed)");
  synth->add_option("--width", o.width, "Random scene width")->check(CLI::PositiveNumber);
  synth->add_option("--height", o.height, "Random scene height")->check(CLI::PositiveNumber);
  synth->add_option("--grid", o.grid, "Proposal grid cell sizes")->delimiter(',');
  synth->add_option("--jitter", o.jitter, "Max shift of perturbed segment copies");
  synth->add_option("--erode", o.erode, "Erosion radius");
  synth->add_option("--dilate", o.dilate, "Dilation radius");
  synth->add_option("--out-dir", o.out_dir, "Scene directory")->required();
  add_seed(synth, o, "Scene and proposal seed");
  add_threads(synth, o);

  auto* train = app.add_subcommand("train", "Train per-category linear classifiers");
  train->add_option("--scene-dir", o.scene_dirs, "Scene directory written by synth (repeatable)");
  train->add_option("--synthetic", o.synthetic, "Number of extra random scenes");
  train->add_option("--width", o.width, "Random scene width")->check(CLI::PositiveNumber);
  train->add_option("--height", o.height, "Random scene height")->check(CLI::PositiveNumber);
  train->add_option("--grid", o.grid, "Proposal grid cell sizes")->delimiter(',');
  train->add_option("--net", o.net, "Net spec JSON (default: built-in toy net)");
  train->add_option("--design", o.design, "Feature design: none, A or B")
      ->check(CLI::IsMember({"none", "A", "B"}));
  train->add_option("--pyramid", o.pyramid, "Pyramid levels")->delimiter(',');
  train->add_option("--scales", o.scales, "Shorter-edge scales, ascending")->delimiter(',');
  train->add_option("--categories", o.categories, "Category count including background");
  train->add_option("--reg", o.reg, "Regularisation strength");
  train->add_option("--epochs", o.epochs, "Training epochs");
  train->add_option("--negatives-per-scene", o.negatives_per_scene, "Proposals drawn per scene");
  train->add_option("--out-dir", o.out_dir, "Model directory")->required();
  add_seed(train, o, "Master seed");
  add_threads(train, o);

  auto* infer = app.add_subcommand("infer", "Score, paste and optionally evaluate one image");
  infer->add_option("--model", o.model, "Model directory")->required();
  infer->add_option("--image", o.image, "Image (CFMT)")->required();
  infer->add_option("--proposals", o.proposals, "Proposal index JSON")->required();
  infer->add_option("--gt", o.gt_path, "Ground-truth label map (CFML)");
  infer->add_option("--paste-iou", o.paste_iou, "Pasting inhibition IoU");
  infer->add_option("--scores-out", o.scores_out, "Write scored regions JSON");
  infer->add_option("--out", o.out, "Output label map (CFML)")->required();
  add_threads(infer, o);

  auto* paste_cmd = app.add_subcommand("paste", "Paste scored regions into a label map");
  paste_cmd->add_option("--scores", o.scores, "Scored regions JSON")->required();
  paste_cmd->add_option("--proposals", o.proposals, "Proposal index JSON")->required();
  paste_cmd->add_option("--paste-iou", o.paste_iou, "Pasting inhibition IoU");
  paste_cmd->add_option("--width", o.width, "Image width when there are no proposals");
  paste_cmd->add_option("--height", o.height, "Image height when there are no proposals");
  paste_cmd->add_option("--out", o.out, "Output label map (CFML)")->required();
  add_threads(paste_cmd, o);

  auto* eval = app.add_subcommand("eval", "Dataset mean IoU");
  eval->add_option("--pred", o.preds, "Predicted label maps (CFML)")->required()->delimiter(',');
  eval->add_option("--gt", o.gts, "Ground-truth label maps (CFML)")->required()->delimiter(',');
  eval->add_option("--categories", o.categories, "Category count including background")
      ->required();
  add_threads(eval, o);

  auto* bench = app.add_subcommand("bench", "Conv-once vs per-region feature timing");
  bench->add_option("--image", o.image, "Image (CFMT)")->required();
  bench->add_option("--proposals", o.proposals, "Proposal index JSON")->required();
  bench->add_option("--net", o.net, "Net spec JSON (default: built-in toy net)");
  bench->add_option("--counts", o.counts, "Proposal counts")->delimiter(',');
  bench->add_option("--warp-side", o.warp_side, "Warp size for the per-region path")
      ->check(CLI::PositiveNumber);
  bench->add_option("--repeats", o.repeats, "Repeats per timing (median)")
      ->check(CLI::PositiveNumber);
  bench->add_option("--design", o.design, "Feature design: none, A or B")
      ->check(CLI::IsMember({"none", "A", "B"}));
  bench->add_option("--pyramid", o.pyramid, "Pyramid levels")->delimiter(',');
  bench->add_option("--out", o.out, "Conv-once features of the largest count (CFMT)");
  add_seed(bench, o, "Weight seed for the built-in net");
  add_threads(bench, o);

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "geometry") return cmd_geometry(o, out);
    if (name == "forward") return cmd_forward(o, out);
    if (name == "mask-project") return cmd_mask_project(o, out);
    if (name == "pool") return cmd_pool(o, out);
    if (name == "pursue") return cmd_pursue(o, out);
    if (name == "synth") return cmd_synth(o, out);
    if (name == "train") return cmd_train(o, out);
    if (name == "infer") return cmd_infer(o, out);
    if (name == "paste") return cmd_paste(o, out);
    if (name == "eval") return cmd_eval(o, out);
    if (name == "bench") return cmd_bench(o, out);
    return 2;
  } catch (const FormatError& e) {
    err << json{{"error", "format"}, {"message", e.what()}}.dump() << "\n";
  } catch (const std::exception& e) {
    err << json{{"error", "failure"}, {"message", e.what()}}.dump() << "\n";
  }
  return 1;
}

}  // namespace cfm::cli
