#pragma once

// End-to-end plumbing shared by the command-line tool and the acceptance
// run: run configuration, dataset directories, per-stage training sets,
// batch localization and evaluation.

#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "kneealign/alignment.hpp"
#include "kneealign/config.hpp"
#include "kneealign/hourglass.hpp"
#include "kneealign/image.hpp"
#include "kneealign/landmarks.hpp"
#include "kneealign/metrics.hpp"
#include "kneealign/pipeline.hpp"
#include "kneealign/synth.hpp"
#include "kneealign/train.hpp"

namespace ka {

/// How the local stage's training frames are placed.
///   gt      reference points from the ground truth
///   global  reference points predicted by the trained global model, so the
///           local model sees the frame placement errors it meets at test time
enum class LocalFrames { GroundTruth, GlobalPrediction };

struct RunConfig {
  std::uint64_t seed = 1;
  PhantomRanges synth;
  HourglassConfig global;
  HourglassConfig local;
  double frame_span = 0.4;
  LocalFrames local_frames = LocalFrames::GlobalPrediction;
  std::filesystem::path global_model;
  std::filesystem::path local_model;
  int threads = 0;

  RunConfig() {
    global.depth = 3;
    global.width = 8;
    global.landmarks = 2;
    global.input_height = 64;
    global.input_width = 64;
    global.epochs = 60;
    global.batch_size = 4;
    global.learning_rate = 1e-3;
    global.lr_final_factor = 0.05;
    global.softargmax_beta = 20.0;
    global.heatmap_loss_weight = 1000.0;
    local.depth = 3;
    local.width = 16;
    local.landmarks = synth.landmarks;
    local.input_height = 96;
    local.input_width = 96;
    local.epochs = 30;
    local.batch_size = 4;
    local.learning_rate = 1e-3;
    local.lr_final_factor = 0.05;
    local.softargmax_beta = 20.0;
    local.heatmap_loss_weight = 1000.0;
  }

  PipelineSpec pipeline() const {
    PipelineSpec s;
    s.global_height = global.input_height;
    s.global_width = global.input_width;
    s.local = ReferenceFrameSpec::centered(local.input_height, local.input_width, frame_span);
    return s;
  }

  void validate() const {
    global.validate();
    local.validate();
    if (global.landmarks != 2) throw Error(Errc::ConfigError, "global.landmarks must be 2 (the reference pair)");
    if (local.landmarks != synth.landmarks) {
      throw Error(Errc::ConfigError, "local.landmarks must equal synth.landmarks");
    }
    knee_contour_layout(synth.landmarks);
    if (!(synth.atfa_min >= -20.0 && synth.atfa_max <= 20.0 && synth.atfa_min <= synth.atfa_max)) {
      throw Error(Errc::ConfigError, "synth aTFA range must lie in [-20, 20]");
    }
    if (!(synth.plateau_min > 0.0 && synth.plateau_min <= synth.plateau_max)) {
      throw Error(Errc::ConfigError, "synth plateau range is invalid");
    }
    if (!(synth.right_fraction >= 0.0 && synth.right_fraction <= 1.0 && synth.post_op_fraction >= 0.0 &&
          synth.post_op_fraction <= 1.0)) {
      throw Error(Errc::ConfigError, "synth fractions must lie in [0, 1]");
    }
    pipeline();  // validates the frame
  }

  static std::set<std::string> known_keys() {
    std::set<std::string> k{"seed",
                            "threads",
                            "frame_span",
                            "local_frames",
                            "global_model",
                            "local_model",
                            "synth.landmarks",
                            "synth.atfa_min",
                            "synth.atfa_max",
                            "synth.plateau_min",
                            "synth.plateau_max",
                            "synth.rotation_max",
                            "synth.offset_max",
                            "synth.shape_jitter",
                            "synth.right_fraction",
                            "synth.post_op_fraction",
                            "synth.image_width",
                            "synth.image_height"};
    for (const auto& key : HourglassConfig::keys()) {
      k.insert("global." + key);
      k.insert("local." + key);
    }
    return k;
  }

  /// Relative model paths resolve against `base` (the config file's directory).
  static RunConfig from_key_values(const KeyValueConfig& kv, const std::filesystem::path& base = {}) {
    kv.reject_unknown(known_keys());
    RunConfig c;
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
    c.threads = static_cast<int>(kv.get_int("threads", c.threads));
    c.frame_span = kv.get_double("frame_span", c.frame_span);
    const std::string frames = kv.get_string("local_frames", "global");
    if (frames == "gt") {
      c.local_frames = LocalFrames::GroundTruth;
    } else if (frames == "global") {
      c.local_frames = LocalFrames::GlobalPrediction;
    } else {
      throw Error(Errc::ConfigError, "local_frames must be 'gt' or 'global'");
    }
    auto path = [&](const char* key) {
      std::filesystem::path p = kv.get_string(key, "");
      return p.empty() || p.is_absolute() ? p : base / p;
    };
    c.global_model = path("global_model");
    c.local_model = path("local_model");
    auto& s = c.synth;
    s.landmarks = static_cast<int>(kv.get_int("synth.landmarks", s.landmarks));
    s.atfa_min = kv.get_double("synth.atfa_min", s.atfa_min);
    s.atfa_max = kv.get_double("synth.atfa_max", s.atfa_max);
    s.plateau_min = kv.get_double("synth.plateau_min", s.plateau_min);
    s.plateau_max = kv.get_double("synth.plateau_max", s.plateau_max);
    s.rotation_max = kv.get_double("synth.rotation_max", s.rotation_max);
    s.offset_max = kv.get_double("synth.offset_max", s.offset_max);
    s.shape_jitter = kv.get_double("synth.shape_jitter", s.shape_jitter);
    s.right_fraction = kv.get_double("synth.right_fraction", s.right_fraction);
    s.post_op_fraction = kv.get_double("synth.post_op_fraction", s.post_op_fraction);
    s.image_width = static_cast<int>(kv.get_int("synth.image_width", s.image_width));
    s.image_height = static_cast<int>(kv.get_int("synth.image_height", s.image_height));
    c.local.landmarks = s.landmarks;
    c.global.apply(kv, "global.");
    c.local.apply(kv, "local.");
    c.validate();
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    return from_key_values(KeyValueConfig::load(path), path.parent_path());
  }
};

// ---- datasets -----------------------------------------------------------------

struct DatasetItem {
  ManifestRow row;
  Image image;         // empty when loaded without images
  LandmarkSet points;  // in the item's own orientation
};

struct Dataset {
  LandmarkSchema schema;
  std::vector<DatasetItem> items;
};

/// Reads manifest.csv, schema.txt and per-id files from `dir`. Missing point
/// files are an error when `need_points` is set; images are read when
/// `need_images` is set.
inline Dataset load_dataset(const std::filesystem::path& dir, bool need_images, bool need_points = true) {
  if (!std::filesystem::is_directory(dir)) throw Error(Errc::IoError, "no such dataset directory: " + dir.string());
  Dataset d;
  d.schema = read_schema(dir / "schema.txt");
  for (const auto& row : read_manifest(dir / "manifest.csv")) {
    DatasetItem item{row, {}, {}};
    if (need_images) item.image = read_pgm(dir / (row.id + ".pgm"));
    if (need_points) item.points = d.schema.make_set(read_pts(dir / (row.id + ".pts")), row.side);
    d.items.push_back(std::move(item));
  }
  if (d.items.empty()) throw Error(Errc::EmptyDataset, "dataset " + dir.string() + " lists no images");
  return d;
}

/// Item image and points in the left-knee view.
inline std::pair<Image, LandmarkSet> left_view(const DatasetItem& item, const LandmarkSchema& schema) {
  if (item.row.side == Side::Left) return {item.image, item.points};
  return flip_to_left(item.image, item.points, schema);
}

// ---- training sets ------------------------------------------------------------

inline std::vector<TrainingSample> global_training_set(const Dataset& d, const PipelineSpec& spec) {
  std::vector<TrainingSample> out;
  for (const auto& item : d.items) {
    const auto [img, pts] = left_view(item, d.schema);
    out.push_back(make_global_sample(img, pts, spec));
  }
  return out;
}

/// Reference points (left view, image coordinates) predicted by a global model.
inline std::vector<std::pair<Point2, Point2>> predict_references(const HourglassModel<float>& global, const Dataset& d,
                                                                 const PipelineSpec& spec) {
  std::vector<Image> frames;
  std::vector<SimilarityTransform> maps;
  for (const auto& item : d.items) {
    const Image img = left_view(item, d.schema).first;
    const auto g = global_frame_transform(img.height, img.width, spec.global_height, spec.global_width);
    frames.push_back(sample_frame(img, g, spec.global_height, spec.global_width));
    maps.push_back(g);
  }
  const auto pred = predict_frames(global, frames);
  std::vector<std::pair<Point2, Point2>> out;
  for (std::size_t i = 0; i < pred.size(); ++i) out.emplace_back(maps[i].apply(pred[i][0]), maps[i].apply(pred[i][1]));
  return out;
}

/// Local samples; frames come from the ground-truth pair unless `references`
/// supplies one pair per item.
inline std::vector<TrainingSample> local_training_set(const Dataset& d, const PipelineSpec& spec,
                                                      const std::vector<std::pair<Point2, Point2>>* references = nullptr) {
  std::vector<TrainingSample> out;
  for (std::size_t i = 0; i < d.items.size(); ++i) {
    const auto [img, pts] = left_view(d.items[i], d.schema);
    auto [p0, p1] = pts.pair(pts.roles.tibial_plateau);
    if (references) std::tie(p0, p1) = (*references)[i];
    out.push_back(make_local_sample(img, pts, p0, p1, spec));
  }
  return out;
}

// ---- localization -------------------------------------------------------------

struct LocalizedItem {
  std::string id;
  Side side = Side::Left;
  std::vector<Point2> points;
  double min_confidence = 1.0;
  bool low_confidence = false;
};

/// Localizes every item (any side) in parallel; results are in item order.
inline std::vector<LocalizedItem> localize_dataset(const Dataset& d, const Stage& global, const Stage& local,
                                                   const PipelineSpec& spec, int threads) {
  std::vector<LocalizedItem> out(d.items.size());
  parallel_for(d.items.size(), threads, [&](std::size_t i) {
    const auto& item = d.items[i];
    const Localization loc = localize_knee(item.image, item.row.side, global, local, spec, d.schema);
    out[i] = {item.row.id, item.row.side, loc.points, loc.min_confidence, loc.low_confidence};
  });
  return out;
}

// ---- evaluation ---------------------------------------------------------------

struct ImageEvaluation {
  std::string id;
  Side side = Side::Left;
  bool post_op = false;
  double rp2p = 0.0;
  double rp2c = 0.0;
  double fts_auto = 0.0, fts_gt = 0.0;
  double fnts_auto = 0.0, fnts_gt = 0.0;
  bool low_confidence = false;
};

/// Summary of one subset (all, pre-op or post-op).
struct SubsetEvaluation {
  std::string name;
  std::size_t n = 0;
  LocalizationErrorSummary localization;
  AgreementReport fts;
  AgreementReport fnts;
  bool has_agreement = false;  // needs at least 3 images
};

struct Evaluation {
  std::vector<ImageEvaluation> images;
  std::vector<SubsetEvaluation> subsets;  // "all", then "pre-op" / "post-op" when present
};

inline ImageEvaluation evaluate_image(const LandmarkSet& automatic, const LandmarkSet& gt, const LandmarkSchema& schema) {
  ImageEvaluation e;
  e.side = gt.side;
  e.rp2p = rp2p(automatic, gt);
  e.rp2c = rp2c(automatic, gt, schema);
  const AlignmentResult a = measure_alignment(automatic), g = measure_alignment(gt);
  e.fts_auto = a.atfa_fts;
  e.fts_gt = g.atfa_fts;
  e.fnts_auto = a.atfa_fnts;
  e.fnts_gt = g.atfa_fnts;
  return e;
}

inline SubsetEvaluation summarize_subset(const std::string& name, const std::vector<const ImageEvaluation*>& imgs) {
  SubsetEvaluation s;
  s.name = name;
  s.n = imgs.size();
  std::vector<double> p2p, p2c, fa, fg, na, ng;
  for (const auto* e : imgs) {
    p2p.push_back(e->rp2p);
    p2c.push_back(e->rp2c);
    fa.push_back(e->fts_auto);
    fg.push_back(e->fts_gt);
    na.push_back(e->fnts_auto);
    ng.push_back(e->fnts_gt);
  }
  s.localization = summarize_localization(p2p, p2c);
  if (imgs.size() >= 3) {
    s.fts = agreement(fa, fg);
    s.fnts = agreement(na, ng);
    s.has_agreement = true;
  }
  return s;
}

/// Compares automatic points against a ground-truth dataset, matched by id.
inline Evaluation evaluate(const Dataset& gt, const std::map<std::string, LocalizedItem>& automatic) {
  Evaluation ev;
  for (const auto& item : gt.items) {
    auto it = automatic.find(item.row.id);
    if (it == automatic.end()) throw Error(Errc::SchemaMismatch, "no automatic landmarks for " + item.row.id);
    const LandmarkSet a = gt.schema.make_set(it->second.points, item.row.side);
    ImageEvaluation e = evaluate_image(a, item.points, gt.schema);
    e.id = item.row.id;
    e.post_op = item.row.post_op;
    e.low_confidence = it->second.low_confidence;
    ev.images.push_back(e);
  }
  std::vector<const ImageEvaluation*> all, pre, post;
  for (const auto& e : ev.images) {
    all.push_back(&e);
    (e.post_op ? post : pre).push_back(&e);
  }
  ev.subsets.push_back(summarize_subset("all", all));
  if (!pre.empty() && !post.empty()) {
    ev.subsets.push_back(summarize_subset("pre-op", pre));
    ev.subsets.push_back(summarize_subset("post-op", post));
  }
  return ev;
}

}  // namespace ka
