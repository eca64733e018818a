#pragma once

// Detection-to-ground-truth matching and the dataset evaluation report.
//
// Matching is greedy and per class: detections are visited by descending
// score (ties: ascending x_min, then y_min), and each takes the still
// unmatched ground truth with the highest IoU at or above the threshold
// (ties: first ground truth in input order). TN is always 0 here.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "pod_sentry/annotation.hpp"
#include "pod_sentry/geometry.hpp"

namespace pod_sentry {

// Total order used everywhere detections are ranked.
inline bool detection_before(const DetectionItem& a, const DetectionItem& b) {
  if (a.score != b.score) return a.score > b.score;
  const auto& ba = a.box;
  const auto& bb = b.box;
  const auto ka = std::make_tuple(ba.x_min(), ba.y_min(), ba.x_max(),
                                  ba.y_max(), a.class_id);
  const auto kb = std::make_tuple(bb.x_min(), bb.y_min(), bb.x_max(),
                                  bb.y_max(), b.class_id);
  if (ka != kb) return ka < kb;
  return a.image_id < b.image_id;
}

struct MatchResult {
  DetectionItem detection;
  std::optional<std::size_t> gt_index;  // into the gts argument

  bool true_positive() const { return gt_index.has_value(); }
};

// Single image, single class. Results come back in processing order.
inline std::vector<MatchResult> match_detections(
    const std::vector<GroundTruthItem>& gts,
    const std::vector<DetectionItem>& dets, double iou_threshold) {
  std::vector<DetectionItem> order = dets;
  std::sort(order.begin(), order.end(), detection_before);
  std::vector<bool> taken(gts.size(), false);
  std::vector<MatchResult> out;
  out.reserve(order.size());
  for (auto& d : order) {
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(d.box, gts[g].box);
      if (v >= iou_threshold && v > best_iou) {
        best = g;
        best_iou = v;
      }
    }
    if (best) taken[*best] = true;
    out.push_back({std::move(d), best});
  }
  return out;
}

inline ConfusionCounts counts_from_matches(const std::vector<MatchResult>& m,
                                           std::size_t gt_count) {
  ConfusionCounts c;
  for (const auto& r : m) {
    if (r.true_positive()) {
      ++c.tp;
    } else {
      ++c.fp;
    }
  }
  c.fn = gt_count - c.tp;
  return c;
}

namespace detail {

struct ClassSlice {
  std::map<std::string, std::vector<GroundTruthItem>> gts;
  std::map<std::string, std::vector<DetectionItem>> dets;
  std::size_t gt_count = 0;
};

inline ClassSlice slice_class(const std::vector<GroundTruthItem>& gts,
                              const std::vector<DetectionItem>& dets,
                              ClassId class_id) {
  ClassSlice s;
  for (const auto& g : gts) {
    if (g.class_id != class_id) continue;
    s.gts[g.image_id].push_back(g);
    ++s.gt_count;
  }
  for (const auto& d : dets) {
    if (d.class_id == class_id) s.dets[d.image_id].push_back(d);
  }
  return s;
}

inline std::vector<MatchResult> match_slice(const ClassSlice& s,
                                            double iou_threshold) {
  static const std::vector<GroundTruthItem> kNone;
  std::vector<MatchResult> all;
  for (const auto& [image, dets] : s.dets) {
    auto it = s.gts.find(image);
    auto m = match_detections(it == s.gts.end() ? kNone : it->second, dets,
                              iou_threshold);
    all.insert(all.end(), std::make_move_iterator(m.begin()),
               std::make_move_iterator(m.end()));
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const MatchResult& a, const MatchResult& b) {
                     return detection_before(a.detection, b.detection);
                   });
  return all;
}

inline std::vector<PrCurvePoint> sweep(const std::vector<MatchResult>& ranked,
                                       std::size_t gt_count) {
  std::vector<PrCurvePoint> curve;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i].true_positive()) {
      ++tp;
    } else {
      ++fp;
    }
    const bool group_end = i + 1 == ranked.size() ||
                           ranked[i + 1].detection.score != ranked[i].detection.score;
    if (!group_end) continue;
    curve.push_back({static_cast<double>(tp) / static_cast<double>(gt_count),
                     static_cast<double>(tp) / static_cast<double>(tp + fp),
                     ranked[i].detection.score});
  }
  return curve;
}

}  // namespace detail

// Dataset-wide curve for one class: one point per distinct detection score,
// in descending score order. nullopt when the class has no ground truth.
inline std::optional<std::vector<PrCurvePoint>> pr_curve(
    const std::vector<GroundTruthItem>& gts,
    const std::vector<DetectionItem>& dets, ClassId class_id,
    double iou_threshold) {
  const auto slice = detail::slice_class(gts, dets, class_id);
  if (slice.gt_count == 0) return std::nullopt;
  return detail::sweep(detail::match_slice(slice, iou_threshold),
                       slice.gt_count);
}

// AP of a class curve; an empty curve (no detections) scores 0.
inline std::optional<double> curve_ap(
    const std::optional<std::vector<PrCurvePoint>>& curve,
    int interpolation_points) {
  if (!curve) return std::nullopt;
  if (curve->empty()) return 0.0;
  return average_precision(*curve, interpolation_points);
}

// ---------------------------------------------------------------------------

struct EvalConfig {
  std::vector<double> iou_thresholds = coco_iou_thresholds();
  int interpolation_points = kDefaultInterpolationPoints;
  double score_floor = 0.0;
  // Restrict to one split; nullopt evaluates every image.
  std::optional<Split> split = Split::kValidation;

  void validate() const {
    if (iou_thresholds.empty()) throw ValidationError("no IoU thresholds");
    for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
      const double t = iou_thresholds[i];
      if (!(t > 0.0 && t <= 1.0)) {
        throw ValidationError("IoU threshold " + std::to_string(t) +
                              " outside (0,1]");
      }
      if (i > 0 && !(t > iou_thresholds[i - 1])) {
        throw ValidationError("IoU thresholds must be strictly increasing");
      }
    }
    if (interpolation_points < 2) {
      throw ValidationError("interpolation_points must be >= 2");
    }
  }
};

struct ClassReport {
  ClassId class_id = 0;
  std::size_t gt_count = 0;
  std::size_t detection_count = 0;
  std::vector<ApResult> aps;          // one per configured threshold
  ConfusionCounts counts_at_50;       // tn is always 0
};

struct EvaluationReport {
  ClassRegistry registry;
  EvalConfig config;
  std::map<ClassId, ClassReport> per_class;
  MapResult map;
  std::size_t images = 0;
  std::size_t ground_truths = 0;
  std::size_t detections = 0;
};

inline EvaluationReport evaluate(const DatasetManifest& manifest,
                                 const std::vector<DetectionItem>& detections,
                                 const EvalConfig& config = {}) {
  config.validate();
  std::map<std::string, const ImageRecord*> in_scope;
  for (const auto& im : manifest.images) {
    if (!config.split || im.split == config.split) in_scope[im.id] = &im;
  }

  std::vector<GroundTruthItem> gts;
  for (const auto& g : manifest.annotations) {
    if (in_scope.count(g.image_id)) gts.push_back(g);
  }
  std::vector<DetectionItem> dets;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto& d = detections[i];
    const ImageRecord* im = manifest.find_image(d.image_id);
    if (im == nullptr) {
      throw ValidationError("detection " + std::to_string(i) +
                            " references unknown image '" + d.image_id + "'");
    }
    if (!manifest.registry.contains(d.class_id)) {
      throw UnknownClassError("detection " + std::to_string(i) +
                              " has unknown class id " +
                              std::to_string(d.class_id));
    }
    check_score(d.score);
    if (!in_scope.count(d.image_id) || d.score < config.score_floor) continue;
    DetectionItem px = d;
    px.box = d.box.to_pixel(im->width, im->height);
    dets.push_back(std::move(px));
  }

  EvaluationReport r;
  r.registry = manifest.registry;
  r.config = config;
  r.images = in_scope.size();
  r.ground_truths = gts.size();
  r.detections = dets.size();

  ThresholdApTable table(config.iou_thresholds.size());
  for (const auto& e : manifest.registry.entries()) {
    const auto slice = detail::slice_class(gts, dets, e.id);
    ClassReport cr;
    cr.class_id = e.id;
    cr.gt_count = slice.gt_count;
    for (const auto& [img, v] : slice.dets) cr.detection_count += v.size();
    for (std::size_t t = 0; t < config.iou_thresholds.size(); ++t) {
      const double thr = config.iou_thresholds[t];
      ApResult ap;
      ap.class_id = e.id;
      ap.iou_threshold = thr;
      if (slice.gt_count > 0) {
        ap.curve = detail::sweep(detail::match_slice(slice, thr), slice.gt_count);
        ap.ap = ap.curve.empty()
                    ? 0.0
                    : average_precision(ap.curve, config.interpolation_points);
      }
      table[t][e.id] = ap.ap;
      cr.aps.push_back(std::move(ap));
    }
    cr.counts_at_50 = counts_from_matches(detail::match_slice(slice, 0.5),
                                          slice.gt_count);
    r.per_class[e.id] = std::move(cr);
  }
  const bool has_50 = std::any_of(
      config.iou_thresholds.begin(), config.iou_thresholds.end(),
      [](double t) { return same_threshold(t, 0.5); });
  r.map = mean_ap(table, config.iou_thresholds, has_50);
  return r;
}

// ---------------------------------------------------------------------------

inline constexpr const char* kEvalSchema = "pod-sentry/eval@1";

namespace detail {
inline nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}
inline nlohmann::json counts_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}};
}
}  // namespace detail

inline nlohmann::json report_to_json(const EvaluationReport& r) {
  using nlohmann::json;
  json per_class = json::array();
  json counts = json::object();
  for (const auto& [id, cr] : r.per_class) {
    json aps = json::array();
    json curve_50 = json::array();
    for (const auto& ap : cr.aps) {
      aps.push_back({{"iou_threshold", ap.iou_threshold},
                     {"ap", detail::opt_json(ap.ap)}});
      if (same_threshold(ap.iou_threshold, 0.5)) {
        for (const auto& p : ap.curve) {
          curve_50.push_back({{"recall", p.recall},
                              {"precision", p.precision},
                              {"score_threshold", p.score_threshold}});
        }
      }
    }
    const auto pr = precision_recall(cr.counts_at_50);
    const std::string& name = r.registry.name(id);
    per_class.push_back({{"class_id", id},
                         {"name", name},
                         {"ground_truths", cr.gt_count},
                         {"detections", cr.detection_count},
                         {"aps", std::move(aps)},
                         {"curve_50", std::move(curve_50)},
                         {"precision_50", detail::opt_json(pr.precision)},
                         {"recall_50", detail::opt_json(pr.recall)}});
    counts[name] = detail::counts_json(cr.counts_at_50);
  }
  json class_mean = json::array();
  for (std::size_t i = 0; i < r.map.thresholds.size(); ++i) {
    class_mean.push_back({{"iou_threshold", r.map.thresholds[i]},
                          {"class_mean_ap", detail::opt_json(r.map.class_mean[i])}});
  }
  json split = r.config.split ? json(std::string(to_string(*r.config.split)))
                              : json("all");
  return {{"schema", kEvalSchema},
          {"per_class", std::move(per_class)},
          {"class_mean_by_threshold", std::move(class_mean)},
          {"map_50", detail::opt_json(r.map.map_at_50)},
          {"map_50_95", detail::opt_json(r.map.map_50_95)},
          {"counts", std::move(counts)},
          {"dataset",
           {{"images", r.images},
            {"ground_truths", r.ground_truths},
            {"detections", r.detections}}},
          {"config",
           {{"iou_thresholds", r.config.iou_thresholds},
            {"interpolation_points", r.config.interpolation_points},
            {"score_floor", r.config.score_floor},
            {"split", std::move(split)}}}};
}

}  // namespace pod_sentry
