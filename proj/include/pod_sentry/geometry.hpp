#pragma once

// Boxes, IoU, confusion counts, precision/recall curves, interpolated AP and
// mAP aggregation. Pure functions over values; no I/O.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pod_sentry/error.hpp"

namespace pod_sentry {

using ClassId = int;

enum class Convention { kPixel, kNormalized };

inline std::string_view to_string(Convention c) {
  return c == Convention::kPixel ? "pixel" : "normalized";
}

inline Convention convention_from_string(std::string_view s) {
  if (s == "pixel") return Convention::kPixel;
  if (s == "normalized") return Convention::kNormalized;
  throw ValidationError("unknown box convention '" + std::string(s) + "'");
}

// Axis-aligned rectangle in corner form. Always canonical: min <= max on both
// axes. Inverted or non-finite input is rejected, never swapped.
class BoundingBox {
 public:
  BoundingBox() = default;

  BoundingBox(double x_min, double y_min, double x_max, double y_max,
              Convention convention = Convention::kPixel)
      : x_min_(x_min),
        y_min_(y_min),
        x_max_(x_max),
        y_max_(y_max),
        convention_(convention) {
    if (!std::isfinite(x_min) || !std::isfinite(y_min) ||
        !std::isfinite(x_max) || !std::isfinite(y_max)) {
      throw ValidationError("bounding box has non-finite coordinates");
    }
    if (x_min > x_max || y_min > y_max) {
      throw ValidationError("inverted bounding box (" + std::to_string(x_min) +
                            "," + std::to_string(y_min) + "," +
                            std::to_string(x_max) + "," +
                            std::to_string(y_max) + ")");
    }
  }

  double x_min() const { return x_min_; }
  double y_min() const { return y_min_; }
  double x_max() const { return x_max_; }
  double y_max() const { return y_max_; }
  Convention convention() const { return convention_; }

  double width() const { return x_max_ - x_min_; }
  double height() const { return y_max_ - y_min_; }
  double area() const { return width() * height(); }

  // Same rectangle expressed in the other convention for an image of the
  // given pixel size.
  BoundingBox to_pixel(double image_width, double image_height) const {
    if (convention_ == Convention::kPixel) return *this;
    return {x_min_ * image_width, y_min_ * image_height, x_max_ * image_width,
            y_max_ * image_height, Convention::kPixel};
  }
  BoundingBox to_normalized(double image_width, double image_height) const {
    if (convention_ == Convention::kNormalized) return *this;
    return {x_min_ / image_width, y_min_ / image_height, x_max_ / image_width,
            y_max_ / image_height, Convention::kNormalized};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;

 private:
  double x_min_ = 0.0;
  double y_min_ = 0.0;
  double x_max_ = 0.0;
  double y_max_ = 0.0;
  Convention convention_ = Convention::kPixel;
};

// Intersection over union. Zero-area boxes give 0 against anything,
// including themselves.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  if (a.convention() != b.convention()) {
    throw ConventionMismatchError(
        "iou of boxes in different conventions; normalize first");
  }
  const double area_a = a.area();
  const double area_b = b.area();
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const double iw =
      std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min());
  const double ih =
      std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&,
                         const ConfusionCounts&) = default;
};

inline double accuracy(const ConfusionCounts& c) {
  if (c.total() == 0) {
    throw UndefinedMetricError("accuracy undefined: no predictions counted");
  }
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

// nullopt marks a zero denominator. It is never folded into 0.
struct PrecisionRecall {
  std::optional<double> precision;
  std::optional<double> recall;
};

inline PrecisionRecall precision_recall(const ConfusionCounts& c) {
  PrecisionRecall out;
  if (c.tp + c.fp > 0) {
    out.precision =
        static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  }
  if (c.tp + c.fn > 0) {
    out.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  }
  return out;
}

struct PrCurvePoint {
  double recall = 0.0;
  double precision = 0.0;
  double score_threshold = 0.0;

  friend bool operator==(const PrCurvePoint&, const PrCurvePoint&) = default;
};

inline constexpr int kDefaultInterpolationPoints = 101;

// Mean of the interpolated precision at `interpolation_points` equally spaced
// recall levels 0, 1/(P-1), ..., 1. Interpolated precision at r is the max
// precision over curve points with recall >= r, or 0 if there are none.
inline double average_precision(
    std::span<const PrCurvePoint> curve,
    int interpolation_points = kDefaultInterpolationPoints) {
  if (interpolation_points < 2) {
    throw ValidationError("interpolation_points must be >= 2");
  }
  if (curve.empty()) {
    throw ValidationError("average_precision of an empty curve");
  }
  std::vector<PrCurvePoint> pts(curve.begin(), curve.end());
  std::sort(pts.begin(), pts.end(),
            [](const PrCurvePoint& a, const PrCurvePoint& b) {
              return a.recall < b.recall;
            });
  // Suffix max builds the monotone precision envelope.
  std::vector<double> envelope(pts.size());
  double running = 0.0;
  for (std::size_t i = pts.size(); i-- > 0;) {
    running = std::max(running, pts[i].precision);
    envelope[i] = running;
  }
  const int steps = interpolation_points - 1;
  double sum = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double level = static_cast<double>(i) / static_cast<double>(steps);
    auto it = std::lower_bound(
        pts.begin(), pts.end(), level,
        [](const PrCurvePoint& p, double r) { return p.recall < r; });
    if (it != pts.end()) {
      sum += envelope[static_cast<std::size_t>(it - pts.begin())];
    }
  }
  return sum / static_cast<double>(interpolation_points);
}

struct ApResult {
  ClassId class_id = 0;
  double iou_threshold = 0.5;
  // nullopt when the class has no ground truth at all.
  std::optional<double> ap;
  std::vector<PrCurvePoint> curve;
};

// Default IoU sweep 0.50, 0.55, ..., 0.95. Built from integers so every value
// is the correctly rounded double of its decimal.
inline std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int pct = 50; pct <= 95; pct += 5) t.push_back(pct / 100.0);
  return t;
}

inline bool same_threshold(double a, double b) {
  return std::abs(a - b) < 1e-9;
}

// AP of each class at one IoU threshold. nullopt entries are excluded from
// class means.
using ClassApTable = std::map<ClassId, std::optional<double>>;
// Indexed like the thresholds list passed alongside it.
using ThresholdApTable = std::vector<ClassApTable>;

struct MapResult {
  std::vector<double> thresholds;
  // Class-mean AP for each threshold; nullopt when no class is defined.
  std::vector<std::optional<double>> class_mean;
  std::optional<double> map_at_50;
  std::optional<double> map_50_95;
};

inline std::optional<double> class_mean_ap(const ClassApTable& table) {
  double sum = 0.0;
  int n = 0;
  for (const auto& [cls, ap] : table) {
    if (ap) {
      sum += *ap;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

// Aggregates per-threshold per-class APs. map_50_95 is the mean over exactly
// the given thresholds of the class-mean AP; map_at_50 is the class mean at
// 0.5, which must be present when `require_map_at_50` is set.
inline MapResult mean_ap(const ThresholdApTable& table,
                         std::span<const double> thresholds,
                         bool require_map_at_50 = true) {
  if (thresholds.empty()) throw ValidationError("no IoU thresholds given");
  if (table.size() != thresholds.size()) {
    throw ValidationError("AP table does not match the threshold list");
  }
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > thresholds[i - 1])) {
      throw ValidationError("IoU thresholds must be strictly increasing");
    }
  }
  bool any_class = false;
  for (const auto& row : table) any_class = any_class || !row.empty();
  if (!any_class) throw ValidationError("mean_ap needs at least one class");

  MapResult out;
  out.thresholds.assign(thresholds.begin(), thresholds.end());
  double sum = 0.0;
  bool all_defined = true;
  for (std::size_t i = 0; i < table.size(); ++i) {
    auto m = class_mean_ap(table[i]);
    out.class_mean.push_back(m);
    if (m) {
      sum += *m;
    } else {
      all_defined = false;
    }
    if (same_threshold(thresholds[i], 0.5)) out.map_at_50 = m;
  }
  const bool has_50 = std::any_of(thresholds.begin(), thresholds.end(),
                                  [](double t) { return same_threshold(t, 0.5); });
  if (require_map_at_50 && !has_50) {
    throw ValidationError("threshold 0.5 missing; map_at_50 unavailable");
  }
  if (all_defined) out.map_50_95 = sum / static_cast<double>(table.size());
  return out;
}

}  // namespace pod_sentry
