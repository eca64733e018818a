#pragma once

// Randomized cross-checks shared by the unit suites and the acceptance run.

#include <cmath>
#include <cstdio>
#include <optional>
#include <random>
#include <string>

#include "oracles.hpp"
#include "pod_sentry/matching.hpp"
#include "pod_sentry/preprocess.hpp"
#include "pod_sentry/trainlog.hpp"

namespace checks {

struct Outcome {
  bool pass = true;
  std::size_t cases = 0;
  double worst = 0.0;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

inline bool same_optional(const std::optional<double>& a, const std::optional<double>& b,
                          double tol, double& worst) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  const double d = std::abs(*a - *b);
  worst = std::max(worst, d);
  return d <= tol;
}

// evaluate() against the brute-force evaluator on random corpora.
inline Outcome evaluate_matches_oracle(std::uint64_t seed, int corpora, double tol = 1e-9) {
  Outcome o;
  std::mt19937_64 rng(seed);
  const auto thresholds = pod_sentry::coco_iou_thresholds();
  for (int c = 0; c < corpora; ++c) {
    const auto corpus = oracle::random_corpus(rng);
    const auto report = pod_sentry::evaluate(corpus.manifest, corpus.detections);
    const auto brute = oracle::brute_force_evaluate(corpus.manifest.annotations,
                                                    corpus.detections, 3, thresholds);
    ++o.cases;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      for (pod_sentry::ClassId k = 0; k < 3; ++k) {
        if (!same_optional(report.per_class.at(k).aps[t].ap, brute.ap[t].at(k), tol, o.worst)) {
          o.fail("corpus " + std::to_string(c) + " class " + std::to_string(k) +
                 " threshold " + std::to_string(thresholds[t]));
        }
      }
    }
    if (!same_optional(report.map.map_at_50, brute.map_50, tol, o.worst) ||
        !same_optional(report.map.map_50_95, brute.map_50_95, tol, o.worst)) {
      o.fail("corpus " + std::to_string(c) + " mAP");
    }
  }
  return o;
}

// Crop-and-scale of random boxes against pixel-center sampling of the output
// grid. Analytic edges must sit within one output pixel of the sampled extent.
inline Outcome box_transform_matches_raster(std::uint64_t seed, int boxes, int target) {
  Outcome o;
  std::mt19937_64 rng(seed);
  for (int i = 0; i < boxes; ++i) {
    const int w = 50 + static_cast<int>(rng() % 3951);
    const int h = 50 + static_cast<int>(rng() % 3951);
    const auto rect = pod_sentry::center_square(w, h);
    double x0 = oracle::uniform(rng, 0, w), x1 = oracle::uniform(rng, 0, w);
    double y0 = oracle::uniform(rng, 0, h), y1 = oracle::uniform(rng, 0, h);
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    const pod_sentry::BoundingBox box(x0, y0, x1, y1);
    const pod_sentry::BoxTransform tf{rect, target};
    const auto mapped = tf.apply(box);
    const auto cov = oracle::raster_box_coverage(box, rect.x, rect.y, rect.size, target);
    ++o.cases;
    char buf[200];
    if (!cov) {
      // Nothing sampled: the box either misses the crop or is thinner than a
      // pixel in output space.
      if (mapped && mapped->width() >= 1.0 && mapped->height() >= 1.0) {
        std::snprintf(buf, sizeof(buf), "box %d: raster empty but transform kept %gx%g", i,
                      mapped->width(), mapped->height());
        o.fail(buf);
      }
      continue;
    }
    if (!mapped) {
      std::snprintf(buf, sizeof(buf), "box %d: transform dropped a covered box", i);
      o.fail(buf);
      continue;
    }
    const double d = std::max({std::abs(mapped->x_min() - cov->u0),
                               std::abs(mapped->y_min() - cov->v0),
                               std::abs(mapped->x_max() - cov->u1),
                               std::abs(mapped->y_max() - cov->v1)});
    o.worst = std::max(o.worst, d);
    if (d > 1.0) {
      std::snprintf(buf, sizeof(buf), "box %d: edge off by %g px", i, d);
      o.fail(buf);
    }
  }
  return o;
}

// Training log that decays (or saturates) exponentially from each expected
// start to its expected end, with 2% multiplicative noise. flat=true holds
// every series at its start value.
inline std::vector<pod_sentry::EpochRecord> synthetic_training_log(int epochs, bool flat,
                                                                  std::uint64_t seed = 5) {
  using namespace pod_sentry;
  std::mt19937_64 rng(seed);
  const double rate = 5.0 / epochs;
  std::vector<EpochRecord> out;
  for (int e = 1; e <= epochs; ++e) {
    EpochRecord r;
    r.epoch = e;
    for (const auto& ex : default_trend_expectations()) {
      const double start = ex.start.value_or(ex.end);
      const double w = flat ? 1.0 : std::exp(-rate * (e - 1));
      double v = ex.end + (start - ex.end) * w;
      v *= 1.0 + oracle::uniform(rng, -0.02, 0.02);
      series_value(r, ex.series) = std::clamp(v, 0.0, 1.0);
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace checks
