#pragma once

// Canonical dataset model plus the YOLO label-line format. Everything in
// memory uses 0-based pixel corners; formats convert at the boundary.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pod_sentry/error.hpp"
#include "pod_sentry/geometry.hpp"
#include "pod_sentry/registry.hpp"

namespace pod_sentry {

struct GroundTruthItem {
  std::string image_id;
  ClassId class_id = 0;
  BoundingBox box;

  friend bool operator==(const GroundTruthItem&,
                         const GroundTruthItem&) = default;
};

struct DetectionItem {
  std::string image_id;
  ClassId class_id = 0;
  BoundingBox box;
  double score = 0.0;

  friend bool operator==(const DetectionItem&, const DetectionItem&) = default;
};

inline void check_score(double score) {
  if (!std::isfinite(score) || score < 0.0 || score > 1.0) {
    throw ValidationError("detection score " + std::to_string(score) +
                          " outside [0,1]");
  }
}

enum class Split { kTrain, kValidation };

inline std::string_view to_string(Split s) {
  return s == Split::kTrain ? "train" : "validation";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "validation") return Split::kValidation;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

struct ImageRecord {
  std::string id;
  std::string path;
  int width = 0;
  int height = 0;
  std::optional<Split> split;
  // Image-level class, e.g. from a per-class directory layout.
  std::optional<ClassId> label;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct DatasetManifest {
  std::vector<ImageRecord> images;
  ClassRegistry registry = ClassRegistry::cocoa_default();
  std::vector<GroundTruthItem> annotations;

  const ImageRecord* find_image(std::string_view id) const {
    for (const auto& im : images) {
      if (im.id == id) return &im;
    }
    return nullptr;
  }

  friend bool operator==(const DatasetManifest&,
                         const DatasetManifest&) = default;
};

// ---------------------------------------------------------------------------
// YOLO label lines: "class_id cx cy w h", normalized center form.

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i])))
      ++i;
    const std::size_t b = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i])))
      ++i;
    if (i > b) out.push_back(line.substr(b, i - b));
  }
  return out;
}

inline std::optional<double> to_double(std::string_view s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

inline std::optional<long long> to_int(std::string_view s) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t b = 0;
  while (b <= text.size()) {
    std::size_t e = text.find('\n', b);
    if (e == std::string_view::npos) e = text.size();
    std::string_view line = text.substr(b, e - b);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    if (e == text.size()) break;
    b = e + 1;
  }
  return out;
}

}  // namespace detail

inline constexpr double kNormalizedTolerance = 1e-6;

inline std::vector<GroundTruthItem> parse_yolo_labels(
    std::string_view label_text, const std::string& image_id, int image_width,
    int image_height, const ClassRegistry& registry) {
  if (image_width <= 0 || image_height <= 0) {
    throw ValidationError("image dimensions must be positive");
  }
  std::vector<GroundTruthItem> items;
  const auto lines = detail::lines_of(label_text);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::string where = "line " + std::to_string(n + 1);
    const auto fields = detail::split_ws(lines[n]);
    if (fields.empty()) continue;
    if (fields.size() != 5) {
      throw ParseError(where, "expected 5 fields, found " +
                                  std::to_string(fields.size()));
    }
    const auto cls = detail::to_int(fields[0]);
    if (!cls) {
      throw ParseError(where, "class id '" + std::string(fields[0]) +
                                  "' is not an integer");
    }
    double v[4];
    for (int k = 0; k < 4; ++k) {
      auto d = detail::to_double(fields[k + 1]);
      if (!d) {
        throw ParseError(where, "field " + std::to_string(k + 2) + " '" +
                                    std::string(fields[k + 1]) +
                                    "' is not a number");
      }
      v[k] = *d;
    }
    if (!registry.contains(static_cast<ClassId>(*cls)) ||
        *cls > std::numeric_limits<ClassId>::max()) {
      throw ParseError(where, "unknown class id " + std::to_string(*cls));
    }
    const double cx = v[0], cy = v[1], w = v[2], h = v[3];
    const double tol = kNormalizedTolerance;
    if (w < -tol || h < -tol || cx - w / 2 < -tol || cy - h / 2 < -tol ||
        cx + w / 2 > 1 + tol || cy + h / 2 > 1 + tol) {
      throw ParseError(where, "box exceeds the normalized [0,1] range");
    }
    const double x0 = std::clamp(cx - w / 2, 0.0, 1.0);
    const double y0 = std::clamp(cy - h / 2, 0.0, 1.0);
    const double x1 = std::clamp(cx + w / 2, x0, 1.0);
    const double y1 = std::clamp(cy + h / 2, y0, 1.0);
    items.push_back({image_id, static_cast<ClassId>(*cls),
                     BoundingBox(x0 * image_width, y0 * image_height,
                                 x1 * image_width, y1 * image_height)});
  }
  return items;
}

inline std::string emit_yolo_labels(const std::vector<GroundTruthItem>& items,
                                    int image_width, int image_height) {
  if (image_width <= 0 || image_height <= 0) {
    throw ValidationError("image dimensions must be positive");
  }
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (it.image_id != items.front().image_id) {
      throw ValidationError("emit_yolo_labels: items span several images");
    }
    const BoundingBox b = it.box.to_pixel(image_width, image_height);
    const double tol_x = kNormalizedTolerance * image_width;
    const double tol_y = kNormalizedTolerance * image_height;
    if (b.x_min() < -tol_x || b.y_min() < -tol_y ||
        b.x_max() > image_width + tol_x || b.y_max() > image_height + tol_y) {
      throw ValidationError("item " + std::to_string(i) +
                            " box lies outside the image");
    }
    const double cx = (b.x_min() + b.x_max()) / 2.0 / image_width;
    const double cy = (b.y_min() + b.y_max()) / 2.0 / image_height;
    const double w = b.width() / image_width;
    const double h = b.height() / image_height;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d %.6f %.6f %.6f %.6f\n", it.class_id,
                  cx, cy, w, h);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest integrity.

inline std::uint64_t steps_per_epoch(std::uint64_t images, std::uint64_t batch) {
  if (batch == 0) throw ValidationError("batch size must be positive");
  return (images + batch - 1) / batch;
}

// Image-level class: the explicit label when present, otherwise the most
// frequent annotated class (lower id wins ties). nullopt for images with
// neither.
inline std::map<std::string, std::optional<ClassId>> image_classes(
    const DatasetManifest& m) {
  std::map<std::string, std::map<ClassId, int>> votes;
  for (const auto& a : m.annotations) ++votes[a.image_id][a.class_id];
  std::map<std::string, std::optional<ClassId>> out;
  for (const auto& im : m.images) {
    if (im.label) {
      out[im.id] = im.label;
      continue;
    }
    std::optional<ClassId> best;
    int best_n = 0;
    for (const auto& [cls, n] : votes[im.id]) {
      if (n > best_n) {
        best = cls;
        best_n = n;
      }
    }
    out[im.id] = best;
  }
  return out;
}

struct Violation {
  std::string kind;
  std::string subject;
  std::string message;
};

struct DatasetStats {
  std::size_t images = 0;
  std::size_t train_images = 0;
  std::size_t validation_images = 0;
  std::size_t unassigned_images = 0;
  std::size_t annotations = 0;
  std::map<ClassId, std::size_t> annotations_per_class;
  std::map<ClassId, std::size_t> images_per_class;
  std::optional<std::uint64_t> batch_size;
  std::optional<std::uint64_t> steps_per_epoch;
};

struct ManifestReport {
  std::vector<Violation> violations;
  DatasetStats stats;

  bool ok() const { return violations.empty(); }
};

inline DatasetStats dataset_stats(const DatasetManifest& m,
                                  std::optional<std::uint64_t> batch = {}) {
  DatasetStats s;
  s.images = m.images.size();
  s.annotations = m.annotations.size();
  for (const auto& im : m.images) {
    if (!im.split) {
      ++s.unassigned_images;
    } else if (*im.split == Split::kTrain) {
      ++s.train_images;
    } else {
      ++s.validation_images;
    }
  }
  for (const auto& e : m.registry.entries()) {
    s.annotations_per_class[e.id] = 0;
    s.images_per_class[e.id] = 0;
  }
  for (const auto& a : m.annotations) ++s.annotations_per_class[a.class_id];
  for (const auto& [id, cls] : image_classes(m)) {
    if (cls) ++s.images_per_class[*cls];
  }
  if (batch) {
    s.batch_size = batch;
    s.steps_per_epoch = steps_per_epoch(s.train_images, *batch);
  }
  return s;
}

// Structural checks only: dimensions, duplicate ids, dangling references,
// unknown classes and boxes outside their image.
inline std::vector<Violation> structural_violations(const DatasetManifest& m) {
  std::vector<Violation> out;
  std::set<std::string> ids;
  for (const auto& im : m.images) {
    if (!ids.insert(im.id).second) {
      out.push_back({"duplicate_image_id", im.id,
                     "image id '" + im.id + "' appears more than once"});
    }
    if (im.width <= 0 || im.height <= 0) {
      out.push_back({"bad_dimensions", im.id,
                     "image '" + im.id + "' has non-positive dimensions"});
    }
    if (im.label && !m.registry.contains(*im.label)) {
      out.push_back({"unknown_class", im.id,
                     "image '" + im.id + "' label " +
                         std::to_string(*im.label) + " is not registered"});
    }
  }
  for (std::size_t i = 0; i < m.annotations.size(); ++i) {
    const auto& a = m.annotations[i];
    const std::string subject = "annotation " + std::to_string(i);
    if (!m.registry.contains(a.class_id)) {
      out.push_back({"unknown_class", subject,
                     subject + " has unregistered class id " +
                         std::to_string(a.class_id)});
    }
    const ImageRecord* im = m.find_image(a.image_id);
    if (im == nullptr) {
      out.push_back({"dangling_reference", subject,
                     subject + " references absent image '" + a.image_id +
                         "'"});
      continue;
    }
    if (im->width <= 0 || im->height <= 0) continue;
    const BoundingBox b = a.box.to_pixel(im->width, im->height);
    const double tx = kNormalizedTolerance * im->width;
    const double ty = kNormalizedTolerance * im->height;
    if (b.x_min() < -tx || b.y_min() < -ty || b.x_max() > im->width + tx ||
        b.y_max() > im->height + ty) {
      out.push_back({"out_of_bounds", subject,
                     subject + " box exceeds image '" + im->id + "' (" +
                         std::to_string(im->width) + "x" +
                         std::to_string(im->height) + ")"});
    }
  }
  return out;
}

inline ManifestReport validate_manifest(
    const DatasetManifest& m, std::optional<std::uint64_t> batch = {}) {
  ManifestReport r;
  r.violations = structural_violations(m);
  r.stats = dataset_stats(m, batch);
  if (r.stats.train_images == 0) {
    r.violations.push_back(
        {"empty_split", "train", "no images assigned to the train split"});
  }
  if (r.stats.validation_images == 0) {
    r.violations.push_back({"empty_split", "validation",
                            "no images assigned to the validation split"});
  }
  return r;
}

}  // namespace pod_sentry
