#pragma once

// Normalization: square crop, bilinear resize to the training resolution,
// the matching box transform, and the seeded stratified split.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pod_sentry/annotation.hpp"
#include "pod_sentry/raster.hpp"

namespace pod_sentry {

enum class CropMode { kCenter, kCustomRect };

struct PreprocessConfig {
  int target_size = 640;
  CropMode crop_mode = CropMode::kCenter;
  double split_ratio = 0.2;
  std::uint64_t split_seed = 0;
  // Boxes whose transformed area falls below this (output px^2) are dropped.
  double min_box_area = 1.0;
  int workers = 0;  // 0 = hardware concurrency
};

// Square window in source pixels.
struct CropRect {
  int x = 0;
  int y = 0;
  int size = 0;

  friend bool operator==(const CropRect&, const CropRect&) = default;
};

// Center mode drops floor((long - short) / 2) from the leading edge of the
// long axis.
inline CropRect center_square(int width, int height) {
  if (width < 1 || height < 1) throw ValidationError("image must be non-empty");
  const int s = std::min(width, height);
  return {(width - s) / 2, (height - s) / 2, s};
}

inline void check_crop(const CropRect& r, int width, int height) {
  if (r.size < 1 || r.x < 0 || r.y < 0 || r.x + r.size > width ||
      r.y + r.size > height) {
    throw ValidationError("crop rect (" + std::to_string(r.x) + "," +
                          std::to_string(r.y) + ", size " +
                          std::to_string(r.size) + ") outside " +
                          std::to_string(width) + "x" + std::to_string(height) +
                          " image");
  }
}

inline Raster crop(const Raster& image, const CropRect& r) {
  check_crop(r, image.width(), image.height());
  if (r.x == 0 && r.y == 0 && r.size == image.width() &&
      r.size == image.height()) {
    return image;
  }
  Raster out(r.size, r.size);
  const auto src = image.pixels();
  auto dst = out.pixels();
  const std::size_t row_bytes = static_cast<std::size_t>(r.size) * Raster::kChannels;
  for (int y = 0; y < r.size; ++y) {
    const std::size_t s =
        (static_cast<std::size_t>(r.y + y) * image.width() + r.x) * Raster::kChannels;
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(s), row_bytes,
                dst.begin() + static_cast<std::ptrdiff_t>(y * row_bytes));
  }
  return out;
}

inline Raster crop_to_square(const Raster& image,
                             std::optional<CropRect> custom = std::nullopt) {
  const CropRect r = custom ? *custom : center_square(image.width(), image.height());
  return crop(image, r);
}

// Bilinear resampling with half-pixel centers and edge clamping. A square
// input already at `target` is returned unchanged.
inline Raster resize(const Raster& image, int target) {
  if (target <= 0) throw ValidationError("resize target must be positive");
  if (image.width() < 1 || image.height() < 1) {
    throw ValidationError("cannot resize an empty image");
  }
  if (image.width() == target && image.height() == target) return image;

  struct Tap {
    int lo;
    int hi;
    double frac;
  };
  auto taps = [target](int src_len) {
    std::vector<Tap> t(static_cast<std::size_t>(target));
    const double scale = static_cast<double>(src_len) / target;
    for (int i = 0; i < target; ++i) {
      double s = (i + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(src_len - 1));
      const int lo = static_cast<int>(std::floor(s));
      const int hi = std::min(lo + 1, src_len - 1);
      t[static_cast<std::size_t>(i)] = {lo, hi, s - lo};
    }
    return t;
  };
  const auto tx = taps(image.width());
  const auto ty = taps(image.height());

  Raster out(target, target);
  for (int y = 0; y < target; ++y) {
    const Tap& vy = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < target; ++x) {
      const Tap& vx = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < Raster::kChannels; ++c) {
        const double top = image.at(vx.lo, vy.lo, c) * (1.0 - vx.frac) +
                           image.at(vx.hi, vy.lo, c) * vx.frac;
        const double bot = image.at(vx.lo, vy.hi, c) * (1.0 - vx.frac) +
                           image.at(vx.hi, vy.hi, c) * vx.frac;
        const double v = top * (1.0 - vy.frac) + bot * vy.frac;
        out.at(x, y, c) =
            static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

// Crop followed by uniform scale, as applied to annotation boxes.
struct BoxTransform {
  CropRect crop;
  int target = 640;

  double scale() const { return static_cast<double>(target) / crop.size; }

  // nullopt when nothing of the box survives the crop.
  std::optional<BoundingBox> apply(const BoundingBox& b) const {
    const double x0 = std::max(b.x_min(), static_cast<double>(crop.x));
    const double y0 = std::max(b.y_min(), static_cast<double>(crop.y));
    const double x1 = std::min(b.x_max(), static_cast<double>(crop.x + crop.size));
    const double y1 = std::min(b.y_max(), static_cast<double>(crop.y + crop.size));
    if (x0 >= x1 || y0 >= y1) return std::nullopt;
    const double s = scale();
    auto map = [&](double v, int origin) {
      return std::clamp((v - origin) * s, 0.0, static_cast<double>(target));
    };
    return BoundingBox(map(x0, crop.x), map(y0, crop.y), map(x1, crop.x),
                       map(y1, crop.y));
  }
};

// ---------------------------------------------------------------------------
// Stratified split.

// Fisher-Yates over a fully specified engine so assignments are identical
// across standard libraries.
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

// Each class stratum (image label, else majority annotated class) sends
// round(ratio * n) images to validation, clamped to [1, n-1]. Images without
// any class form their own stratum and are not subject to the minimum.
inline DatasetManifest split_dataset(const DatasetManifest& m, double ratio,
                                     std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ValidationError("split ratio must lie in (0,1), got " +
                          std::to_string(ratio));
  }
  const auto broken = structural_violations(m);
  if (!broken.empty()) {
    throw ValidationError("cannot split an invalid manifest: " +
                          broken.front().message);
  }
  std::map<std::optional<ClassId>, std::vector<std::string>> strata;
  for (const auto& [id, cls] : image_classes(m)) strata[cls].push_back(id);
  for (const auto& e : m.registry.entries()) {
    const auto it = strata.find(e.id);
    const std::size_t n = it == strata.end() ? 0 : it->second.size();
    if (n < 2) {
      throw ValidationError("class '" + e.name + "' has " + std::to_string(n) +
                            " image(s); stratified split needs at least 2");
    }
  }

  std::map<std::string, Split> assignment;
  for (auto& [cls, ids] : strata) {
    std::sort(ids.begin(), ids.end());
    // Stratum-specific stream keeps one class's shuffle independent of the
    // others.
    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL *
                                static_cast<std::uint64_t>(cls ? *cls + 2 : 1)));
    seeded_shuffle(ids, rng);
    const double want = ratio * static_cast<double>(ids.size());
    auto n_val = static_cast<std::size_t>(std::llround(want));
    if (cls) n_val = std::clamp<std::size_t>(n_val, 1, ids.size() - 1);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      assignment[ids[i]] = i < n_val ? Split::kValidation : Split::kTrain;
    }
  }
  DatasetManifest out = m;
  for (auto& im : out.images) im.split = assignment.at(im.id);
  return out;
}

}  // namespace pod_sentry
