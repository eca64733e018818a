#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pod_sentry/error.hpp"

namespace pod_sentry {

// Interleaved 8-bit RGB image, row-major.
class Raster {
 public:
  static constexpr int kChannels = 3;

  Raster() = default;
  Raster(int width, int height, std::uint8_t fill = 0)
      : width_(width), height_(height) {
    if (width < 0 || height < 0) throw ValidationError("negative raster size");
    pixels_.assign(static_cast<std::size_t>(width) * height * kChannels, fill);
  }
  Raster(int width, int height, std::vector<std::uint8_t> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (width < 0 || height < 0 ||
        pixels_.size() != static_cast<std::size_t>(width) * height * kChannels) {
      throw ValidationError("raster buffer does not match its dimensions");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return kChannels; }
  bool empty() const { return pixels_.empty(); }

  std::span<const std::uint8_t> pixels() const { return pixels_; }
  std::span<std::uint8_t> pixels() { return pixels_; }

  std::uint8_t at(int x, int y, int c) const {
    return pixels_[index(x, y, c)];
  }
  std::uint8_t& at(int x, int y, int c) { return pixels_[index(x, y, c)]; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

}  // namespace pod_sentry
