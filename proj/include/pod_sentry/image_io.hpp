#pragma once

// Raster decoding and PNG encoding. Decoding honors the stored EXIF
// orientation tag; output is always 8-bit RGB.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pod_sentry/raster.hpp"

namespace pod_sentry {

// Bytes that are not a supported raster format.
class DecodeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

Raster decode_image(std::span<const std::uint8_t> bytes);

// IoError when the file cannot be read, DecodeError when it is not an image.
Raster read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Raster& image);

void write_png(const std::filesystem::path& path, const Raster& image);

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);

void write_binary_file(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes);

}  // namespace pod_sentry
