#include "pod_sentry/image_io.hpp"

#include <fstream>
#include <iterator>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace pod_sentry {

namespace {

Raster from_mat(const cv::Mat& bgr) {
  Raster out(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      out.at(x, y, 0) = row[x][2];
      out.at(x, y, 1) = row[x][1];
      out.at(x, y, 2) = row[x][0];
    }
  }
  return out;
}

cv::Mat to_mat(const Raster& image) {
  cv::Mat bgr(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width(); ++x) {
      row[x] = cv::Vec3b(image.at(x, y, 2), image.at(x, y, 1), image.at(x, y, 0));
    }
  }
  return bgr;
}

}  // namespace

Raster decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw DecodeError("empty image payload");
  const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1,
                    const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat mat;
  try {
    mat = cv::imdecode(buf, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw DecodeError(std::string("cannot decode image: ") + e.what());
  }
  if (mat.empty() || mat.type() != CV_8UC3) {
    throw DecodeError("payload is not a supported raster format");
  }
  return from_mat(mat);
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_binary_file(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

Raster read_image(const std::filesystem::path& path) {
  const auto bytes = read_binary_file(path);
  try {
    return decode_image(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError("'" + path.string() + "': " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Raster& image) {
  if (image.empty()) throw ValidationError("cannot encode an empty image");
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", to_mat(image), out,
                    {cv::IMWRITE_PNG_COMPRESSION, 6})) {
    throw IoError("PNG encoding failed");
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Raster& image) {
  write_binary_file(path, encode_png(image));
}

}  // namespace pod_sentry
