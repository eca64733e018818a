#pragma once

// Pluggable source of detections for an image: replay from a detections
// file, a seeded mock, or a remote service speaking the detection
// interchange format.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pod_sentry/annotation.hpp"
#include "pod_sentry/raster.hpp"

namespace pod_sentry {

enum class BackendKind { kFile, kMock, kExternal };

struct BackendDescriptor {
  BackendKind kind = BackendKind::kMock;
  // file: "path"; mock: "seed"; external: "endpoint" (http://host:port/path),
  // optional "timeout_s".
  std::map<std::string, std::string> parameters;

  void validate() const;

  // "file:<path>", "mock:<seed>" or "external:<url>".
  static BackendDescriptor parse(const std::string& spec);
  static BackendDescriptor from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  friend bool operator==(const BackendDescriptor&, const BackendDescriptor&) = default;
};

std::string to_string(BackendKind kind);

class DetectionBackend {
 public:
  virtual ~DetectionBackend() = default;

  // Output always satisfies DetectionItem invariants; violations throw.
  virtual std::vector<DetectionItem> detect(const std::string& image_id,
                                            const Raster& image) const = 0;
};

std::unique_ptr<DetectionBackend> make_backend(const BackendDescriptor& descriptor,
                                               const ClassRegistry& registry);

// Mock geometry: 1-3 pods per image, width 15-35% of the image, height
// 1.2-1.8x the width (cocoa pods are elongated), one detection per class per
// pod with a dominant class scoring 0.5-1.0 and the others 0-0.3.
struct MockBias {
  double min_width_fraction = 0.15;
  double max_width_fraction = 0.35;
  double min_aspect = 1.2;
  double max_aspect = 1.8;
};

}  // namespace pod_sentry
