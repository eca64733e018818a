#pragma once

// Batch normalization over a manifest: crop, resize, write PNG, transform
// annotations, and keep a per-image processing log.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pod_sentry/annotation.hpp"
#include "pod_sentry/preprocess.hpp"

namespace pod_sentry {

inline constexpr const char* kCropsSchema = "pod-sentry/crops@1";
inline constexpr const char* kPreprocessLogSchema = "pod-sentry/preprocess-log@1";

using CropSidecar = std::map<std::string, CropRect>;

CropSidecar crops_from_json(const nlohmann::json& doc);
nlohmann::json crops_to_json(const CropSidecar& crops);

struct PipelineRecord {
  std::string image_id;
  std::string source_path;
  std::string output_path;
  std::optional<CropRect> crop;
  double scale = 0.0;
  std::size_t dropped_annotations = 0;
  std::vector<std::string> warnings;
  std::optional<std::string> error;
};

struct PipelineResult {
  DatasetManifest manifest;  // successfully processed images only
  std::vector<PipelineRecord> log;  // input order
  std::size_t errors = 0;

  bool ok() const { return errors == 0; }
  nlohmann::json log_json(const PreprocessConfig& config) const;
};

// Relative image paths resolve against `source_root`; output images go to
// `output_dir/images/<id>.png` and are recorded relative to `output_dir`.
// Per-image failures are logged and skipped. Custom crop mode requires an
// entry in `crops` for every image.
PipelineResult run_pipeline(const DatasetManifest& manifest,
                            const PreprocessConfig& config,
                            const std::filesystem::path& source_root,
                            const std::filesystem::path& output_dir,
                            const CropSidecar& crops = {});

// Writes manifest.json and preprocess_log.json into output_dir after
// run_pipeline.
PipelineResult run_pipeline_to_disk(const DatasetManifest& manifest,
                                    const PreprocessConfig& config,
                                    const std::filesystem::path& source_root,
                                    const std::filesystem::path& output_dir,
                                    const CropSidecar& crops = {});

}  // namespace pod_sentry
