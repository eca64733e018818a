#include "pod_sentry/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include "pod_sentry/image_io.hpp"
#include "pod_sentry/interchange.hpp"

namespace pod_sentry {

namespace fs = std::filesystem;

CropSidecar crops_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("schema", "") != kCropsSchema) {
    throw ParseError("schema", std::string("expected schema '") + kCropsSchema + "'");
  }
  if (!doc.contains("crops") || !doc["crops"].is_array()) {
    throw ParseError("crops", "missing crops array");
  }
  CropSidecar out;
  const auto& arr = doc["crops"];
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& c = arr[i];
    const std::string where = "crops[" + std::to_string(i) + "]";
    try {
      const int w = c.at("width").get<int>();
      const int h = c.at("height").get<int>();
      if (w != h) throw ParseError(where, "crop rectangle must be square");
      out[c.at("image_id").get<std::string>()] =
          CropRect{c.at("x").get<int>(), c.at("y").get<int>(), w};
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where, e.what());
    }
  }
  return out;
}

nlohmann::json crops_to_json(const CropSidecar& crops) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [id, r] : crops) {
    arr.push_back({{"image_id", id},
                   {"x", r.x},
                   {"y", r.y},
                   {"width", r.size},
                   {"height", r.size}});
  }
  return {{"schema", kCropsSchema}, {"crops", std::move(arr)}};
}

nlohmann::json PipelineResult::log_json(const PreprocessConfig& config) const {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : log) {
    nlohmann::json j{{"image_id", r.image_id},
                     {"source", r.source_path},
                     {"output", r.output_path},
                     {"scale", r.scale},
                     {"dropped_annotations", r.dropped_annotations},
                     {"warnings", r.warnings}};
    j["crop"] = r.crop ? nlohmann::json{{"x", r.crop->x},
                                        {"y", r.crop->y},
                                        {"size", r.crop->size}}
                       : nlohmann::json(nullptr);
    j["error"] = r.error ? nlohmann::json(*r.error) : nlohmann::json(nullptr);
    records.push_back(std::move(j));
  }
  return {{"schema", kPreprocessLogSchema},
          {"resampling", "bilinear"},
          {"target_size", config.target_size},
          {"crop_mode", config.crop_mode == CropMode::kCenter ? "center" : "custom-rect"},
          {"min_box_area", config.min_box_area},
          {"errors", errors},
          {"records", std::move(records)}};
}

namespace {

struct ImageOutcome {
  PipelineRecord record;
  std::optional<ImageRecord> image;
  std::vector<GroundTruthItem> annotations;
};

ImageOutcome process_one(const ImageRecord& im,
                         const std::vector<const GroundTruthItem*>& anns,
                         const PreprocessConfig& config,
                         const fs::path& source_root, const fs::path& output_dir,
                         const CropSidecar& crops) {
  ImageOutcome out;
  auto& rec = out.record;
  rec.image_id = im.id;
  rec.source_path = im.path;
  try {
    fs::path src = im.path;
    if (src.is_relative()) src = source_root / src;
    const Raster raw = read_image(src);

    std::optional<CropRect> custom;
    if (config.crop_mode == CropMode::kCustomRect) {
      auto it = crops.find(im.id);
      if (it == crops.end()) {
        throw ValidationError("no crop rectangle for image '" + im.id + "'");
      }
      custom = it->second;
    }
    const CropRect rect = custom ? *custom : center_square(raw.width(), raw.height());
    check_crop(rect, raw.width(), raw.height());
    rec.crop = rect;
    const Raster processed = resize(crop(raw, rect), config.target_size);

    const BoxTransform tf{rect, config.target_size};
    rec.scale = tf.scale();
    for (const auto* a : anns) {
      auto mapped = tf.apply(a->box.to_pixel(raw.width(), raw.height()));
      if (!mapped || mapped->area() < config.min_box_area) {
        ++rec.dropped_annotations;
        rec.warnings.push_back("dropped annotation of class " +
                               std::to_string(a->class_id) +
                               (mapped ? ": area below minimum" : ": outside crop"));
        continue;
      }
      out.annotations.push_back({im.id, a->class_id, *mapped});
    }

    const fs::path rel = fs::path("images") / (im.id + ".png");
    write_png(output_dir / rel, processed);
    rec.output_path = rel.generic_string();

    ImageRecord o = im;
    o.path = rec.output_path;
    o.width = config.target_size;
    o.height = config.target_size;
    out.image = std::move(o);
  } catch (const Error& e) {
    rec.error = e.what();
    out.annotations.clear();
  }
  return out;
}

}  // namespace

PipelineResult run_pipeline(const DatasetManifest& manifest,
                            const PreprocessConfig& config,
                            const fs::path& source_root,
                            const fs::path& output_dir, const CropSidecar& crops) {
  if (config.target_size <= 0) throw ValidationError("target_size must be positive");
  std::error_code ec;
  fs::create_directories(output_dir / "images", ec);
  if (ec) throw IoError("cannot create '" + output_dir.string() + "': " + ec.message());

  std::map<std::string, std::vector<const GroundTruthItem*>> by_image;
  for (const auto& a : manifest.annotations) by_image[a.image_id].push_back(&a);

  static const std::vector<const GroundTruthItem*> kNoAnnotations;
  const std::size_t n = manifest.images.size();
  std::vector<ImageOutcome> outcomes(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const auto& im = manifest.images[i];
      const auto it = by_image.find(im.id);
      outcomes[i] = process_one(im, it == by_image.end() ? kNoAnnotations : it->second,
                                config, source_root, output_dir, crops);
    }
  };
  unsigned threads = config.workers > 0 ? static_cast<unsigned>(config.workers)
                                        : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }

  PipelineResult result;
  result.manifest.registry = manifest.registry;
  for (auto& o : outcomes) {
    if (o.record.error) ++result.errors;
    if (o.image) result.manifest.images.push_back(std::move(*o.image));
    for (auto& a : o.annotations) result.manifest.annotations.push_back(std::move(a));
    result.log.push_back(std::move(o.record));
  }
  return result;
}

PipelineResult run_pipeline_to_disk(const DatasetManifest& manifest,
                                    const PreprocessConfig& config,
                                    const fs::path& source_root,
                                    const fs::path& output_dir,
                                    const CropSidecar& crops) {
  auto result = run_pipeline(manifest, config, source_root, output_dir, crops);
  write_manifest_file(output_dir / "manifest.json", result.manifest);
  write_text_file(output_dir / "preprocess_log.json",
                  result.log_json(config).dump(2) + "\n");
  return result;
}

}  // namespace pod_sentry
