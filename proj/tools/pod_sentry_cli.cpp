// pod-sentry: operator entry point.
//
// Exit status: 0 success, 1 data violations found, 2 usage/config error,
// 3 I/O error.

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pod_sentry/annotation.hpp"
#include "pod_sentry/backend.hpp"
#include "pod_sentry/diagnosis.hpp"
#include "pod_sentry/image_io.hpp"
#include "pod_sentry/interchange.hpp"
#include "pod_sentry/matching.hpp"
#include "pod_sentry/pipeline.hpp"
#include "pod_sentry/preprocess.hpp"
#include "pod_sentry/service.hpp"
#include "pod_sentry/trainlog.hpp"
#include "pod_sentry/voc.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pod_sentry;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitViolations = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

// Bad flags or configuration, as opposed to bad data.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Options {
  std::string manifest;
  std::string detections;
  std::string out;
  std::string config;
  std::string backend;
  std::uint64_t seed = 0;
  double ratio = 0.2;
  std::uint64_t batch = 0;

  // Subcommand-specific.
  std::string from;
  std::string to = "manifest";
  std::string in;
  std::string images;
  std::string crops;
  std::string split = "validation";
  std::string publish;
  std::string image;
  std::string image_id;
  std::string log;
  int target = 0;
};

DatasetManifest load_manifest(const std::string& path) {
  if (path.empty()) throw UsageError("--manifest is required");
  return read_manifest_file(path);
}

fs::path manifest_dir(const std::string& path) {
  fs::path p = fs::path(path).parent_path();
  return p.empty() ? fs::path(".") : p;
}

json load_json_config(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    return parse_json_text(read_text_file(path), path);
  } catch (const ParseError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

void print_violations(const std::vector<Violation>& vs) {
  for (const auto& v : vs) std::cout << "  [" << v.kind << "] " << v.message << "\n";
}

void print_stats(const DatasetStats& s, const ClassRegistry& reg) {
  std::cout << "images: " << s.images << " (train " << s.train_images
            << ", validation " << s.validation_images << ", unassigned "
            << s.unassigned_images << ")\n";
  std::cout << "annotations: " << s.annotations << "\n";
  for (const auto& e : reg.entries()) {
    std::cout << "  " << e.name << ": " << s.images_per_class.at(e.id)
              << " images, " << s.annotations_per_class.at(e.id) << " boxes\n";
  }
  if (s.steps_per_epoch) {
    std::cout << "batch " << *s.batch_size << ": " << *s.steps_per_epoch
              << " steps/epoch\n";
  }
}

json stats_json(const DatasetStats& s, const ClassRegistry& reg) {
  json classes = json::object();
  for (const auto& e : reg.entries()) {
    classes[e.name] = {{"images", s.images_per_class.at(e.id)},
                       {"annotations", s.annotations_per_class.at(e.id)}};
  }
  json j{{"images", s.images},
         {"train_images", s.train_images},
         {"validation_images", s.validation_images},
         {"unassigned_images", s.unassigned_images},
         {"annotations", s.annotations},
         {"classes", classes}};
  if (s.steps_per_epoch) {
    j["batch_size"] = *s.batch_size;
    j["steps_per_epoch"] = *s.steps_per_epoch;
  }
  return j;
}

// --- dataset ---------------------------------------------------------------

int dataset_validate(const Options& o) {
  const auto m = load_manifest(o.manifest);
  const auto report =
      validate_manifest(m, o.batch ? std::optional(o.batch) : std::nullopt);
  if (!o.out.empty()) {
    json vs = json::array();
    for (const auto& v : report.violations) {
      vs.push_back({{"kind", v.kind}, {"subject", v.subject}, {"message", v.message}});
    }
    write_text_file(o.out, json{{"schema", "pod-sentry/manifest-report@1"},
                                {"violations", vs},
                                {"stats", stats_json(report.stats, m.registry)}}
                                   .dump(2) + "\n");
  }
  if (report.ok()) {
    std::cout << "manifest OK\n";
  } else {
    std::cout << report.violations.size() << " violation(s):\n";
    print_violations(report.violations);
  }
  print_stats(report.stats, m.registry);
  return report.ok() ? kExitOk : kExitViolations;
}

int dataset_stats(const Options& o) {
  if (o.batch == 0) throw UsageError("--batch must be a positive integer");
  const auto m = load_manifest(o.manifest);
  const auto s = pod_sentry::dataset_stats(m, o.batch);
  print_stats(s, m.registry);
  if (!o.out.empty()) write_text_file(o.out, stats_json(s, m.registry).dump(2) + "\n");
  return kExitOk;
}

int dataset_split(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  if (!(o.ratio > 0.0 && o.ratio < 1.0)) throw UsageError("--ratio must lie in (0,1)");
  const auto m = load_manifest(o.manifest);
  const auto split = split_dataset(m, o.ratio, o.seed);
  write_manifest_file(o.out, split);
  const auto s = pod_sentry::dataset_stats(split);
  std::cout << "train " << s.train_images << ", validation " << s.validation_images
            << " (ratio " << o.ratio << ", seed " << o.seed << ")\n";
  return kExitOk;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" ||
         ext == ".ppm";
}

std::vector<fs::path> sorted_files(const fs::path& dir, auto keep) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && keep(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string relative_to(const fs::path& target, const fs::path& base) {
  return fs::relative(fs::absolute(target), fs::absolute(base)).generic_string();
}

int dataset_convert(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  const ClassRegistry registry = ClassRegistry::cocoa_default();

  if (o.from == "manifest") {
    if (o.to != "yolo" && o.to != "voc") throw UsageError("--to must be yolo or voc");
    const auto m = load_manifest(o.manifest);
    std::map<std::string, std::vector<GroundTruthItem>> by_image;
    for (const auto& a : m.annotations) by_image[a.image_id].push_back(a);
    for (const auto& im : m.images) {
      const auto& items = by_image[im.id];
      if (o.to == "yolo") {
        write_text_file(fs::path(o.out) / (im.id + ".txt"),
                        emit_yolo_labels(items, im.width, im.height));
      } else {
        write_text_file(fs::path(o.out) / (im.id + ".xml"),
                        emit_voc_xml(im, items, m.registry));
      }
    }
    std::cout << "wrote " << m.images.size() << " label file(s) to " << o.out << "\n";
    return kExitOk;
  }

  if (o.in.empty()) throw UsageError("--in is required");
  const fs::path out_dir = manifest_dir(o.out);
  DatasetManifest m;
  m.registry = registry;
  if (o.from == "voc") {
    const fs::path image_dir = o.images.empty() ? fs::path(o.in) : fs::path(o.images);
    for (const auto& xml : sorted_files(o.in, [](const fs::path& p) {
           return p.extension() == ".xml";
         })) {
      VocDocument doc;
      try {
        doc = parse_voc_xml(read_text_file(xml), registry);
      } catch (const ParseError& e) {
        throw ParseError(xml.filename().string() + ": " + e.location(), e.what());
      }
      if (doc.image.id.empty()) doc.image.id = xml.stem().string();
      for (auto& a : doc.annotations) a.image_id = doc.image.id;
      doc.image.path = relative_to(image_dir / (doc.image.path.empty()
                                                    ? doc.image.id + ".jpg"
                                                    : doc.image.path),
                                   out_dir);
      m.images.push_back(doc.image);
      m.annotations.insert(m.annotations.end(), doc.annotations.begin(),
                           doc.annotations.end());
    }
  } else if (o.from == "yolo") {
    const fs::path image_dir = o.images.empty() ? fs::path(o.in) : fs::path(o.images);
    for (const auto& img : sorted_files(image_dir, is_image_file)) {
      const Raster r = read_image(img);
      ImageRecord im{img.stem().string(), relative_to(img, out_dir), r.width(),
                     r.height(), std::nullopt, std::nullopt};
      const fs::path label = fs::path(o.in) / (im.id + ".txt");
      if (fs::exists(label)) {
        try {
          auto items = parse_yolo_labels(read_text_file(label), im.id, im.width,
                                         im.height, registry);
          m.annotations.insert(m.annotations.end(), items.begin(), items.end());
        } catch (const ParseError& e) {
          throw ParseError(label.filename().string() + ": " + e.location(), e.what());
        }
      }
      m.images.push_back(std::move(im));
    }
  } else {
    throw UsageError("--from must be voc, yolo or manifest");
  }
  write_manifest_file(o.out, m);
  std::cout << "wrote manifest with " << m.images.size() << " image(s), "
            << m.annotations.size() << " annotation(s) to " << o.out << "\n";
  const auto broken = structural_violations(m);
  if (!broken.empty()) {
    print_violations(broken);
    return kExitViolations;
  }
  return kExitOk;
}

// --- preprocess --------------------------------------------------------------

int preprocess_run(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  const auto m = load_manifest(o.manifest);
  const json cfg = load_json_config(o.config);
  PreprocessConfig pc;
  try {
    pc.target_size = cfg.value("target_size", pc.target_size);
    const std::string mode = cfg.value("crop_mode", std::string("center"));
    if (mode == "center") {
      pc.crop_mode = CropMode::kCenter;
    } else if (mode == "custom-rect") {
      pc.crop_mode = CropMode::kCustomRect;
    } else {
      throw UsageError("crop_mode must be center or custom-rect");
    }
    pc.min_box_area = cfg.value("min_box_area", pc.min_box_area);
    pc.workers = cfg.value("workers", pc.workers);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (o.target > 0) pc.target_size = o.target;
  if (pc.target_size <= 0) throw UsageError("target_size must be positive");

  CropSidecar crops;
  const std::string crops_path = !o.crops.empty() ? o.crops : cfg.value("crops", "");
  if (!crops_path.empty()) {
    crops = crops_from_json(parse_json_text(read_text_file(crops_path), crops_path));
    pc.crop_mode = CropMode::kCustomRect;
  }
  if (pc.crop_mode == CropMode::kCustomRect && crops.empty()) {
    throw UsageError("custom-rect crop mode needs --crops");
  }

  const auto result = run_pipeline_to_disk(m, pc, manifest_dir(o.manifest), o.out, crops);
  std::size_t dropped = 0;
  for (const auto& r : result.log) dropped += r.dropped_annotations;
  std::cout << "processed " << result.manifest.images.size() << "/" << m.images.size()
            << " image(s) to " << pc.target_size << "x" << pc.target_size
            << "; dropped " << dropped << " annotation(s); " << result.errors
            << " error(s)\n";
  for (const auto& r : result.log) {
    if (r.error) std::cout << "  " << r.image_id << ": " << *r.error << "\n";
  }
  return result.ok() ? kExitOk : kExitViolations;
}

// --- eval -------------------------------------------------------------------

int eval_run(const Options& o) {
  if (o.detections.empty()) throw UsageError("--detections is required");
  if (o.out.empty()) throw UsageError("--out is required");
  const auto m = load_manifest(o.manifest);
  const auto dets = read_detections_file(o.detections);
  const json cfg = load_json_config(o.config);
  EvalConfig ec;
  try {
    if (cfg.contains("iou_thresholds")) {
      ec.iou_thresholds = cfg["iou_thresholds"].get<std::vector<double>>();
    }
    ec.interpolation_points = cfg.value("interpolation_points", ec.interpolation_points);
    ec.score_floor = cfg.value("score_floor", ec.score_floor);
    ec.validate();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const ValidationError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  const std::string split = cfg.value("split", o.split);
  if (split == "all") {
    ec.split.reset();
  } else if (split == "train" || split == "validation") {
    ec.split = split_from_string(split);
  } else {
    throw UsageError("--split must be train, validation or all");
  }

  const auto report = evaluate(m, dets, ec);
  const std::string text = report_to_json(report).dump(2) + "\n";
  write_text_file(o.out, text);
  if (!o.publish.empty()) CaseStore(o.publish).publish_eval(text);

  auto fmt = [](const std::optional<double>& v) {
    if (!v) return std::string("undefined");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return std::string(buf);
  };
  std::cout << "images " << report.images << ", ground truths " << report.ground_truths
            << ", detections " << report.detections << "\n";
  for (const auto& [id, cr] : report.per_class) {
    std::optional<double> ap50;
    for (const auto& ap : cr.aps) {
      if (same_threshold(ap.iou_threshold, 0.5)) ap50 = ap.ap;
    }
    std::cout << "  " << report.registry.name(id) << ": AP@0.5 " << fmt(ap50) << "\n";
  }
  std::cout << "mAP@0.5 " << fmt(report.map.map_at_50) << ", mAP@0.5:0.95 "
            << fmt(report.map.map_50_95) << "\n";
  return kExitOk;
}

// --- diagnose ---------------------------------------------------------------

int diagnose_image(const Options& o) {
  if (o.image.empty()) throw UsageError("--image is required");
  if (o.backend.empty()) throw UsageError("--backend is required");
  BackendDescriptor desc;
  try {
    desc = BackendDescriptor::parse(o.backend);
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  const json cfg = load_json_config(o.config);
  DiagnosisConfig dc;
  dc.nms_iou = cfg.value("nms_iou", dc.nms_iou);
  dc.score_floor = cfg.value("score_floor", dc.score_floor);
  const int target = o.target > 0 ? o.target : cfg.value("target_size", 640);

  const ClassRegistry registry = ClassRegistry::cocoa_default();
  const auto backend = make_backend(desc, registry);
  const Raster processed = resize(crop_to_square(read_image(o.image)), target);
  const std::string id = o.image_id.empty() ? fs::path(o.image).stem().string() : o.image_id;
  const auto dets = backend->detect(id, processed);
  const auto d = diagnose(id, dets, registry, default_knowledge_base(), dc);
  const std::string text = diagnosis_to_json(d, registry).dump(2) + "\n";
  if (o.out.empty()) {
    std::cout << text;
  } else {
    write_text_file(o.out, text);
    std::cout << d.pods.size() << " pod(s)";
    for (const auto& p : d.pods) {
      std::cout << "; " << registry.name(p.top_class) << " "
                << p.probabilities.at(p.top_class) * 100.0 << "%";
    }
    std::cout << "\n";
  }
  return kExitOk;
}

// --- trainlog ---------------------------------------------------------------

int trainlog_report(const Options& o) {
  if (o.log.empty()) throw UsageError("--log is required");
  if (o.out.empty()) throw UsageError("--out is required");
  const auto parsed = parse_training_log(read_text_file(o.log));
  for (const auto& w : parsed.warnings) std::cerr << "warning: " << w << "\n";
  const auto rep = emit_training_report(parsed.records);
  write_text_file(fs::path(o.out) / "trainlog.json", rep.document.dump(2) + "\n");
  write_text_file(fs::path(o.out) / "series.csv", series_csv(parsed.records));
  std::cout << rep.summary;
  return all_pass(rep.trends) ? kExitOk : kExitViolations;
}

// --- serve ------------------------------------------------------------------

HttpServer* g_server = nullptr;

int serve(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  ServiceConfig cfg;
  try {
    cfg = load_service_config(o.config);
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  }
  DiagnosisService service(std::move(cfg));
  HttpServer server(service);
  const int port = server.bind(service.config().host, service.config().port);
  std::cout << "listening on " << service.config().host << ":" << port << " (store "
            << service.config().store_path.string() << ")" << std::endl;
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  server.listen();
  g_server = nullptr;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pod-sentry: cocoa pod dataset, evaluation and diagnosis toolkit"};
  app.require_subcommand(1);
  Options o;

  auto* dataset = app.add_subcommand("dataset", "Dataset manifests")->require_subcommand(1);
  auto* validate = dataset->add_subcommand(
      "validate", "Check manifest integrity (exit 1 when violations are found)");
  validate->add_option("--manifest", o.manifest, "Manifest file")->required();
  validate->add_option("--batch", o.batch, "Batch size for the steps/epoch statistic");
  validate->add_option("--out", o.out, "Write the report document here");

  auto* stats = dataset->add_subcommand("stats", "Class counts and steps per epoch");
  stats->add_option("--manifest", o.manifest, "Manifest file")->required();
  stats->add_option("--batch", o.batch, "Training batch size")->required();
  stats->add_option("--out", o.out, "Write the statistics document here");

  auto* split = dataset->add_subcommand("split", "Seeded stratified train/validation split");
  split->add_option("--manifest", o.manifest, "Manifest file")->required();
  split->add_option("--ratio", o.ratio, "Validation share in (0,1)");
  split->add_option("--seed", o.seed, "Shuffle seed");
  split->add_option("--out", o.out, "Output manifest")->required();

  auto* convert = dataset->add_subcommand(
      "convert", "Import VOC/YOLO labels into a manifest, or export a manifest");
  convert->add_option("--from", o.from, "voc | yolo | manifest")->required();
  convert->add_option("--to", o.to, "manifest (import) | yolo | voc (export)");
  convert->add_option("--in", o.in, "Directory of label files (import)");
  convert->add_option("--images", o.images, "Image directory (defaults to --in)");
  convert->add_option("--manifest", o.manifest, "Manifest to export");
  convert->add_option("--out", o.out, "Output manifest (import) or directory (export)")
      ->required();

  auto* preprocess = app.add_subcommand("preprocess", "Image normalization")
                         ->require_subcommand(1);
  auto* prun = preprocess->add_subcommand(
      "run", "Crop to square, resize, transform boxes (exit 1 on per-image errors)");
  prun->add_option("--manifest", o.manifest, "Manifest file")->required();
  prun->add_option("--out", o.out, "Output directory")->required();
  prun->add_option("--config", o.config, "Preprocess config JSON");
  prun->add_option("--crops", o.crops, "Crop sidecar (enables custom-rect mode)");
  prun->add_option("--target", o.target, "Output side length (default 640)");

  auto* eval = app.add_subcommand("eval", "Detection evaluation")->require_subcommand(1);
  auto* erun = eval->add_subcommand("run", "Evaluate detections against a manifest");
  erun->add_option("--manifest", o.manifest, "Manifest file")->required();
  erun->add_option("--detections", o.detections, "Detection interchange file")->required();
  erun->add_option("--out", o.out, "Report document")->required();
  erun->add_option("--config", o.config, "Evaluation config JSON");
  erun->add_option("--split", o.split, "validation (default) | train | all");
  erun->add_option("--publish", o.publish, "Also publish the report into this service store");

  auto* diag = app.add_subcommand("diagnose", "Single-image diagnosis")->require_subcommand(1);
  auto* dimg = diag->add_subcommand("image", "Diagnose one image file");
  dimg->add_option("--image", o.image, "Image file")->required();
  dimg->add_option("--backend", o.backend, "file:<path> | mock:<seed> | external:<url>")
      ->required();
  dimg->add_option("--image-id", o.image_id, "Image id passed to the backend");
  dimg->add_option("--config", o.config, "Diagnosis config JSON");
  dimg->add_option("--target", o.target, "Preprocess side length (default 640)");
  dimg->add_option("--out", o.out, "Write the diagnosis document here");

  auto* trainlog = app.add_subcommand("trainlog", "Training log analysis")->require_subcommand(1);
  auto* trep = trainlog->add_subcommand(
      "report", "Series document, CSV export and trend checks (exit 1 on failed trends)");
  trep->add_option("--log", o.log, "Comma-separated training log")->required();
  trep->add_option("--out", o.out, "Output directory")->required();

  auto* srv = app.add_subcommand("serve", "Run the HTTP diagnosis service");
  srv->add_option("--config", o.config, "Service config JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*validate) return dataset_validate(o);
    if (*stats) return dataset_stats(o);
    if (*split) return dataset_split(o);
    if (*convert) return dataset_convert(o);
    if (*prun) return preprocess_run(o);
    if (*erun) return eval_run(o);
    if (*dimg) return diagnose_image(o);
    if (*trep) return trainlog_report(o);
    if (*srv) return serve(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitViolations;
  }
  return kExitUsage;
}
