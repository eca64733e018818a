#pragma once

// Schema-tagged JSON documents: detection interchange and dataset manifest.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pod_sentry/annotation.hpp"

namespace pod_sentry {

using Json = nlohmann::json;

inline constexpr const char* kDetectionsSchema = "pod-sentry/detections@1";
inline constexpr const char* kManifestSchema = "pod-sentry/manifest@1";

inline Json box_to_json(const BoundingBox& b) {
  return Json{{"x_min", b.x_min()},
              {"y_min", b.y_min()},
              {"x_max", b.x_max()},
              {"y_max", b.y_max()}};
}

inline BoundingBox box_from_json(const Json& j, Convention conv) {
  if (!j.is_object()) throw ValidationError("box must be an object");
  auto coord = [&](const char* key) {
    if (!j.contains(key) || !j.at(key).is_number()) {
      throw ValidationError(std::string("box.") + key + " missing or not a number");
    }
    return j.at(key).get<double>();
  };
  return BoundingBox(coord("x_min"), coord("y_min"), coord("x_max"),
                     coord("y_max"), conv);
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline Json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(what + " byte " + std::to_string(e.byte), e.what());
  }
}

// ---------------------------------------------------------------------------
// Detection interchange.

inline Json detection_to_json(const DetectionItem& d) {
  return Json{{"image_id", d.image_id},
              {"class_id", d.class_id},
              {"score", d.score},
              {"box", box_to_json(d.box)},
              {"convention", std::string(to_string(d.box.convention()))}};
}

inline DetectionItem detection_from_json(const Json& r) {
  if (!r.is_object()) throw ValidationError("record is not an object");
  if (!r.contains("image_id") || !r["image_id"].is_string()) {
    throw ValidationError("image_id missing or not a string");
  }
  if (!r.contains("class_id") || !r["class_id"].is_number_integer()) {
    throw ValidationError("class_id missing or not an integer");
  }
  if (!r.contains("score") || !r["score"].is_number()) {
    throw ValidationError("score missing or not a number");
  }
  Convention conv = Convention::kPixel;
  if (r.contains("convention")) {
    if (!r["convention"].is_string()) {
      throw ValidationError("convention must be a string");
    }
    conv = convention_from_string(r["convention"].get<std::string>());
  }
  if (!r.contains("box")) throw ValidationError("box missing");
  DetectionItem d{r["image_id"].get<std::string>(), r["class_id"].get<int>(),
                  box_from_json(r["box"], conv), r["score"].get<double>()};
  check_score(d.score);
  return d;
}

// Stable order for writing: image id ascending, then score descending.
inline void sort_for_interchange(std::vector<DetectionItem>& items) {
  std::stable_sort(items.begin(), items.end(),
                   [](const DetectionItem& a, const DetectionItem& b) {
                     if (a.image_id != b.image_id) return a.image_id < b.image_id;
                     return a.score > b.score;
                   });
}

inline Json detections_to_json(std::vector<DetectionItem> items) {
  sort_for_interchange(items);
  Json arr = Json::array();
  for (const auto& d : items) arr.push_back(detection_to_json(d));
  return Json{{"schema", kDetectionsSchema}, {"detections", std::move(arr)}};
}

inline std::vector<DetectionItem> detections_from_json(const Json& doc) {
  if (!doc.is_object() || doc.value("schema", "") != kDetectionsSchema) {
    throw ParseError("schema", std::string("expected schema '") +
                                   kDetectionsSchema + "'");
  }
  if (!doc.contains("detections") || !doc["detections"].is_array()) {
    throw ParseError("detections", "missing detections array");
  }
  std::vector<DetectionItem> out;
  const auto& arr = doc["detections"];
  for (std::size_t i = 0; i < arr.size(); ++i) {
    try {
      out.push_back(detection_from_json(arr[i]));
    } catch (const ValidationError& e) {
      throw ParseError("record " + std::to_string(i), e.what());
    }
  }
  return out;
}

inline std::vector<DetectionItem> read_detections_file(
    const std::filesystem::path& path) {
  return detections_from_json(
      parse_json_text(read_text_file(path), path.string()));
}

inline void write_detections_file(const std::filesystem::path& path,
                                  std::vector<DetectionItem> items) {
  write_text_file(path, detections_to_json(std::move(items)).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Manifest.

inline Json registry_to_json(const ClassRegistry& reg) {
  Json arr = Json::array();
  for (const auto& e : reg.entries()) {
    arr.push_back(Json{{"id", e.id}, {"name", e.name}, {"aliases", e.aliases}});
  }
  return arr;
}

inline ClassRegistry registry_from_json(const Json& arr) {
  if (!arr.is_array()) throw ParseError("classes", "must be an array");
  std::vector<ClassEntry> entries;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& c = arr[i];
    const std::string where = "classes[" + std::to_string(i) + "]";
    if (!c.is_object() || !c.contains("id") || !c["id"].is_number_integer() ||
        !c.contains("name") || !c["name"].is_string()) {
      throw ParseError(where, "class entries need integer id and string name");
    }
    ClassEntry e{c["id"].get<int>(), c["name"].get<std::string>(), {}};
    if (c.contains("aliases")) {
      try {
        e.aliases = c["aliases"].get<std::vector<std::string>>();
      } catch (const Json::exception&) {
        throw ParseError(where + ".aliases", "must be a string array");
      }
    }
    entries.push_back(std::move(e));
  }
  try {
    return ClassRegistry(std::move(entries));
  } catch (const ValidationError& e) {
    throw ParseError("classes", e.what());
  }
}

inline Json image_to_json(const ImageRecord& im) {
  Json j{{"id", im.id},
         {"path", im.path},
         {"width", im.width},
         {"height", im.height}};
  if (im.split) j["split"] = std::string(to_string(*im.split));
  if (im.label) j["label"] = *im.label;
  return j;
}

inline ImageRecord image_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("image record is not an object");
  ImageRecord im;
  if (!j.contains("id") || !j["id"].is_string()) {
    throw ValidationError("id missing or not a string");
  }
  im.id = j["id"].get<std::string>();
  im.path = j.value("path", "");
  if (!j.contains("width") || !j["width"].is_number_integer() ||
      !j.contains("height") || !j["height"].is_number_integer()) {
    throw ValidationError("width/height missing or not integers");
  }
  im.width = j["width"].get<int>();
  im.height = j["height"].get<int>();
  if (j.contains("split") && !j["split"].is_null()) {
    im.split = split_from_string(j["split"].get<std::string>());
  }
  if (j.contains("label") && !j["label"].is_null()) {
    if (!j["label"].is_number_integer()) {
      throw ValidationError("label must be an integer class id");
    }
    im.label = j["label"].get<int>();
  }
  return im;
}

inline Json manifest_to_json(const DatasetManifest& m) {
  Json images = Json::array();
  for (const auto& im : m.images) images.push_back(image_to_json(im));
  Json anns = Json::array();
  for (const auto& a : m.annotations) {
    anns.push_back(Json{{"image_id", a.image_id},
                        {"class_id", a.class_id},
                        {"box", box_to_json(a.box)},
                        {"convention", std::string(to_string(a.box.convention()))}});
  }
  return Json{{"schema", kManifestSchema},
              {"classes", registry_to_json(m.registry)},
              {"images", std::move(images)},
              {"annotations", std::move(anns)}};
}

// Normalized annotation boxes are resolved to pixels against their image.
// Dangling references are kept as-is so validate_manifest can report them.
inline DatasetManifest manifest_from_json(const Json& doc) {
  if (!doc.is_object() || doc.value("schema", "") != kManifestSchema) {
    throw ParseError("schema", std::string("expected schema '") +
                                   kManifestSchema + "'");
  }
  DatasetManifest m;
  if (doc.contains("classes")) m.registry = registry_from_json(doc["classes"]);
  if (!doc.contains("images") || !doc["images"].is_array()) {
    throw ParseError("images", "missing images array");
  }
  for (std::size_t i = 0; i < doc["images"].size(); ++i) {
    try {
      m.images.push_back(image_from_json(doc["images"][i]));
    } catch (const ValidationError& e) {
      throw ParseError("images[" + std::to_string(i) + "]", e.what());
    } catch (const Json::exception& e) {
      throw ParseError("images[" + std::to_string(i) + "]", e.what());
    }
  }
  const Json empty = Json::array();
  const Json& anns = doc.contains("annotations") ? doc["annotations"] : empty;
  if (!anns.is_array()) throw ParseError("annotations", "must be an array");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string where = "annotations[" + std::to_string(i) + "]";
    try {
      const auto& a = anns[i];
      if (!a.is_object() || !a.contains("image_id") ||
          !a["image_id"].is_string() || !a.contains("class_id") ||
          !a["class_id"].is_number_integer() || !a.contains("box")) {
        throw ValidationError("needs image_id, class_id and box");
      }
      const Convention conv = convention_from_string(a.value("convention", "pixel"));
      GroundTruthItem g{a["image_id"].get<std::string>(),
                        a["class_id"].get<int>(), box_from_json(a["box"], conv)};
      if (conv == Convention::kNormalized) {
        if (const ImageRecord* im = m.find_image(g.image_id)) {
          g.box = g.box.to_pixel(im->width, im->height);
        }
      }
      m.annotations.push_back(std::move(g));
    } catch (const ValidationError& e) {
      throw ParseError(where, e.what());
    } catch (const Json::exception& e) {
      throw ParseError(where, e.what());
    }
  }
  return m;
}

inline DatasetManifest read_manifest_file(const std::filesystem::path& path) {
  return manifest_from_json(parse_json_text(read_text_file(path), path.string()));
}

inline void write_manifest_file(const std::filesystem::path& path,
                                const DatasetManifest& m) {
  write_text_file(path, manifest_to_json(m).dump(2) + "\n");
}

}  // namespace pod_sentry
