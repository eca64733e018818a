#pragma once

// Per-image diagnosis: score floor, class-agnostic NMS into pods, per-pod
// class probabilities, and knowledge-base lookup.
//
// Probability rule: every detection (floor or not) joins the cluster of the
// first kept pod, in rank order, that it overlaps by more than the NMS
// threshold. A pod's class scores are the best score per class in its
// cluster, divided by their sum. Classes never observed get 0.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pod_sentry/annotation.hpp"
#include "pod_sentry/interchange.hpp"
#include "pod_sentry/matching.hpp"

namespace pod_sentry {

// Greedy suppression in rank order (see detection_before). A detection is
// dropped when its IoU with an already kept one exceeds the threshold; kept
// boxes of other classes only suppress when `class_agnostic` is set.
inline std::vector<DetectionItem> nms(const std::vector<DetectionItem>& dets,
                                      double iou_threshold,
                                      bool class_agnostic) {
  std::vector<DetectionItem> order = dets;
  std::sort(order.begin(), order.end(), detection_before);
  std::vector<DetectionItem> kept;
  for (auto& d : order) {
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](const DetectionItem& k) {
          return (class_agnostic || k.class_id == d.class_id) &&
                 iou(k.box, d.box) > iou_threshold;
        });
    if (!suppressed) kept.push_back(std::move(d));
  }
  return kept;
}

struct DiseaseInfo {
  ClassId class_id = 0;
  std::string display_name;
  std::vector<std::string> symptoms;
  std::vector<std::string> treatments;
  std::vector<std::string> reference_images;
  bool disease = true;

  friend bool operator==(const DiseaseInfo&, const DiseaseInfo&) = default;
};

inline constexpr const char* kKnowledgeBaseSchema = "pod-sentry/kb@1";

class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  explicit KnowledgeBase(std::vector<DiseaseInfo> entries) {
    for (auto& e : entries) {
      if (e.disease && (e.symptoms.empty() || e.treatments.empty())) {
        throw ValidationError("knowledge entry '" + e.display_name +
                              "' is a disease without symptoms or treatments");
      }
      const ClassId id = e.class_id;
      if (!entries_.emplace(id, std::move(e)).second) {
        throw ValidationError("duplicate knowledge entry for class " +
                              std::to_string(id));
      }
    }
  }

  const DiseaseInfo& lookup(ClassId id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) {
      throw UnknownClassError("no knowledge entry for class " +
                              std::to_string(id));
    }
    return it->second;
  }

  const std::map<ClassId, DiseaseInfo>& entries() const { return entries_; }

 private:
  std::map<ClassId, DiseaseInfo> entries_;
};

// Built-in guidance for the default registry. Symptom lists follow standard
// field descriptions of each disease; treatments are generic agronomic
// placeholders and should be replaced with locally approved advice.
inline KnowledgeBase default_knowledge_base() {
  return KnowledgeBase({
      {0,
       "Black pod (Phytophthora palmivora)",
       {"Brown to black lesions spreading across the pod surface",
        "Zoospores penetrate the pod tissue and the pod rots",
        "Infection can spread from the pod to the rest of the plant"},
       {"Remove and bury or burn infected pods promptly",
        "Prune to improve airflow and reduce humidity in the canopy",
        "Improve drainage; consult local extension staff about approved "
        "copper-based fungicides"},
       {},
       true},
      {1,
       "Monilia (Moniliophthora roreri)",
       {"Wilting", "Deformities", "Hydrosis", "Irregular maturity", "Necrosis",
        "Oily spots", "White powdery conidia on the pod surface"},
       {"Harvest and remove infected pods weekly, before spores form",
        "Cover removed pods or bury them to stop spore release",
        "Keep the canopy pruned and the plantation well drained"},
       {},
       true},
      {2,
       "Healthy pod",
       {},
       {"No treatment required; keep routine monitoring"},
       {},
       false},
  });
}

inline nlohmann::json knowledge_entry_to_json(const DiseaseInfo& e,
                                              const ClassRegistry& reg) {
  return {{"class", reg.contains(e.class_id) ? reg.name(e.class_id)
                                             : std::to_string(e.class_id)},
          {"display_name", e.display_name},
          {"symptoms", e.symptoms},
          {"treatments", e.treatments},
          {"images", e.reference_images},
          {"disease", e.disease}};
}

inline nlohmann::json knowledge_base_to_json(const KnowledgeBase& kb,
                                             const ClassRegistry& reg) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [id, e] : kb.entries()) {
    arr.push_back(knowledge_entry_to_json(e, reg));
  }
  return {{"schema", kKnowledgeBaseSchema}, {"entries", std::move(arr)}};
}

inline KnowledgeBase knowledge_base_from_json(const nlohmann::json& doc,
                                              const ClassRegistry& reg) {
  if (!doc.is_object() || doc.value("schema", "") != kKnowledgeBaseSchema) {
    throw ParseError("schema", std::string("expected schema '") +
                                   kKnowledgeBaseSchema + "'");
  }
  if (!doc.contains("entries") || !doc["entries"].is_array()) {
    throw ParseError("entries", "missing entries array");
  }
  std::vector<DiseaseInfo> entries;
  const auto& arr = doc["entries"];
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = "entries[" + std::to_string(i) + "]";
    try {
      const auto& e = arr[i];
      DiseaseInfo info;
      info.class_id = reg.resolve(e.at("class").get<std::string>());
      info.display_name = e.value("display_name", reg.name(info.class_id));
      info.symptoms = e.value("symptoms", std::vector<std::string>{});
      info.treatments = e.value("treatments", std::vector<std::string>{});
      info.reference_images = e.value("images", std::vector<std::string>{});
      info.disease = e.value("disease", true);
      entries.push_back(std::move(info));
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(where, ex.what());
    } catch (const ValidationError& ex) {
      throw ParseError(where, ex.what());
    }
  }
  try {
    return KnowledgeBase(std::move(entries));
  } catch (const ValidationError& ex) {
    throw ParseError("entries", ex.what());
  }
}

// ---------------------------------------------------------------------------

struct DiagnosisConfig {
  double nms_iou = 0.5;
  double score_floor = 0.25;
};

struct PodDiagnosis {
  BoundingBox box;
  std::map<ClassId, double> probabilities;  // every registry class
  ClassId top_class = 0;
};

struct Diagnosis {
  std::string image_id;
  std::vector<PodDiagnosis> pods;
  std::vector<DiseaseInfo> knowledge;  // distinct disease top classes, by id
};

inline Diagnosis diagnose(const std::string& image_id,
                          const std::vector<DetectionItem>& dets,
                          const ClassRegistry& registry,
                          const KnowledgeBase& kb,
                          const DiagnosisConfig& config = {}) {
  for (const auto& d : dets) {
    if (!registry.contains(d.class_id)) {
      throw UnknownClassError("detection has unknown class id " +
                              std::to_string(d.class_id));
    }
    check_score(d.score);
  }
  std::vector<DetectionItem> above;
  for (const auto& d : dets) {
    if (d.score >= config.score_floor) above.push_back(d);
  }
  const auto pods = nms(above, config.nms_iou, /*class_agnostic=*/true);

  std::vector<std::map<ClassId, double>> best(pods.size());
  std::vector<DetectionItem> ranked = dets;
  std::sort(ranked.begin(), ranked.end(), detection_before);
  for (const auto& d : ranked) {
    for (std::size_t p = 0; p < pods.size(); ++p) {
      const bool member = pods[p] == d || iou(pods[p].box, d.box) > config.nms_iou;
      if (!member) continue;
      auto [it, fresh] = best[p].emplace(d.class_id, d.score);
      if (!fresh) it->second = std::max(it->second, d.score);
      break;
    }
  }

  Diagnosis out;
  out.image_id = image_id;
  std::map<ClassId, const DiseaseInfo*> refs;
  for (std::size_t p = 0; p < pods.size(); ++p) {
    PodDiagnosis pod;
    pod.box = pods[p].box;
    double total = 0.0;
    for (const auto& [cls, s] : best[p]) total += s;
    for (const auto& e : registry.entries()) pod.probabilities[e.id] = 0.0;
    if (total > 0.0) {
      for (const auto& [cls, s] : best[p]) pod.probabilities[cls] = s / total;
    } else {
      // Every member scored exactly 0: no evidence beyond the class set.
      for (const auto& [cls, s] : best[p]) {
        pod.probabilities[cls] = 1.0 / static_cast<double>(best[p].size());
      }
    }
    double top = -1.0;
    for (const auto& [cls, prob] : pod.probabilities) {
      if (prob > top) {
        top = prob;
        pod.top_class = cls;
      }
    }
    const DiseaseInfo& info = kb.lookup(pod.top_class);
    if (info.disease) refs[pod.top_class] = &info;
    out.pods.push_back(std::move(pod));
  }
  for (const auto& [cls, info] : refs) out.knowledge.push_back(*info);
  return out;
}

inline constexpr const char* kDiagnosisSchema = "pod-sentry/diagnosis@1";

inline nlohmann::json diagnosis_to_json(const Diagnosis& d,
                                        const ClassRegistry& registry) {
  using nlohmann::json;
  json pods = json::array();
  for (const auto& p : d.pods) {
    json probs = json::object();
    for (const auto& [cls, v] : p.probabilities) probs[registry.name(cls)] = v;
    pods.push_back({{"box", box_to_json(p.box)},
                    {"convention", std::string(to_string(p.box.convention()))},
                    {"probs", std::move(probs)},
                    {"top", registry.name(p.top_class)}});
  }
  json refs = json::array();
  json knowledge = json::array();
  for (const auto& k : d.knowledge) {
    refs.push_back(registry.name(k.class_id));
    knowledge.push_back(knowledge_entry_to_json(k, registry));
  }
  return {{"schema", kDiagnosisSchema},
          {"image_id", d.image_id},
          {"pods", std::move(pods)},
          {"kb_refs", std::move(refs)},
          {"knowledge", std::move(knowledge)}};
}

// ---------------------------------------------------------------------------

// Image-level predicted class: top class of the most confident pod (lower
// class id on ties); nullopt for an image with no pods.
inline std::optional<ClassId> image_prediction(const Diagnosis& d) {
  std::optional<ClassId> pred;
  double best = -1.0;
  for (const auto& p : d.pods) {
    const double conf = p.probabilities.at(p.top_class);
    if (conf > best || (conf == best && pred && p.top_class < *pred)) {
      best = conf;
      pred = p.top_class;
    }
  }
  return pred;
}

// One-vs-rest counts per class over images, where TN is meaningful.
inline std::map<ClassId, ConfusionCounts> image_level_counts(
    const std::vector<Diagnosis>& diagnoses,
    const std::vector<ClassId>& truth_labels, const ClassRegistry& registry) {
  if (diagnoses.size() != truth_labels.size()) {
    throw ValidationError("image_level_counts: " +
                          std::to_string(diagnoses.size()) + " diagnoses vs " +
                          std::to_string(truth_labels.size()) + " labels");
  }
  std::map<ClassId, ConfusionCounts> out;
  for (const auto& e : registry.entries()) out[e.id] = {};
  for (std::size_t i = 0; i < diagnoses.size(); ++i) {
    const auto pred = image_prediction(diagnoses[i]);
    const ClassId truth = truth_labels[i];
    for (auto& [cls, c] : out) {
      const bool p = pred && *pred == cls;
      const bool t = truth == cls;
      if (p && t) {
        ++c.tp;
      } else if (p) {
        ++c.fp;
      } else if (t) {
        ++c.fn;
      } else {
        ++c.tn;
      }
    }
  }
  return out;
}

}  // namespace pod_sentry
