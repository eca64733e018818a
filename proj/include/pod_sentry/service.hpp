#pragma once

// Diagnosis service: request handlers over a directory-tree case store, plus
// an HTTP front end exposing them under /v1.
//
// Store layout:
//   <store>/cases/<case_id>/original.bin
//   <store>/cases/<case_id>/processed.png
//   <store>/cases/<case_id>/case.json      written last, via rename
//   <store>/feedback.jsonl                 append-only
//   <store>/eval/latest.json

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pod_sentry/backend.hpp"
#include "pod_sentry/diagnosis.hpp"

namespace pod_sentry {

struct ServiceConfig {
  std::map<std::string, BackendDescriptor> backends;
  std::string default_backend;
  std::filesystem::path store_path = "store";
  std::string host = "127.0.0.1";
  int port = 8080;
  int target_size = 640;
  DiagnosisConfig diagnosis;
  ClassRegistry registry = ClassRegistry::cocoa_default();
  std::optional<std::filesystem::path> knowledge_base;
  std::optional<std::filesystem::path> ui_dir;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

std::optional<std::string> process_env(const std::string& name);

// Relative paths in the file resolve against the working directory.
// POD_SENTRY_STORE and POD_SENTRY_LISTEN ("host:port") override the file.
ServiceConfig service_config_from_json(const nlohmann::json& doc,
                                       const EnvLookup& env = process_env);
ServiceConfig load_service_config(const std::filesystem::path& path,
                                  const EnvLookup& env = process_env);

std::string sha256_hex(std::string_view data);

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

class CaseStore {
 public:
  explicit CaseStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path case_dir(const std::string& id) const;

  std::optional<std::string> read_case(const std::string& id) const;

  // Writes the images first and the case document last, atomically.
  void write_case(const std::string& id, const std::string& original,
                  const std::vector<std::uint8_t>& processed_png,
                  const nlohmann::json& case_doc);

  nlohmann::json append_feedback(nlohmann::json record);
  std::vector<nlohmann::json> feedback_for(const std::string& case_id) const;

  std::optional<std::string> latest_eval() const;
  void publish_eval(const std::string& report_text);

 private:
  std::filesystem::path root_;
  mutable std::mutex feedback_mu_;
};

class DiagnosisService {
 public:
  explicit DiagnosisService(ServiceConfig config);

  HttpResponse diagnose(const std::string& image_bytes,
                        const std::optional<std::string>& image_id,
                        const std::optional<std::string>& backend) const;
  HttpResponse post_feedback(const std::string& case_id, const std::string& body) const;
  HttpResponse get_case(const std::string& case_id) const;
  HttpResponse get_feedback(const std::string& case_id) const;
  HttpResponse latest_eval() const;

  const ServiceConfig& config() const { return config_; }
  CaseStore& store() const { return *store_; }

 private:
  std::mutex& case_mutex(const std::string& id) const;

  ServiceConfig config_;
  KnowledgeBase kb_;
  std::map<std::string, std::unique_ptr<DetectionBackend>> backends_;
  std::unique_ptr<CaseStore> store_;
  mutable std::mutex locks_mu_;
  mutable std::map<std::string, std::unique_ptr<std::mutex>> case_locks_;
};

// Routes:
//   POST /v1/diagnose[?image_id=..&backend=..]   body: raw image bytes
//   GET  /v1/cases/{id}
//   POST /v1/cases/{id}/feedback
//   GET  /v1/cases/{id}/feedback
//   GET  /v1/eval/latest
class HttpServer {
 public:
  explicit HttpServer(DiagnosisService& service);
  ~HttpServer();

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pod_sentry
