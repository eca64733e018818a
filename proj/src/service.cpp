#include "pod_sentry/service.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <openssl/evp.h>

#include "pod_sentry/image_io.hpp"
#include "pod_sentry/interchange.hpp"
#include "pod_sentry/preprocess.hpp"

namespace pod_sentry {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCaseSchema = "pod-sentry/case@1";
constexpr const char* kFeedbackSchema = "pod-sentry/feedback@1";
constexpr const char* kDiagnoseResponseSchema = "pod-sentry/diagnose-response@1";

HttpResponse json_response(int status, const json& body) {
  return {status, "application/json", body.dump() + "\n"};
}

HttpResponse error_response(int status, const std::string& code,
                            const std::string& message, bool retriable = false) {
  return json_response(status, {{"error",
                                 {{"code", code},
                                  {"message", message},
                                  {"retriable", retriable}}}});
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Case ids are hex digests; anything else cannot name a case.
bool plausible_case_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         std::all_of(id.begin(), id.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

void write_atomically(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  write_text_file(tmp, text);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot publish '" + path.string() + "': " + ec.message());
}

std::pair<std::string, int> split_listen(const std::string& listen) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) {
    throw ValidationError("listen address '" + listen + "' must be host:port");
  }
  try {
    return {listen.substr(0, colon), std::stoi(listen.substr(colon + 1))};
  } catch (const std::exception&) {
    throw ValidationError("listen address '" + listen + "' has a bad port");
  }
}

}  // namespace

std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str()); v != nullptr && *v != '\0') {
    return std::string(v);
  }
  return std::nullopt;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

ServiceConfig service_config_from_json(const json& doc, const EnvLookup& env) {
  ServiceConfig c;
  try {
    if (doc.contains("classes")) c.registry = registry_from_json(doc["classes"]);
    if (doc.contains("backends")) {
      for (const auto& [name, d] : doc["backends"].items()) {
        c.backends[name] = BackendDescriptor::from_json(d);
      }
    }
    if (doc.contains("backend")) {
      c.backends["default"] = BackendDescriptor::from_json(doc["backend"]);
      c.default_backend = "default";
    }
    c.default_backend = doc.value("default_backend", c.default_backend);
    if (c.default_backend.empty() && !c.backends.empty()) {
      c.default_backend = c.backends.begin()->first;
    }
    if (c.backends.empty()) throw ValidationError("no backend configured");
    if (!c.backends.count(c.default_backend)) {
      throw ValidationError("default_backend '" + c.default_backend +
                            "' is not configured");
    }
    c.store_path = doc.value("store_path", c.store_path.string());
    if (doc.contains("listen")) {
      std::tie(c.host, c.port) = split_listen(doc["listen"].get<std::string>());
    }
    c.target_size = doc.value("target_size", c.target_size);
    if (doc.contains("diagnosis")) {
      c.diagnosis.nms_iou = doc["diagnosis"].value("nms_iou", c.diagnosis.nms_iou);
      c.diagnosis.score_floor =
          doc["diagnosis"].value("score_floor", c.diagnosis.score_floor);
    }
    if (doc.contains("knowledge_base")) {
      c.knowledge_base = doc["knowledge_base"].get<std::string>();
    }
    if (doc.contains("ui_dir")) c.ui_dir = doc["ui_dir"].get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("service config: ") + e.what());
  }
  if (auto store = env("POD_SENTRY_STORE")) c.store_path = *store;
  if (auto listen = env("POD_SENTRY_LISTEN")) {
    std::tie(c.host, c.port) = split_listen(*listen);
  }
  if (c.target_size <= 0) throw ValidationError("target_size must be positive");
  return c;
}

ServiceConfig load_service_config(const fs::path& path, const EnvLookup& env) {
  return service_config_from_json(parse_json_text(read_text_file(path), path.string()),
                                  env);
}

// ---------------------------------------------------------------------------

CaseStore::CaseStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_ / "cases", ec);
  if (ec) throw IoError("cannot create store '" + root_.string() + "': " + ec.message());
}

fs::path CaseStore::case_dir(const std::string& id) const { return root_ / "cases" / id; }

std::optional<std::string> CaseStore::read_case(const std::string& id) const {
  const fs::path p = case_dir(id) / "case.json";
  if (!fs::exists(p)) return std::nullopt;
  return read_text_file(p);
}

void CaseStore::write_case(const std::string& id, const std::string& original,
                           const std::vector<std::uint8_t>& processed_png,
                           const json& case_doc) {
  const fs::path dir = case_dir(id);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  write_binary_file(dir / "original.bin",
                    std::span(reinterpret_cast<const std::uint8_t*>(original.data()),
                              original.size()));
  write_binary_file(dir / "processed.png", processed_png);
  write_atomically(dir / "case.json", case_doc.dump(2) + "\n");
}

json CaseStore::append_feedback(json record) {
  std::lock_guard lock(feedback_mu_);
  const fs::path log = root_ / "feedback.jsonl";
  std::size_t n = 0;
  {
    std::ifstream in(log);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) ++n;
    }
  }
  char id[32];
  std::snprintf(id, sizeof(id), "fb-%06zu", n + 1);
  record["id"] = id;
  std::ofstream out(log, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to '" + log.string() + "'");
  out << record.dump() << "\n";
  out.flush();
  if (!out) throw IoError("append failed for '" + log.string() + "'");
  return record;
}

std::vector<json> CaseStore::feedback_for(const std::string& case_id) const {
  std::lock_guard lock(feedback_mu_);
  std::vector<json> out;
  std::ifstream in(root_ / "feedback.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto rec = json::parse(line, nullptr, false);
    if (!rec.is_discarded() && rec.value("case_id", "") == case_id) {
      out.push_back(std::move(rec));
    }
  }
  return out;
}

std::optional<std::string> CaseStore::latest_eval() const {
  const fs::path p = root_ / "eval" / "latest.json";
  if (!fs::exists(p)) return std::nullopt;
  return read_text_file(p);
}

void CaseStore::publish_eval(const std::string& report_text) {
  std::error_code ec;
  fs::create_directories(root_ / "eval", ec);
  write_atomically(root_ / "eval" / "latest.json", report_text);
}

// ---------------------------------------------------------------------------

DiagnosisService::DiagnosisService(ServiceConfig config)
    : config_(std::move(config)),
      kb_(config_.knowledge_base
              ? knowledge_base_from_json(
                    parse_json_text(read_text_file(*config_.knowledge_base),
                                    config_.knowledge_base->string()),
                    config_.registry)
              : default_knowledge_base()),
      store_(std::make_unique<CaseStore>(config_.store_path)) {
  for (const auto& [name, d] : config_.backends) {
    backends_[name] = make_backend(d, config_.registry);
  }
}

std::mutex& DiagnosisService::case_mutex(const std::string& id) const {
  std::lock_guard lock(locks_mu_);
  auto& m = case_locks_[id];
  if (!m) m = std::make_unique<std::mutex>();
  return *m;
}

HttpResponse DiagnosisService::diagnose(const std::string& image_bytes,
                                        const std::optional<std::string>& image_id_in,
                                        const std::optional<std::string>& backend_in) const {
  const std::string backend_name = backend_in.value_or(config_.default_backend);
  auto be = backends_.find(backend_name);
  if (be == backends_.end()) {
    return error_response(400, "unknown_backend",
                          "backend '" + backend_name + "' is not configured");
  }

  Raster raw;
  try {
    raw = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(image_bytes.data()),
                                 image_bytes.size()));
  } catch (const DecodeError& e) {
    return error_response(422, "undecodable_image", e.what());
  }

  const std::string image_id =
      image_id_in.value_or("img-" + sha256_hex(image_bytes).substr(0, 16));
  const json identity{{"image_id", image_id},
                      {"backend", backend_name},
                      {"descriptor", config_.backends.at(backend_name).to_json()},
                      {"target_size", config_.target_size},
                      {"nms_iou", config_.diagnosis.nms_iou},
                      {"score_floor", config_.diagnosis.score_floor}};
  const std::string case_id = sha256_hex(image_bytes + "\n" + identity.dump()).substr(0, 32);

  std::lock_guard lock(case_mutex(case_id));
  if (auto existing = store_->read_case(case_id)) {
    const json doc = json::parse(*existing);
    return json_response(200, {{"schema", kDiagnoseResponseSchema},
                               {"case_id", case_id},
                               {"diagnosis", doc.at("diagnosis")}});
  }

  const Raster processed = resize(crop_to_square(raw), config_.target_size);
  std::vector<DetectionItem> dets;
  try {
    dets = be->second->detect(image_id, processed);
  } catch (const TransportError& e) {
    return error_response(502, "backend_unreachable", e.what(), true);
  } catch (const Error& e) {
    return error_response(502, "backend_error", e.what(), false);
  }

  json diag_doc;
  try {
    diag_doc = diagnosis_to_json(
        pod_sentry::diagnose(image_id, dets, config_.registry, kb_, config_.diagnosis),
        config_.registry);
  } catch (const Error& e) {
    return error_response(502, "invalid_detections", e.what(), false);
  }

  const json case_doc{{"schema", kCaseSchema},
                      {"case_id", case_id},
                      {"image_id", image_id},
                      {"original_path", "cases/" + case_id + "/original.bin"},
                      {"processed_path", "cases/" + case_id + "/processed.png"},
                      {"diagnosis", diag_doc},
                      {"backend",
                       {{"name", backend_name},
                        {"descriptor", config_.backends.at(backend_name).to_json()}}},
                      {"created_at", utc_now()}};
  try {
    store_->write_case(case_id, image_bytes, encode_png(processed), case_doc);
  } catch (const Error& e) {
    return error_response(500, "store_failure", e.what(), true);
  }
  return json_response(200, {{"schema", kDiagnoseResponseSchema},
                             {"case_id", case_id},
                             {"diagnosis", diag_doc}});
}

HttpResponse DiagnosisService::post_feedback(const std::string& case_id,
                                             const std::string& body) const {
  if (!plausible_case_id(case_id)) {
    return error_response(404, "not_found", "unknown case '" + case_id + "'");
  }
  std::lock_guard lock(case_mutex(case_id));
  const auto stored = store_->read_case(case_id);
  if (!stored) return error_response(404, "not_found", "unknown case '" + case_id + "'");
  const json case_doc = json::parse(*stored);

  const json req = json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object()) {
    return error_response(400, "invalid_feedback", "body must be a JSON object");
  }
  const std::string verdict = req.value("verdict", "");
  if (verdict != "not_the_result" && verdict != "not_the_disease") {
    return error_response(400, "invalid_feedback",
                          "verdict must be not_the_result or not_the_disease");
  }
  json record{{"schema", kFeedbackSchema},
              {"case_id", case_id},
              {"image_id", case_doc.at("image_id")},
              {"submitted_at", utc_now()},
              {"verdict", verdict}};
  if (req.contains("pod_index") && !req["pod_index"].is_null()) {
    const std::size_t pods = case_doc.at("diagnosis").at("pods").size();
    if (!req["pod_index"].is_number_integer() || req["pod_index"].get<long long>() < 0 ||
        req["pod_index"].get<long long>() >= static_cast<long long>(pods)) {
      return error_response(400, "invalid_feedback",
                            "pod_index " + req["pod_index"].dump() + " does not name one of " +
                                std::to_string(pods) + " pod(s)");
    }
    record["pod_index"] = req["pod_index"];
  }
  if (req.contains("free_text") && !req["free_text"].is_null()) {
    if (!req["free_text"].is_string()) {
      return error_response(400, "invalid_feedback", "free_text must be a string");
    }
    record["free_text"] = req["free_text"];
  }
  // Idempotency key is case + verdict: a repeat returns the first record.
  for (auto& prior : store_->feedback_for(case_id)) {
    if (prior.value("verdict", "") == verdict) return json_response(200, prior);
  }
  try {
    return json_response(201, store_->append_feedback(std::move(record)));
  } catch (const Error& e) {
    return error_response(500, "store_failure", e.what(), true);
  }
}

HttpResponse DiagnosisService::get_case(const std::string& case_id) const {
  if (!plausible_case_id(case_id)) {
    return error_response(404, "not_found", "unknown case '" + case_id + "'");
  }
  auto stored = store_->read_case(case_id);
  if (!stored) return error_response(404, "not_found", "unknown case '" + case_id + "'");
  return {200, "application/json", std::move(*stored)};
}

HttpResponse DiagnosisService::get_feedback(const std::string& case_id) const {
  if (!plausible_case_id(case_id) || !store_->read_case(case_id)) {
    return error_response(404, "not_found", "unknown case '" + case_id + "'");
  }
  return json_response(200, {{"schema", "pod-sentry/feedback-list@1"},
                             {"case_id", case_id},
                             {"feedback", store_->feedback_for(case_id)}});
}

HttpResponse DiagnosisService::latest_eval() const {
  auto report = store_->latest_eval();
  if (!report) return error_response(404, "not_found", "no evaluation report published");
  return {200, "application/json", std::move(*report)};
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  explicit Impl(DiagnosisService& s) : service(s) {}
  DiagnosisService& service;
  httplib::Server server;
};

namespace {

void send(httplib::Response& res, const HttpResponse& r) {
  res.status = r.status;
  res.set_content(r.body, r.content_type);
}

std::optional<std::string> query(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  return req.get_param_value(key);
}

}  // namespace

HttpServer::HttpServer(DiagnosisService& service)
    : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  DiagnosisService* svc = &service;
  srv.Post("/v1/diagnose", [svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc->diagnose(req.body, query(req, "image_id"), query(req, "backend")));
  });
  srv.Get(R"(/v1/cases/([^/]+))", [svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc->get_case(req.matches[1]));
  });
  srv.Post(R"(/v1/cases/([^/]+)/feedback)",
           [svc](const httplib::Request& req, httplib::Response& res) {
             send(res, svc->post_feedback(req.matches[1], req.body));
           });
  srv.Get(R"(/v1/cases/([^/]+)/feedback)",
          [svc](const httplib::Request& req, httplib::Response& res) {
            send(res, svc->get_feedback(req.matches[1]));
          });
  srv.Get("/v1/eval/latest", [svc](const httplib::Request&, httplib::Response& res) {
    send(res, svc->latest_eval());
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res,
                               std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error_response(500, "internal", what));
  });
  if (service.config().ui_dir) srv.set_mount_point("/", service.config().ui_dir->string());
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace pod_sentry
