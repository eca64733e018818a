#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include <httplib.h>

#include "pod_sentry/image_io.hpp"
#include "pod_sentry/service.hpp"

using namespace pod_sentry;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = POD_SENTRY_FIXTURES;

std::string fixture_bytes(const std::string& name) {
  const auto v = read_binary_file(kFixtures + "/" + name);
  return {v.begin(), v.end()};
}

fs::path fresh_dir(const std::string& tag) {
  static std::atomic<int> n{0};
  const fs::path p = fs::temp_directory_path() /
                     ("pod_sentry_service_" + tag + "_" + std::to_string(::getpid()) + "_" +
                      std::to_string(n++));
  fs::remove_all(p);
  return p;
}

ServiceConfig file_config(const fs::path& store) {
  return service_config_from_json(
      {{"backends",
        {{"golden", {{"kind", "file"}, {"parameters", {{"path", kFixtures + "/healthy_pod_detections.json"}}}}},
         {"mock", {{"kind", "mock"}, {"parameters", {{"seed", "7"}}}}}}},
       {"default_backend", "golden"},
       {"store_path", store.string()}},
      [](const std::string&) { return std::nullopt; });
}

struct Diagnosed {
  HttpResponse response;
  json body;
  std::string case_id;
};

Diagnosed diagnose_golden(const DiagnosisService& svc) {
  Diagnosed d;
  d.response = svc.diagnose(fixture_bytes("healthy_pod.png"), "healthy_pod", std::nullopt);
  d.body = json::parse(d.response.body);
  d.case_id = d.body.value("case_id", "");
  return d;
}

}  // namespace

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Config, ParsingAndEnvOverrides) {
  const json doc{{"backend", {{"kind", "mock"}, {"parameters", {{"seed", "1"}}}}},
                 {"listen", "0.0.0.0:9000"},
                 {"store_path", "s1"},
                 {"diagnosis", {{"score_floor", 0.4}}}};
  const auto plain = service_config_from_json(doc, [](const std::string&) { return std::nullopt; });
  EXPECT_EQ(plain.default_backend, "default");
  EXPECT_EQ(plain.port, 9000);
  EXPECT_EQ(plain.host, "0.0.0.0");
  EXPECT_EQ(plain.store_path, "s1");
  EXPECT_DOUBLE_EQ(plain.diagnosis.score_floor, 0.4);
  EXPECT_DOUBLE_EQ(plain.diagnosis.nms_iou, 0.5);

  const auto env = service_config_from_json(doc, [](const std::string& k) -> std::optional<std::string> {
    if (k == "POD_SENTRY_STORE") return "elsewhere";
    if (k == "POD_SENTRY_LISTEN") return "127.0.0.1:8123";
    return std::nullopt;
  });
  EXPECT_EQ(env.store_path, "elsewhere");
  EXPECT_EQ(env.port, 8123);

  auto none = [](const std::string&) { return std::nullopt; };
  EXPECT_THROW(service_config_from_json(json::object(), none), ValidationError);
  EXPECT_THROW(service_config_from_json({{"backends", {{"a", {{"kind", "mock"}, {"parameters", {{"seed", "1"}}}}}}},
                                         {"default_backend", "b"}},
                                        none),
               ValidationError);
  EXPECT_THROW(service_config_from_json({{"backend", {{"kind", "mock"}, {"parameters", {{"seed", "1"}}}}},
                                         {"listen", "nowhere"}},
                                        none),
               ValidationError);
}

TEST(Service, GoldenHealthyPod) {
  const auto store = fresh_dir("golden");
  DiagnosisService svc(file_config(store));
  const auto d = diagnose_golden(svc);
  ASSERT_EQ(d.response.status, 200) << d.response.body;
  EXPECT_EQ(d.body["schema"], "pod-sentry/diagnose-response@1");
  EXPECT_EQ(d.case_id.size(), 32u);
  const auto& pods = d.body["diagnosis"]["pods"];
  ASSERT_EQ(pods.size(), 1u);
  EXPECT_EQ(pods[0]["top"], "healthy");
  EXPECT_NEAR(pods[0]["probs"]["healthy"].get<double>(), 0.96, 1e-12);
  EXPECT_NEAR(pods[0]["probs"]["monilia"].get<double>(), 0.02, 1e-12);
  EXPECT_NEAR(pods[0]["probs"]["black_pod"].get<double>(), 0.02, 1e-12);
  EXPECT_TRUE(d.body["diagnosis"]["knowledge"].empty());

  // Store layout.
  const fs::path dir = store / "cases" / d.case_id;
  EXPECT_TRUE(fs::exists(dir / "case.json"));
  EXPECT_EQ(fixture_bytes("healthy_pod.png"),
            [&] { auto v = read_binary_file(dir / "original.bin"); return std::string(v.begin(), v.end()); }());
  const auto processed = read_image(dir / "processed.png");
  EXPECT_EQ(processed.width(), 640);
  EXPECT_EQ(processed.height(), 640);

  // Same request, same store: same response. Fresh store: byte-identical.
  EXPECT_EQ(diagnose_golden(svc).response.body, d.response.body);
  const auto other_store = fresh_dir("golden2");
  DiagnosisService svc2(file_config(other_store));
  EXPECT_EQ(diagnose_golden(svc2).response.body, d.response.body);
  fs::remove_all(store);
  fs::remove_all(other_store);
}

TEST(Service, CaseIsServedVerbatim) {
  const auto store = fresh_dir("case");
  DiagnosisService svc(file_config(store));
  const auto d = diagnose_golden(svc);
  const auto c = svc.get_case(d.case_id);
  ASSERT_EQ(c.status, 200);
  EXPECT_EQ(c.body, *svc.store().read_case(d.case_id));
  const auto doc = json::parse(c.body);
  EXPECT_EQ(doc["schema"], "pod-sentry/case@1");
  EXPECT_EQ(doc["diagnosis"], d.body["diagnosis"]);
  EXPECT_EQ(doc["backend"]["name"], "golden");
  EXPECT_EQ(svc.get_case("0123abcd").status, 404);
  EXPECT_EQ(svc.get_case("../etc").status, 404);
  fs::remove_all(store);
}

TEST(Service, FeedbackRoundTrip) {
  const auto store = fresh_dir("feedback");
  DiagnosisService svc(file_config(store));
  const auto d = diagnose_golden(svc);

  const auto first = svc.post_feedback(d.case_id, R"({"verdict":"not_the_disease","pod_index":0})");
  ASSERT_EQ(first.status, 201) << first.body;
  const auto rec = json::parse(first.body);
  EXPECT_EQ(rec["id"], "fb-000001");
  EXPECT_EQ(rec["case_id"], d.case_id);
  EXPECT_EQ(rec["image_id"], "healthy_pod");
  EXPECT_EQ(rec["pod_index"], 0);

  // A double submit gives back the first record.
  const auto again = svc.post_feedback(d.case_id, R"({"verdict":"not_the_disease","pod_index":0})");
  EXPECT_EQ(again.status, 200);
  EXPECT_EQ(json::parse(again.body), rec);
  // The key is case + verdict, so the pod index does not make a new record.
  EXPECT_EQ(json::parse(svc.post_feedback(d.case_id, R"({"verdict":"not_the_disease"})").body), rec);

  const auto whole = svc.post_feedback(d.case_id, R"({"verdict":"not_the_result","free_text":"blurry"})");
  ASSERT_EQ(whole.status, 201);
  EXPECT_EQ(json::parse(whole.body)["id"], "fb-000002");

  EXPECT_EQ(svc.post_feedback(d.case_id, R"({"verdict":"not_the_result","pod_index":5})").status, 400);
  EXPECT_EQ(svc.post_feedback(d.case_id, R"({"verdict":"wrong"})").status, 400);
  EXPECT_EQ(svc.post_feedback(d.case_id, "nope").status, 400);
  EXPECT_EQ(svc.post_feedback(d.case_id, R"({"verdict":"not_the_result","free_text":3})").status, 400);
  EXPECT_EQ(svc.post_feedback("ffff0000", R"({"verdict":"not_the_result"})").status, 404);

  const auto list = json::parse(svc.get_feedback(d.case_id).body);
  ASSERT_EQ(list["feedback"].size(), 2u);
  EXPECT_EQ(list["feedback"][0], rec);
  EXPECT_EQ(svc.get_feedback("ffff0000").status, 404);

  // The case document is untouched by feedback.
  EXPECT_EQ(json::parse(*svc.store().read_case(d.case_id))["diagnosis"], d.body["diagnosis"]);
  fs::remove_all(store);
}

TEST(Service, EvalPublishing) {
  const auto store = fresh_dir("eval");
  DiagnosisService svc(file_config(store));
  EXPECT_EQ(svc.latest_eval().status, 404);
  const std::string report = R"({"schema":"pod-sentry/eval@1","x":1})" "\n";
  svc.store().publish_eval(report);
  const auto r = svc.latest_eval();
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body, report);
  fs::remove_all(store);
}

TEST(Service, BadRequests) {
  const auto store = fresh_dir("bad");
  DiagnosisService svc(file_config(store));
  const auto corrupt = svc.diagnose("definitely not an image", std::nullopt, std::nullopt);
  EXPECT_EQ(corrupt.status, 422);
  EXPECT_EQ(json::parse(corrupt.body)["error"]["code"], "undecodable_image");
  EXPECT_EQ(svc.diagnose(fixture_bytes("healthy_pod.png"), "x", "gpu").status, 400);
  // File backend has nothing for this id.
  const auto missing = svc.diagnose(fixture_bytes("healthy_pod.png"), "unknown", std::nullopt);
  EXPECT_EQ(missing.status, 502);
  EXPECT_FALSE(json::parse(missing.body)["error"]["retriable"].get<bool>());
  EXPECT_FALSE(fs::exists(store / "cases") && !fs::is_empty(store / "cases"));
  fs::remove_all(store);
}

TEST(Service, ZeroDetectionsGiveNoPods) {
  const auto store = fresh_dir("empty");
  const auto dets = fresh_dir("empty_dets");
  fs::create_directories(dets);
  write_text_file(dets / "d.json", R"({"schema":"pod-sentry/detections@1","detections":[
      {"image_id":"faint","class_id":0,"score":0.1,"box":{"x_min":1,"y_min":1,"x_max":5,"y_max":5}}]})");
  auto cfg = service_config_from_json(
      {{"backend", {{"kind", "file"}, {"parameters", {{"path", (dets / "d.json").string()}}}}},
       {"store_path", store.string()}},
      [](const std::string&) { return std::nullopt; });
  DiagnosisService svc(cfg);
  const auto r = svc.diagnose(fixture_bytes("healthy_pod.png"), "faint", std::nullopt);
  ASSERT_EQ(r.status, 200) << r.body;
  const auto body = json::parse(r.body);
  EXPECT_TRUE(body["diagnosis"]["pods"].empty());
  EXPECT_TRUE(body["diagnosis"]["knowledge"].empty());
  fs::remove_all(store);
  fs::remove_all(dets);
}

TEST(Service, MockBackendAndDefaultImageId) {
  const auto store = fresh_dir("mock");
  DiagnosisService svc(file_config(store));
  const auto bytes = fixture_bytes("healthy_pod.png");
  const auto a = svc.diagnose(bytes, std::nullopt, "mock");
  ASSERT_EQ(a.status, 200) << a.body;
  const auto doc = json::parse(a.body);
  EXPECT_EQ(doc["diagnosis"]["image_id"], "img-" + sha256_hex(bytes).substr(0, 16));
  EXPECT_FALSE(doc["diagnosis"]["pods"].empty());
  EXPECT_EQ(svc.diagnose(bytes, std::nullopt, "mock").body, a.body);
  // A different backend is a different case.
  EXPECT_NE(doc["case_id"], json::parse(svc.diagnose(bytes, "healthy_pod", "golden").body)["case_id"]);
  fs::remove_all(store);
}

TEST(Http, RoundTripOverLoopback) {
  const auto store = fresh_dir("http");
  DiagnosisService svc(file_config(store));
  HttpServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  std::thread t([&] { server.listen(); });

  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(10, 0);
  httplib::Result posted;
  for (int attempt = 0; attempt < 50 && !posted; ++attempt) {
    posted = client.Post("/v1/diagnose?image_id=healthy_pod", fixture_bytes("healthy_pod.png"),
                         "application/octet-stream");
    if (!posted) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  ASSERT_TRUE(posted);
  EXPECT_EQ(posted->status, 200);
  EXPECT_EQ(posted->body, diagnose_golden(svc).response.body);
  const std::string id = json::parse(posted->body)["case_id"];

  auto got = client.Get(("/v1/cases/" + id).c_str());
  ASSERT_TRUE(got);
  EXPECT_EQ(got->body, *svc.store().read_case(id));

  auto fb = client.Post(("/v1/cases/" + id + "/feedback").c_str(),
                        R"({"verdict":"not_the_result"})", "application/json");
  ASSERT_TRUE(fb);
  EXPECT_EQ(fb->status, 201);
  auto listed = client.Get(("/v1/cases/" + id + "/feedback").c_str());
  ASSERT_TRUE(listed);
  EXPECT_EQ(json::parse(listed->body)["feedback"].size(), 1u);

  auto ev = client.Get("/v1/eval/latest");
  ASSERT_TRUE(ev);
  EXPECT_EQ(ev->status, 404);

  server.stop();
  t.join();
  fs::remove_all(store);
}
