#include "pod_sentry/backend.hpp"

#include <algorithm>
#include <charconv>
#include <random>

#include <httplib.h>

#include "pod_sentry/image_io.hpp"
#include "pod_sentry/interchange.hpp"

namespace pod_sentry {

std::string to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::kFile: return "file";
    case BackendKind::kMock: return "mock";
    case BackendKind::kExternal: return "external";
  }
  return "";
}

namespace {

BackendKind kind_from_string(const std::string& s) {
  if (s == "file") return BackendKind::kFile;
  if (s == "mock") return BackendKind::kMock;
  if (s == "external") return BackendKind::kExternal;
  throw ValidationError("unknown backend kind '" + s + "'");
}

std::uint64_t parse_seed(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ValidationError("mock seed '" + s + "' is not an unsigned integer");
  }
  return v;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void check_outputs(const std::vector<DetectionItem>& dets) {
  for (std::size_t i = 0; i < dets.size(); ++i) {
    try {
      check_score(dets[i].score);
    } catch (const ValidationError& e) {
      throw ParseError("record " + std::to_string(i), e.what());
    }
  }
}

class FileBackend : public DetectionBackend {
 public:
  explicit FileBackend(const std::string& path) {
    for (auto& d : read_detections_file(path)) {
      by_image_[d.image_id].push_back(std::move(d));
    }
  }

  std::vector<DetectionItem> detect(const std::string& image_id,
                                    const Raster&) const override {
    auto it = by_image_.find(image_id);
    if (it == by_image_.end()) {
      throw NotFoundError("file backend has no detections for image '" +
                          image_id + "'");
    }
    return it->second;
  }

 private:
  std::map<std::string, std::vector<DetectionItem>> by_image_;
};

class MockBackend : public DetectionBackend {
 public:
  MockBackend(std::uint64_t seed, std::size_t classes)
      : seed_(seed), classes_(classes) {}

  std::vector<DetectionItem> detect(const std::string& image_id,
                                    const Raster& image) const override {
    std::mt19937_64 rng(seed_ ^ fnv1a(image_id));
    auto uniform = [&rng](double lo, double hi) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      return lo + (hi - lo) * u;
    };
    const double w_img = std::max(1, image.width());
    const double h_img = std::max(1, image.height());
    const MockBias bias;
    const int pods = 1 + static_cast<int>(rng() % 3);
    std::vector<DetectionItem> out;
    for (int p = 0; p < pods; ++p) {
      const double w = w_img * uniform(bias.min_width_fraction, bias.max_width_fraction);
      const double h = std::min(h_img * 0.9, w * uniform(bias.min_aspect, bias.max_aspect));
      const double x = uniform(0.0, w_img - w);
      const double y = uniform(0.0, h_img - h);
      const BoundingBox box(x, y, x + w, y + h);
      const auto dominant = static_cast<ClassId>(rng() % classes_);
      for (std::size_t c = 0; c < classes_; ++c) {
        const auto cls = static_cast<ClassId>(c);
        const double score = cls == dominant ? uniform(0.5, 1.0) : uniform(0.0, 0.3);
        out.push_back({image_id, cls, box, score});
      }
    }
    return out;
  }

 private:
  std::uint64_t seed_;
  std::size_t classes_;
};

class ExternalBackend : public DetectionBackend {
 public:
  explicit ExternalBackend(const std::map<std::string, std::string>& params) {
    const std::string& endpoint = params.at("endpoint");
    const auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) {
      throw ValidationError("external endpoint must be a URL: '" + endpoint + "'");
    }
    const auto path_start = endpoint.find('/', scheme_end + 3);
    base_ = endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
    if (auto it = params.find("timeout_s"); it != params.end()) {
      timeout_s_ = std::stoi(it->second);
    }
  }

  std::vector<DetectionItem> detect(const std::string& image_id,
                                    const Raster& image) const override {
    httplib::Client client(base_);
    client.set_connection_timeout(timeout_s_, 0);
    client.set_read_timeout(timeout_s_, 0);
    const auto png = encode_png(image);
    httplib::Headers headers{{"X-Image-Id", image_id}};
    const std::string target =
        path_ + (path_.find('?') == std::string::npos ? "?" : "&") +
        "image_id=" + httplib::detail::encode_query_param(image_id);
    auto res = client.Post(target, headers,
                           reinterpret_cast<const char*>(png.data()), png.size(),
                           "image/png");
    if (!res) {
      throw TransportError("external backend " + base_ + " unreachable: " +
                           httplib::to_string(res.error()));
    }
    if (res->status >= 500) {
      throw TransportError("external backend answered HTTP " +
                           std::to_string(res->status));
    }
    if (res->status != 200) {
      throw ValidationError("external backend rejected the request: HTTP " +
                            std::to_string(res->status));
    }
    auto dets = detections_from_json(parse_json_text(res->body, "external response"));
    check_outputs(dets);
    return dets;
  }

 private:
  std::string base_;
  std::string path_;
  int timeout_s_ = 10;
};

}  // namespace

void BackendDescriptor::validate() const {
  auto require = [&](const char* key) {
    auto it = parameters.find(key);
    if (it == parameters.end() || it->second.empty()) {
      throw ValidationError(to_string(kind) + " backend requires parameter '" +
                            key + "'");
    }
  };
  switch (kind) {
    case BackendKind::kFile: require("path"); break;
    case BackendKind::kMock:
      require("seed");
      parse_seed(parameters.at("seed"));
      break;
    case BackendKind::kExternal: require("endpoint"); break;
  }
}

BackendDescriptor BackendDescriptor::parse(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) {
    throw ValidationError("backend spec '" + spec +
                          "' must look like file:<path>, mock:<seed> or external:<url>");
  }
  BackendDescriptor d;
  d.kind = kind_from_string(spec.substr(0, colon));
  const std::string value = spec.substr(colon + 1);
  switch (d.kind) {
    case BackendKind::kFile: d.parameters["path"] = value; break;
    case BackendKind::kMock: d.parameters["seed"] = value; break;
    case BackendKind::kExternal: d.parameters["endpoint"] = value; break;
  }
  d.validate();
  return d;
}

BackendDescriptor BackendDescriptor::from_json(const nlohmann::json& j) {
  BackendDescriptor d;
  try {
    d.kind = kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("parameters")) {
      for (const auto& [k, v] : j.at("parameters").items()) {
        d.parameters[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("backend descriptor: ") + e.what());
  }
  d.validate();
  return d;
}

nlohmann::json BackendDescriptor::to_json() const {
  return {{"kind", to_string(kind)}, {"parameters", parameters}};
}

std::unique_ptr<DetectionBackend> make_backend(const BackendDescriptor& descriptor,
                                               const ClassRegistry& registry) {
  descriptor.validate();
  switch (descriptor.kind) {
    case BackendKind::kFile:
      return std::make_unique<FileBackend>(descriptor.parameters.at("path"));
    case BackendKind::kMock:
      if (registry.empty()) throw ValidationError("mock backend needs classes");
      return std::make_unique<MockBackend>(parse_seed(descriptor.parameters.at("seed")),
                                           registry.size());
    case BackendKind::kExternal:
      return std::make_unique<ExternalBackend>(descriptor.parameters);
  }
  throw ValidationError("unsupported backend kind");
}

}  // namespace pod_sentry
