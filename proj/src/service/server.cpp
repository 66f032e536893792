#include "glandscreen/service/server.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <httplib.h>
#include <openssl/evp.h>
#include <opencv2/imgcodecs.hpp>

#include "glandscreen/error.hpp"
#include "glandscreen/explainer.hpp"
#include "glandscreen/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace glandscreen::service {

namespace {

/// Carries an HTTP status out of a handler.
struct HttpError {
  int status;
  std::string code;
  std::string message;
};

[[noreturn]] void fail(int status, std::string code, std::string message) {
  throw HttpError{status, std::move(code), std::move(message)};
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code,
                const std::string& message) {
  send_json(res, {{"error", {{"code", code}, {"message", message}}}}, status);
}

/// Extension for the accepted upload formats, by magic bytes; empty if unsupported.
std::string sniff_format(const std::string& b) {
  auto starts = [&](std::string_view magic) {
    return b.size() >= magic.size() && std::string_view(b).substr(0, magic.size()) == magic;
  };
  if (starts("\x89PNG\r\n\x1a\n")) return "png";
  if (starts("\xFF\xD8\xFF")) return "jpg";
  if (starts("BM")) return "bmp";
  if (starts(std::string_view("II*\0", 4)) || starts(std::string_view("MM\0*", 4))) return "tif";
  return {};
}

std::optional<std::string> form_field(const httplib::Request& req, const std::string& name) {
  if (req.has_file(name)) return req.get_file_value(name).content;
  if (req.has_param(name)) return req.get_param_value(name);
  return std::nullopt;
}

double parse_threshold(const std::string& s) {
  double v = 0.0;
  std::size_t used = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v) || v < 0.0 || v > 1.0) {
    fail(400, "InvalidArgument", "threshold must be a number in [0, 1]");
  }
  return v;
}

int parse_target_class(const json& v) {
  if (v.is_number_integer()) {
    const int c = v.get<int>();
    if (c == 0 || c == 1) return c;
  } else if (v.is_string()) {
    try {
      return static_cast<int>(class_index(label_from_string(v.get<std::string>())));
    } catch (const Error&) {
    }
  }
  fail(400, "InvalidArgument", "target_class must be 0, 1, \"abnormal\" or \"normal\"");
}

std::string new_case_id() {
  thread_local std::mt19937_64 gen(std::random_device{}() ^
                                   static_cast<std::uint64_t>(
                                       std::chrono::steady_clock::now().time_since_epoch().count()));
  static constexpr char kHex[] = "0123456789abcdef";
  std::string id(16, '0');
  std::uint64_t v = gen();
  for (auto& c : id) {
    c = kHex[v & 0xF];
    v >>= 4;
  }
  return id;
}

void write_atomically(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp" + new_case_id();
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_heatmap_png(const fs::path& path, const explain::Heatmap& h) {
  cv::Mat gray;
  h.values.convertTo(gray, CV_8U, 255.0);
  fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), gray)) {
    throw Error(ErrorCode::IoError, "cannot write " + path.string());
  }
}

std::string content_type_for(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".jpg") return "image/jpeg";
  if (ext == ".bmp") return "image/bmp";
  if (ext == ".tif") return "image/tiff";
  if (ext == ".json") return "application/json";
  return "application/octet-stream";
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoError, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 0xF];
  }
  return out;
}

double effective_threshold(const ServerOptions& opts, const LoadedModel& model) {
  if (opts.default_threshold) return *opts.default_threshold;
  if (model.balanced_threshold) return *model.balanced_threshold;
  return kFallbackThreshold;
}

struct Server::Impl {
  ModelRegistry& registry;
  CaseStore& store;
  ServerOptions opts;
  httplib::Server http;
  std::mutex inflight_mutex;
  std::set<std::string> inflight;

  Impl(ModelRegistry& r, CaseStore& s, ServerOptions o)
      : registry(r), store(s), opts(std::move(o)) {}

  /// Marks an explanation as running; a second claim on the same key yields 409.
  class Claim {
   public:
    Claim(Impl& impl, std::string key) : impl_(impl), key_(std::move(key)) {
      std::lock_guard lock(impl_.inflight_mutex);
      if (!impl_.inflight.insert(key_).second) {
        fail(409, "InProgress", "an explanation is already running; poll again shortly");
      }
    }
    ~Claim() {
      std::lock_guard lock(impl_.inflight_mutex);
      impl_.inflight.erase(key_);
    }
    Claim(const Claim&) = delete;
    Claim& operator=(const Claim&) = delete;

   private:
    Impl& impl_;
    std::string key_;
  };

  std::shared_ptr<LoadedModel> model_or_fail(const std::string& id) {
    ModelRegistry::Lookup status{};
    auto lm = registry.get(id, status);
    if (status == ModelRegistry::Lookup::Unknown) fail(404, "UnknownModel", "unknown model '" + id + "'");
    if (!lm) fail(503, "ModelLoading", "model is not loaded yet");
    return lm;
  }

  struct Upload {
    std::string bytes;
    std::string ext;
    RgbImage image;
    std::string sha;
  };

  Upload read_upload(const httplib::Request& req) {
    if (!req.is_multipart_form_data()) {
      fail(400, "InvalidArgument", "expected multipart/form-data with an 'image' field");
    }
    std::string field = req.has_file("image") ? "image" : req.has_file("file") ? "file" : "";
    if (field.empty()) fail(400, "InvalidArgument", "missing 'image' field");
    Upload up;
    up.bytes = req.get_file_value(field).content;
    if (up.bytes.size() > opts.max_upload_bytes) {
      fail(400, "TooLarge", "image exceeds the upload limit");
    }
    up.ext = sniff_format(up.bytes);
    if (up.ext.empty()) fail(400, "UnreadableFile", "unsupported format; expected PNG, JPEG, BMP or TIFF");
    try {
      up.image = decode_image(std::vector<unsigned char>(up.bytes.begin(), up.bytes.end()));
    } catch (const Error& e) {
      fail(400, "UnreadableFile", e.what());
    }
    up.sha = sha256_hex(up.bytes);
    return up;
  }

  std::string store_image(const Upload& up) {
    const std::string rel = "images/" + up.sha + "." + up.ext;
    const fs::path abs = opts.data_dir / rel;
    if (!fs::exists(abs)) write_atomically(abs, up.bytes);
    return rel;
  }

  void predict(const httplib::Request& req, httplib::Response& res) {
    Upload up = read_upload(req);
    const std::string model_id = form_field(req, "model_id").value_or("");
    auto lm = model_or_fail(model_id);
    const std::string resolved_id = model_id.empty() ? registry.default_id() : model_id;
    const auto th_field = form_field(req, "threshold");
    const double threshold =
        th_field && !th_field->empty() ? parse_threshold(*th_field) : effective_threshold(opts, *lm);

    pipeline::PredictionResult result;
    {
      const auto prepared = pipeline::prepare_image(up.image, opts.preprocessing, up.sha);
      std::lock_guard lock(lm->mutex);
      result = pipeline::predict_prepared(*lm->model, prepared, threshold);
    }

    CaseRecord rec;
    rec.id = new_case_id();
    rec.created_at = utc_timestamp();
    rec.image_path = store_image(up);
    rec.image_sha256 = up.sha;
    rec.model_id = resolved_id;
    rec.threshold = threshold;
    rec.response = {{"case_id", rec.id},
                    {"created_at", rec.created_at},
                    {"model_id", rec.model_id},
                    {"threshold", threshold},
                    {"image_sha256", up.sha},
                    {"image_url", "/api/artifacts/" + rec.image_path},
                    {"result", pipeline::to_json(result)}};
    store.insert_case(rec);
    send_json(res, rec.response);
  }

  json render_explanation(const explain::ImageExplanation& e, const std::string& rel_dir) {
    const fs::path dir = opts.data_dir / rel_dir;
    fs::create_directories(dir);
    json patches = json::array();
    for (std::size_t i = 0; i < e.patches.size(); ++i) {
      const auto& p = e.patches[i];
      const std::string stem = "patch_" + std::to_string(i);
      write_image(dir / (stem + "_overlay.png"), p.overlay);
      write_heatmap_png(dir / (stem + "_heatmap.png"), p.heatmap);
      const cv::Point peak = p.heatmap.peak();
      patches.push_back({{"index", i},
                         {"bbox", {p.bbox.x, p.bbox.y, p.bbox.width, p.bbox.height}},
                         {"peak", {peak.x, peak.y}},
                         {"peak_source", {p.peak_source.x, p.peak_source.y}},
                         {"all_zero", p.heatmap.all_zero()},
                         {"overlay_url", "/api/artifacts/" + rel_dir + "/" + stem + "_overlay.png"},
                         {"heatmap_url", "/api/artifacts/" + rel_dir + "/" + stem + "_heatmap.png"}});
    }
    write_image(dir / "composite_overlay.png", e.composite_overlay);
    write_heatmap_png(dir / "composite_heatmap.png", e.composite);
    const cv::Point cpeak = e.composite.peak();
    return {{"target_class", e.target_class},
            {"target_label", kClassOrder[static_cast<std::size_t>(e.target_class)]},
            {"opacity", opts.overlay_opacity},
            {"patches", patches},
            {"composite",
             {{"peak", {cpeak.x, cpeak.y}},
              {"overlay_url", "/api/artifacts/" + rel_dir + "/composite_overlay.png"},
              {"heatmap_url", "/api/artifacts/" + rel_dir + "/composite_heatmap.png"}}}};
  }

  explain::ImageExplanation run_gradcam(LoadedModel& lm, const RgbImage& img, const std::string& source,
                                        int target_class) {
    const auto prepared = pipeline::prepare_image(img, opts.preprocessing, source);
    std::lock_guard lock(lm.mutex);
    return explain::explain_prepared(*lm.model, img, prepared, target_class, opts.overlay_opacity);
  }

  void explain_case(const std::string& case_id, int target_class, httplib::Response& res) {
    const auto rec = store.get_case(case_id);
    if (!rec) fail(404, "UnknownCase", "unknown case '" + case_id + "'");
    if (auto cached = store.get_explanation(case_id, target_class)) {
      res.set_header("X-Cache", "hit");
      send_json(res, *cached);
      return;
    }
    Claim claim(*this, case_id + "/" + std::to_string(target_class));
    // Another request may have finished while this one waited for the claim.
    if (auto cached = store.get_explanation(case_id, target_class)) {
      res.set_header("X-Cache", "hit");
      send_json(res, *cached);
      return;
    }
    auto lm = model_or_fail(rec->model_id);
    const RgbImage img = read_image(opts.data_dir / rec->image_path);
    const auto e = run_gradcam(*lm, img, rec->image_sha256, target_class);
    const std::string rel_dir = "explanations/" + case_id + "/" +
                                std::string(kClassOrder[static_cast<std::size_t>(target_class)]);
    json payload = render_explanation(e, rel_dir);
    payload["case_id"] = case_id;
    payload["model_id"] = rec->model_id;
    store.put_explanation(case_id, target_class, payload);
    res.set_header("X-Cache", "miss");
    send_json(res, payload);
  }

  void explain(const httplib::Request& req, httplib::Response& res) {
    if (req.is_multipart_form_data()) {
      Upload up = read_upload(req);
      const auto tc = form_field(req, "target_class");
      int target_class = 0;
      if (tc) {
        const bool numeric = !tc->empty() && tc->find_first_not_of("0123456789") == std::string::npos;
        target_class = parse_target_class(numeric ? json(std::stoi(*tc)) : json(*tc));
      }
      if (auto cid = form_field(req, "case_id"); cid && !cid->empty()) {
        explain_case(*cid, target_class, res);
        return;
      }
      const std::string model_id = form_field(req, "model_id").value_or("");
      auto lm = model_or_fail(model_id);
      const std::string resolved_id = model_id.empty() ? registry.default_id() : model_id;
      const std::string key = "img-" + up.sha.substr(0, 16);
      const std::string label(kClassOrder[static_cast<std::size_t>(target_class)]);
      Claim claim(*this, key + "/" + resolved_id + "/" + label);
      const auto e = run_gradcam(*lm, up.image, up.sha, target_class);
      json payload = render_explanation(e, "explanations/" + key + "/" + resolved_id + "/" + label);
      payload["case_id"] = nullptr;
      payload["model_id"] = resolved_id;
      send_json(res, payload);
      return;
    }
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      fail(400, "InvalidArgument", "body must be JSON or multipart/form-data");
    }
    if (!body.is_object() || !body.contains("case_id") || !body["case_id"].is_string()) {
      fail(400, "InvalidArgument", "missing 'case_id'");
    }
    const int target_class = body.contains("target_class") ? parse_target_class(body["target_class"]) : 0;
    explain_case(body["case_id"].get<std::string>(), target_class, res);
  }

  void models(httplib::Response& res) {
    json list = json::array();
    for (const auto& m : registry.entries()) {
      json item = {{"id", m.id},
                   {"checkpoint", m.checkpoint.string()},
                   {"default", m.is_default},
                   {"state", to_string(m.state)}};
      if (!m.error.empty()) item["error"] = m.error;
      if (m.config) item["config"] = model::to_json(*m.config);
      ModelRegistry::Lookup st{};
      if (auto lm = registry.get(m.id, st)) {
        item["balanced_threshold"] = lm->balanced_threshold ? json(*lm->balanced_threshold) : json();
        item["default_threshold"] = effective_threshold(opts, *lm);
      }
      list.push_back(item);
    }
    send_json(res, {{"default_model", registry.default_id()}, {"models", list}});
  }

  static json latest_disposition(const CaseRecord& c) {
    if (c.dispositions.empty()) return nullptr;
    const auto& d = c.dispositions.back();
    return {{"disposition", to_string(d.disposition)}, {"note", d.note}, {"created_at", d.created_at}};
  }

  void cases(const httplib::Request& req, httplib::Response& res) {
    int limit = 50;
    if (req.has_param("limit")) {
      const std::string s = req.get_param_value("limit");
      if (s.empty() || s.size() > 6 || s.find_first_not_of("0123456789") != std::string::npos) {
        fail(400, "InvalidArgument", "limit must be a positive integer");
      }
      limit = std::stoi(s);
      if (limit < 1 || limit > 1000) fail(400, "InvalidArgument", "limit must be in [1, 1000]");
    }
    const auto recs = store.list_cases(limit);
    json list = json::array();
    int abnormal = 0, reviewed = 0, overridden = 0;
    for (const auto& c : recs) {
      const auto& r = c.response.at("result");
      const std::string label = r.at("label").get<std::string>();
      abnormal += label == to_string(Label::Abnormal);
      if (!c.dispositions.empty()) {
        ++reviewed;
        overridden += c.dispositions.back().disposition == Disposition::Override;
      }
      list.push_back({{"case_id", c.id},
                      {"created_at", c.created_at},
                      {"model_id", c.model_id},
                      {"threshold", c.threshold},
                      {"label", label},
                      {"abnormal_probability", r.at("abnormal_probability")},
                      {"patch_count", r.at("patches").size()},
                      {"disposition", latest_disposition(c)},
                      {"disposition_count", c.dispositions.size()}});
    }
    const int n = static_cast<int>(recs.size());
    send_json(res, {{"cases", list},
                    {"summary",
                     {{"count", n},
                      {"abnormal", abnormal},
                      {"normal", n - abnormal},
                      {"reviewed", reviewed},
                      {"overridden", overridden}}}});
  }

  static json case_json(const CaseRecord& c) {
    json history = json::array();
    for (const auto& d : c.dispositions) {
      history.push_back({{"id", d.id},
                         {"disposition", to_string(d.disposition)},
                         {"note", d.note},
                         {"created_at", d.created_at}});
    }
    return {{"case_id", c.id},
            {"created_at", c.created_at},
            {"model_id", c.model_id},
            {"threshold", c.threshold},
            {"image_sha256", c.image_sha256},
            {"response", c.response},
            {"dispositions", history},
            {"disposition", latest_disposition(c)}};
  }

  void get_case(const std::string& id, httplib::Response& res) {
    const auto rec = store.get_case(id);
    if (!rec) fail(404, "UnknownCase", "unknown case '" + id + "'");
    send_json(res, case_json(*rec));
  }

  void disposition(const std::string& id, const httplib::Request& req, httplib::Response& res) {
    if (!store.get_case(id)) fail(404, "UnknownCase", "unknown case '" + id + "'");
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      fail(400, "InvalidArgument", "body must be JSON");
    }
    if (!body.is_object() || !body.contains("disposition") || !body["disposition"].is_string()) {
      fail(422, "InvalidDisposition", "disposition must be \"confirm\" or \"override\"");
    }
    const auto d = disposition_from_string(body["disposition"].get<std::string>());
    if (!d) fail(422, "InvalidDisposition", "disposition must be \"confirm\" or \"override\"");
    std::string note;
    if (body.contains("note") && !body["note"].is_null()) {
      if (!body["note"].is_string()) fail(422, "InvalidDisposition", "note must be a string");
      note = body["note"].get<std::string>();
    }
    store.add_disposition(id, *d, note);
    send_json(res, case_json(*store.get_case(id)));
  }

  void health(httplib::Response& res) {
    json models = json::array();
    for (const auto& m : registry.entries()) {
      models.push_back({{"id", m.id}, {"state", to_string(m.state)}, {"default", m.is_default}});
    }
    send_json(res, {{"status", registry.status()},
                    {"default_model", registry.default_id()},
                    {"models", models}});
  }

  void artifact(const std::string& rel, httplib::Response& res) {
    const fs::path p(rel);
    bool ok = !p.is_absolute() && !p.empty();
    for (const auto& part : p) ok = ok && part != ".." && part != ".";
    const std::string top = p.empty() ? "" : p.begin()->string();
    if (!ok || (top != "images" && top != "explanations")) fail(404, "NotFound", "no such artifact");
    const fs::path abs = opts.data_dir / p;
    std::ifstream in(abs, std::ios::binary);
    if (!in) fail(404, "NotFound", "no such artifact");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    res.set_content(bytes, content_type_for(abs));
  }

  template <class F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_error(res, e.status, e.code, e.message);
      } catch (const Error& e) {
        const bool client = e.code() == ErrorCode::UnreadableFile || e.code() == ErrorCode::InvalidArgument;
        send_error(res, client ? 400 : 500, std::string(e.code_name()), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "Internal", e.what());
      }
    };
  }

  void routes() {
    http.set_payload_max_length(opts.max_upload_bytes + 1024 * 1024);
    http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
      if (res.status == 413) {
        send_error(res, 400, "TooLarge", "request exceeds the upload limit");
      } else {
        send_error(res, res.status, "HttpError", httplib::status_message(res.status));
      }
      return httplib::Server::HandlerResponse::Handled;
    });
    http.Post("/api/predict", guarded([this](const auto& req, auto& res) { predict(req, res); }));
    http.Post("/api/explain", guarded([this](const auto& req, auto& res) { explain(req, res); }));
    http.Get("/api/models", guarded([this](const auto&, auto& res) { models(res); }));
    http.Get("/api/cases", guarded([this](const auto& req, auto& res) { cases(req, res); }));
    http.Get(R"(/api/cases/([A-Za-z0-9_-]+))",
             guarded([this](const auto& req, auto& res) { get_case(req.matches[1], res); }));
    http.Post(R"(/api/cases/([A-Za-z0-9_-]+)/disposition)",
              guarded([this](const auto& req, auto& res) { disposition(req.matches[1], req, res); }));
    http.Get("/api/health", guarded([this](const auto&, auto& res) { health(res); }));
    http.Get(R"(/api/artifacts/(.+))",
             guarded([this](const auto& req, auto& res) { artifact(req.matches[1], res); }));
    if (opts.static_dir) {
      if (!http.set_mount_point("/", opts.static_dir->string())) {
        throw Error(ErrorCode::ConfigError, "static directory not found: " + opts.static_dir->string());
      }
    }
  }
};

Server::Server(ModelRegistry& registry, CaseStore& store, ServerOptions opts)
    : impl_(std::make_unique<Impl>(registry, store, std::move(opts))) {
  fs::create_directories(impl_->opts.data_dir / "images");
  fs::create_directories(impl_->opts.data_dir / "explanations");
  impl_->routes();
}

Server::~Server() = default;

int Server::bind(const std::string& host, int port) {
  if (port == 0) return impl_->http.bind_to_any_port(host);
  return impl_->http.bind_to_port(host, port) ? port : -1;
}

bool Server::run() { return impl_->http.listen_after_bind(); }
void Server::stop() { impl_->http.stop(); }
void Server::wait_until_ready() const { impl_->http.wait_until_ready(); }

}  // namespace glandscreen::service
