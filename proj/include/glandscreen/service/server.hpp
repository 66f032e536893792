#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "glandscreen/pipeline.hpp"
#include "glandscreen/service/case_store.hpp"
#include "glandscreen/service/registry.hpp"

namespace glandscreen::service {

inline constexpr double kFallbackThreshold = 0.45;

struct ServerOptions {
  std::filesystem::path data_dir = "data";
  std::size_t max_upload_bytes = 20u * 1024u * 1024u;
  /// Operator override; wins over each model's manifest threshold.
  std::optional<double> default_threshold;
  pipeline::Preprocessing preprocessing;
  double overlay_opacity = 0.5;
  std::optional<std::filesystem::path> static_dir;
};

/// Threshold used when a request does not supply one.
double effective_threshold(const ServerOptions& opts, const LoadedModel& model);

/// HTTP front end. Endpoints are documented in docs/api.md.
class Server {
 public:
  Server(ModelRegistry& registry, CaseStore& store, ServerOptions opts);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds to host:port (port 0 picks a free port) and returns the bound port, or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  bool run();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(const std::string& bytes);

}  // namespace glandscreen::service
