#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "farmlight/edge/runtime.h"

namespace farmlight::edge {

struct ApiResponse {
  int status = 200;
  Json body;
};

/// JSON-over-HTTP front of an EdgeRuntime. Errors come back as
/// {"error": code, "detail": text} with 400 / 404 / 409 / 429 / 503.
class EdgeApi {
 public:
  explicit EdgeApi(EdgeRuntime& runtime);
  ~EdgeApi();
  EdgeApi(const EdgeApi&) = delete;
  EdgeApi& operator=(const EdgeApi&) = delete;

  /// Routes one request without a socket. `target` is the path with an
  /// optional query string. The alert stream is only served over HTTP.
  ApiResponse handle(const std::string& method, const std::string& target, const std::string& body);

  /// Serves on a background thread; port 0 picks a free port. Returns the port.
  std::uint16_t start(const std::string& host, std::uint16_t port);
  void stop();

 private:
  struct Server;
  EdgeRuntime& runtime_;
  std::unique_ptr<Server> server_;
};

/// Minimal blocking client used by the dialogue harness and the CLI.
struct HttpResult {
  bool transport_ok = false;
  int status = 0;
  std::string body;
  std::string error;  // transport failure description
};

class HttpClient {
 public:
  HttpClient(std::string host, std::uint16_t port, int timeout_ms = 2000);
  ~HttpClient();
  HttpResult get(const std::string& target);
  HttpResult post(const std::string& target, const std::string& json_body);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace farmlight::edge
