#include "farmlight/edge/api.h"

#include <atomic>
#include <charconv>
#include <thread>

#include <httplib.h>

namespace farmlight::edge {

namespace {

ApiResponse fail(int status, const std::string& code, const std::string& detail) {
  return {status, Json{{"error", code}, {"detail", detail}}};
}

struct Target {
  std::string path;
  std::map<std::string, std::string> query;
};

Target split_target(const std::string& target) {
  Target t;
  auto q = target.find('?');
  t.path = target.substr(0, q);
  if (q == std::string::npos) return t;
  std::string rest = target.substr(q + 1);
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    auto amp = rest.find('&', pos);
    std::string kv = rest.substr(pos, amp == std::string::npos ? std::string::npos : amp - pos);
    auto eq = kv.find('=');
    if (!kv.empty()) t.query[kv.substr(0, eq)] = eq == std::string::npos ? "" : kv.substr(eq + 1);
    if (amp == std::string::npos) break;
    pos = amp + 1;
  }
  return t;
}

std::vector<std::string> segments(const std::string& path) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < path.size()) {
    if (path[pos] == '/') {
      ++pos;
      continue;
    }
    auto next = path.find('/', pos);
    out.push_back(path.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
    pos = next == std::string::npos ? path.size() : next;
  }
  return out;
}

std::int64_t parse_ms(const std::string& text) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw FormatError("since_ms is not an integer");
  return v;
}

Json object_body(const std::string& body, bool allow_empty) {
  if (body.empty() && allow_empty) return Json::object();
  Json j = parse_json(body);
  if (!j.is_object()) throw FormatError("request body must be a JSON object");
  return j;
}

std::string sse_event(const Alert& a) {
  return "event: alert\nid: " + a.alert_id + "\ndata: " + canonical(Json(a)) + "\n\n";
}

}  // namespace

struct EdgeApi::Server {
  httplib::Server http;
  std::thread thread;
  std::atomic<bool> stopping{false};
};

EdgeApi::EdgeApi(EdgeRuntime& runtime) : runtime_(runtime) {}

EdgeApi::~EdgeApi() { stop(); }

ApiResponse EdgeApi::handle(const std::string& method, const std::string& target,
                            const std::string& body) {
  Target t = split_target(target);
  auto seg = segments(t.path);
  try {
    if (seg.size() < 2 || seg[0] != "v1") return fail(404, "not_found", "no route " + t.path);
    const std::string& res = seg[1];
    if (res == "status" && seg.size() == 2) {
      if (method != "GET") return fail(405, "method_not_allowed", method);
      return {200, runtime_.status()};
    }
    if (res == "alerts" && seg.size() == 2) {
      if (method != "GET") return fail(405, "method_not_allowed", method);
      std::int64_t since = t.query.count("since_ms") ? parse_ms(t.query["since_ms"]) : 0;
      return {200, Json{{"alerts", runtime_.alerts_since(since)}}};
    }
    if (res == "observations") {
      if (seg.size() == 2 && method == "POST") {
        Observation obs = decode_json<Observation>(object_body(body, false));
        std::string id = obs.obs_id;
        runtime_.ingest(std::move(obs));
        return {202, Json{{"obs_id", id}, {"queue_depth", runtime_.queue_depth()}}};
      }
      if (seg.size() == 3 && method == "GET") {
        auto obs = runtime_.observation(seg[2]);
        if (!obs) return fail(404, "not_found", "no observation " + seg[2]);
        return {200, Json(*obs)};
      }
      return fail(405, "method_not_allowed", method);
    }
    if (res == "query" && seg.size() == 2) {
      if (method != "POST") return fail(405, "method_not_allowed", method);
      Json j = object_body(body, false);
      if (!j.contains("text") || !j["text"].is_string())
        throw FormatError("query needs a string 'text'");
      std::optional<std::string> obs_id;
      if (j.contains("obs_id") && !j["obs_id"].is_null()) {
        if (!j["obs_id"].is_string()) throw FormatError("obs_id must be a string");
        obs_id = j["obs_id"].get<std::string>();
      }
      QueryResult r = runtime_.query(j["text"].get<std::string>(), obs_id);
      Json out = r;
      out["model_version"] = r.diagnosis.model_version;
      return {200, out};
    }
    if (res == "commands") {
      if (seg.size() == 2 && method == "GET")
        return {200, Json{{"commands", runtime_.commands()}, {"pending", runtime_.pending_commands()}}};
      if (seg.size() == 4 && method == "POST" && (seg[3] == "approve" || seg[3] == "reject")) {
        Json j = object_body(body, true);
        std::string actor = j.contains("actor") && j["actor"].is_string()
                                ? j["actor"].get<std::string>()
                                : std::string("operator");
        ActuationCommand c =
            seg[3] == "approve" ? runtime_.approve(seg[2], actor) : runtime_.reject(seg[2], actor);
        return {200, Json(c)};
      }
      return fail(404, "not_found", "no route " + t.path);
    }
    if (res == "audit" && seg.size() == 2 && method == "GET")
      return {200, Json{{"audit", runtime_.audit()}}};
    return fail(404, "not_found", "no route " + t.path);
  } catch (const FormatError& e) {
    return fail(400, "bad_request", e.what());
  } catch (const ContractViolation& e) {
    return fail(400, "bad_request", e.what());
  } catch (const NotFound& e) {
    return fail(404, "not_found", e.what());
  } catch (const Conflict& e) {
    return fail(409, "conflict", e.what());
  } catch (const Backpressure& e) {
    return fail(429, "backpressure", e.what());
  } catch (const NotReady& e) {
    return fail(503, "not_ready", e.what());
  } catch (const Error& e) {
    return fail(500, "internal", e.what());
  }
}

std::uint16_t EdgeApi::start(const std::string& host, std::uint16_t port) {
  if (server_) throw ContractViolation("edge API already started");
  server_ = std::make_unique<Server>();
  auto& http = server_->http;

  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    std::string target = req.path;
    if (!req.params.empty()) {
      target += '?';
      bool first = true;
      for (const auto& [k, v] : req.params) {
        if (!first) target += '&';
        target += k + "=" + v;
        first = false;
      }
    }
    ApiResponse r = handle(req.method, target, req.body);
    res.status = r.status;
    res.set_content(canonical(r.body), "application/json");
  };

  // Server-sent events: one "alert" event per new alert. With since_ms the
  // stream first replays alerts created at or after that time.
  http.Get("/v1/alerts/stream", [this](const httplib::Request& req, httplib::Response& res) {
    std::size_t seen = runtime_.alert_count();
    if (req.has_param("since_ms")) {
      try {
        seen -= runtime_.alerts_since(parse_ms(req.get_param_value("since_ms"))).size();
      } catch (const FormatError& e) {
        res.status = 400;
        res.set_content(canonical(Json{{"error", "bad_request"}, {"detail", e.what()}}),
                        "application/json");
        return;
      }
    }
    auto cursor = std::make_shared<std::size_t>(seen);
    Server* srv = server_.get();
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream", [this, cursor, srv](std::size_t, httplib::DataSink& sink) {
          if (srv->stopping) return false;
          auto fresh = runtime_.wait_alerts(*cursor, std::chrono::milliseconds(500));
          std::string out = fresh.empty() ? std::string(": keepalive\n\n") : std::string();
          for (const auto& a : fresh) out += sse_event(a);
          *cursor += fresh.size();
          return sink.write(out.data(), out.size());
        });
  });
  http.Get(R"(/v1/.*)", route);
  http.Post(R"(/v1/.*)", route);
  http.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  http.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  int bound = port == 0 ? http.bind_to_any_port(host) : (http.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    server_.reset();
    throw IoError(host + ":" + std::to_string(port), "cannot bind edge API");
  }
  server_->thread = std::thread([srv = server_.get()] { srv->http.listen_after_bind(); });
  http.wait_until_ready();
  return static_cast<std::uint16_t>(bound);
}

void EdgeApi::stop() {
  if (!server_) return;
  server_->stopping = true;
  server_->http.stop();
  if (server_->thread.joinable()) server_->thread.join();
  server_.reset();
}

struct HttpClient::Impl {
  httplib::Client client;
  Impl(const std::string& host, std::uint16_t port) : client(host, port) {}
};

HttpClient::HttpClient(std::string host, std::uint16_t port, int timeout_ms)
    : impl_(std::make_unique<Impl>(host, port)) {
  auto secs = timeout_ms / 1000;
  auto usecs = (timeout_ms % 1000) * 1000;
  impl_->client.set_connection_timeout(secs, usecs);
  impl_->client.set_read_timeout(secs, usecs);
  impl_->client.set_write_timeout(secs, usecs);
}

HttpClient::~HttpClient() = default;

namespace {

HttpResult convert(const httplib::Result& r) {
  HttpResult out;
  if (!r) {
    out.error = httplib::to_string(r.error());
    return out;
  }
  out.transport_ok = true;
  out.status = r->status;
  out.body = r->body;
  return out;
}

}  // namespace

HttpResult HttpClient::get(const std::string& target) { return convert(impl_->client.Get(target)); }

HttpResult HttpClient::post(const std::string& target, const std::string& json_body) {
  return convert(impl_->client.Post(target, json_body, "application/json"));
}

}  // namespace farmlight::edge
