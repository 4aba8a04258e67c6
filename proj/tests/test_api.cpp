#include <doctest.h>

#include <httplib.h>

#include <chrono>
#include <thread>

#include "farmlight/clock.h"
#include "farmlight/edge/api.h"
#include "support.h"

using namespace farmlight;
using namespace farmlight::edge;

namespace {

model::Artifact constant_model(int cls) {
  auto cfg = model::ModelConfig::student();
  model::Artifact a{cfg, model::ModelParams::zeros(cfg), {}};
  a.params[model::TensorId::h2_b].data[static_cast<std::size_t>(cls)] = 12.0;
  a.meta.stage = "const";
  return a;
}

struct Node {
  ManualClock clock{1000};
  synth::World world = synth::default_world();
  std::unique_ptr<EdgeRuntime> rt;
  std::unique_ptr<EdgeApi> api;

  explicit Node(EdgePolicy policy = {}) {
    EdgeOptions o;
    o.edge_id = "e1";
    o.policy = policy;
    rt = std::make_unique<EdgeRuntime>(o, world.catalog, clock);
    api = std::make_unique<EdgeApi>(*rt);
  }

  Observation obs(int cls, std::uint64_t seed) const {
    Rng rng(seed);
    auto o = synth::gen_observation(world.specs[static_cast<std::size_t>(cls)], rng);
    o.label.reset();
    return o;
  }

  ApiResponse post_obs(const Observation& o) { return api->handle("POST", "/v1/observations", canonical(Json(o))); }
};

}  // namespace

TEST_CASE("unknown routes and wrong methods") {
  Node n;
  CHECK(n.api->handle("GET", "/", "").status == 404);
  CHECK(n.api->handle("GET", "/v2/status", "").status == 404);
  CHECK(n.api->handle("GET", "/v1/nothing", "").status == 404);
  CHECK(n.api->handle("POST", "/v1/status", "{}").status == 405);
  CHECK(n.api->handle("POST", "/v1/alerts", "{}").status == 405);
  CHECK(n.api->handle("GET", "/v1/query", "").status == 405);
  CHECK(n.api->handle("DELETE", "/v1/observations", "").status == 405);
  auto r = n.api->handle("GET", "/v1/observations/missing", "");
  CHECK(r.status == 404);
  CHECK(r.body["error"] == "not_found");
}

TEST_CASE("malformed requests are rejected with 400") {
  Node n;
  CHECK(n.api->handle("POST", "/v1/observations", "{not json").status == 400);
  CHECK(n.api->handle("POST", "/v1/observations", "[]").status == 400);
  CHECK(n.api->handle("POST", "/v1/observations", R"({"obs_id":"x"})").status == 400);
  Json bad = n.obs(1, 1);
  bad["image"]["pixels"][0] = 7.0;
  CHECK(n.api->handle("POST", "/v1/observations", canonical(bad)).status == 400);
  CHECK(n.api->handle("GET", "/v1/alerts?since_ms=abc", "").status == 400);
  CHECK(n.api->handle("POST", "/v1/query", R"({"text":3})").status == 400);
  CHECK(n.api->handle("POST", "/v1/query", R"({"text":"hi","obs_id":5})").status == 400);
  auto r = n.api->handle("POST", "/v1/query", "");
  CHECK(r.status == 400);
  CHECK(r.body["error"] == "bad_request");
  CHECK(r.body.contains("detail"));
}

TEST_CASE("observations are accepted and served back") {
  Node n;
  auto o = n.obs(2, 2);
  auto r = n.post_obs(o);
  CHECK(r.status == 202);
  CHECK(r.body["obs_id"] == o.obs_id);
  CHECK(r.body["queue_depth"] == 1);
  auto back = n.api->handle("GET", "/v1/observations/" + o.obs_id, "");
  CHECK(back.status == 200);
  CHECK(back.body.get<Observation>() == o);
}

TEST_CASE("queries before a model is ready return 503") {
  Node n;
  auto r = n.api->handle("POST", "/v1/query", R"({"text":"status?"})");
  CHECK(r.status == 503);
  CHECK(r.body["error"] == "not_ready");
  n.post_obs(n.obs(1, 3));
  CHECK(n.api->handle("POST", "/v1/query", R"({"text":"status?"})").status == 503);
  n.rt->install_model(constant_model(1));
  auto ok = n.api->handle("POST", "/v1/query", R"({"text":"status?"})");
  CHECK(ok.status == 200);
  CHECK(ok.body["class_name"] == "leaf_blight");
  CHECK(ok.body["model_version"] == n.rt->model_version());
  CHECK(ok.body["answer"].get<std::string>().find("copper fungicide") != std::string::npos);
  CHECK(n.api->handle("POST", "/v1/query", R"({"text":"?","obs_id":"zzz"})").status == 404);
}

TEST_CASE("a full queue answers 429") {
  EdgePolicy p;
  p.queue_capacity = 3;
  Node n(p);
  for (int i = 0; i < 3; ++i) CHECK(n.post_obs(n.obs(0, 10 + static_cast<std::uint64_t>(i))).status == 202);
  auto r = n.post_obs(n.obs(0, 20));
  CHECK(r.status == 429);
  CHECK(r.body["error"] == "backpressure");
}

TEST_CASE("alerts, commands and the audit trail") {
  Node n;
  n.rt->install_model(constant_model(7));
  n.post_obs(n.obs(7, 30));
  n.rt->drain();
  n.clock.set(3000);
  n.post_obs(n.obs(7, 31));
  n.rt->drain();

  auto alerts = n.api->handle("GET", "/v1/alerts", "");
  CHECK(alerts.status == 200);
  CHECK(alerts.body["alerts"].size() == 2);
  CHECK(n.api->handle("GET", "/v1/alerts?since_ms=2000", "").body["alerts"].size() == 1);

  auto cmds = n.api->handle("GET", "/v1/commands", "");
  REQUIRE(cmds.body["commands"].size() == 2);
  CHECK(cmds.body["pending"] == 2);
  std::string c1 = cmds.body["commands"][0]["command_id"];
  std::string c2 = cmds.body["commands"][1]["command_id"];

  auto ok = n.api->handle("POST", "/v1/commands/" + c1 + "/approve", "");
  CHECK(ok.status == 200);
  CHECK(ok.body["state"] == "executed");
  CHECK(n.api->handle("POST", "/v1/commands/" + c1 + "/approve", "").status == 409);
  CHECK(n.api->handle("POST", "/v1/commands/" + c2 + "/reject", R"({"actor":"ana"})").body["state"] ==
        "rejected");
  CHECK(n.api->handle("POST", "/v1/commands/" + c2 + "/reject", "").status == 409);
  CHECK(n.api->handle("POST", "/v1/commands/e1-c42/approve", "").status == 404);
  CHECK(n.api->handle("POST", "/v1/commands/" + c1 + "/launch", "").status == 404);

  auto audit = n.api->handle("GET", "/v1/audit", "").body["audit"];
  REQUIRE(audit.size() == 3);
  CHECK(audit[0]["actor"] == "operator");
  CHECK(audit[0]["to"] == "approved");
  CHECK(audit[1]["to"] == "executed");
  CHECK(audit[2]["actor"] == "ana");

  auto status = n.api->handle("GET", "/v1/status", "");
  CHECK(status.status == 200);
  CHECK(status.body["alerts"] == 2);
  CHECK(status.body["pending_commands"] == 0);
}

TEST_CASE("http server, client, cors and the alert stream") {
  Node n;
  n.rt->install_model(constant_model(6));
  std::uint16_t port = n.api->start("127.0.0.1", 0);
  REQUIRE(port != 0);
  HttpClient client("127.0.0.1", port);

  auto st = client.get("/v1/status");
  REQUIRE(st.transport_ok);
  CHECK(st.status == 200);
  CHECK(parse_json(st.body)["edge_id"] == "e1");

  auto o = n.obs(6, 40);
  auto posted = client.post("/v1/observations", canonical(Json(o)));
  CHECK(posted.status == 202);
  CHECK(client.get("/v1/nowhere").status == 404);
  CHECK(client.post("/v1/query", "junk").status == 400);

  httplib::Client raw("127.0.0.1", port);
  auto pre = raw.Options("/v1/observations");
  REQUIRE(pre);
  CHECK(pre->status == 204);
  CHECK(pre->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
  auto got = raw.Get("/v1/alerts");
  REQUIRE(got);
  CHECK(got->get_header_value("Access-Control-Allow-Origin") == "*");

  // The stream replays from since_ms=0, so the alert created below is seen
  // regardless of when the subscription lands.
  std::string stream;
  std::thread reader([&] {
    httplib::Client sse("127.0.0.1", port);
    sse.set_read_timeout(5, 0);
    sse.Get("/v1/alerts/stream?since_ms=0", [&](const char* data, std::size_t len) {
      stream.append(data, len);
      return stream.find("\n\n", stream.find("event: alert")) == std::string::npos;
    });
  });
  n.rt->drain();
  reader.join();
  CHECK(stream.find("event: alert") != std::string::npos);
  CHECK(stream.find("id: e1-a1") != std::string::npos);
  CHECK(stream.find(o.obs_id) != std::string::npos);

  n.api->stop();
  HttpClient dead("127.0.0.1", port, 300);
  CHECK_FALSE(dead.get("/v1/status").transport_ok);
}
