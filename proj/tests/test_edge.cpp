#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#include "farmlight/clock.h"
#include "farmlight/edge/runtime.h"
#include "farmlight/edge/telemetry_log.h"
#include "support.h"

using namespace farmlight;
using namespace farmlight::edge;

namespace {

/// Predicts `cls` for every input; logit margin `bias` sets the confidence.
model::Artifact constant_model(int cls, double bias) {
  auto cfg = model::ModelConfig::student();
  model::Artifact a{cfg, model::ModelParams::zeros(cfg), {}};
  a.params[model::TensorId::h2_b].data[static_cast<std::size_t>(cls)] = bias;
  a.meta.stage = "const" + std::to_string(cls);
  return a;
}

Diagnosis diag(int cls, double confidence) {
  Diagnosis d;
  d.predicted = cls;
  d.confidence = confidence;
  return d;
}

Observation obs_of(int cls, std::uint64_t seed) {
  static const auto world = synth::default_world();
  Rng rng(seed);
  auto o = synth::gen_observation(world.specs[static_cast<std::size_t>(cls)], rng);
  o.label.reset();
  return o;
}

struct Node {
  ManualClock clock{1000};
  synth::World world = synth::default_world();
  std::unique_ptr<EdgeRuntime> rt;

  explicit Node(EdgePolicy policy = {}, std::optional<std::filesystem::path> dir = std::nullopt) {
    EdgeOptions o;
    o.edge_id = "e1";
    o.policy = policy;
    o.data_dir = std::move(dir);
    rt = std::make_unique<EdgeRuntime>(o, world.catalog, clock);
  }
};

}  // namespace

TEST_CASE("decision rules") {
  auto cat = synth::default_world().catalog;
  EdgePolicy p;
  CHECK(decide(diag(1, 0.69), cat, p).outcome == Outcome::none);
  CHECK(decide(diag(2, 0.70), cat, p).outcome == Outcome::alert);  // threshold inclusive
  CHECK(decide(diag(0, 0.99), cat, p).outcome == Outcome::none);
  CHECK(decide(diag(2, 0.90), cat, p).outcome == Outcome::alert);  // medium urgency
  auto high = decide(diag(1, 0.90), cat, p);
  CHECK(high.outcome == Outcome::alert_and_command);
  CHECK(high.requires_approval);
  p.auto_actuate = true;
  CHECK_FALSE(decide(diag(7, 0.95), cat, p).requires_approval);
  p.alert_threshold = 0.0;
  CHECK_THROWS_AS(p.validate(), ContractViolation);
}

TEST_CASE("actions and answers") {
  auto cat = synth::default_world().catalog;
  CHECK(action_for(cat.at(4)) == Action::irrigate);
  CHECK(action_for(cat.at(1)) == Action::spray);
  std::vector<double> probs(kNumClasses, 0.0);
  probs[0] = 1.0;
  auto healthy = Diagnosis::from_probs("o", probs, cat.recommendation(0), "v");
  CHECK(answer_text(cat, healthy) == "Diagnosis: healthy (confidence 1.00). No action required.");
  probs[0] = 0.0;
  probs[4] = 1.0;
  auto rot = Diagnosis::from_probs("o", probs, cat.recommendation(4), "v");
  std::string a = answer_text(cat, rot);
  CHECK(a.find("root_rot") != std::string::npos);
  CHECK(a.find("Urgency: high") != std::string::npos);
  CHECK(a.find("reduce irrigation; improve drainage") != std::string::npos);
}

TEST_CASE("policy json overrides only given keys") {
  EdgePolicy p;
  from_json(Json{{"idle_secs", 1.5}}, p);
  CHECK(p.idle_secs == 1.5);
  CHECK(p.alert_threshold == 0.7);
  Json j = p;
  EdgePolicy q;
  from_json(j, q);
  CHECK(q == p);
}

TEST_CASE("command state machine") {
  using S = CommandState;
  CHECK(transition_allowed(S::pending, S::approved));
  CHECK(transition_allowed(S::approved, S::executed));
  CHECK(transition_allowed(S::pending, S::rejected));
  CHECK_FALSE(transition_allowed(S::pending, S::executed));
  CHECK_FALSE(transition_allowed(S::rejected, S::approved));
  CHECK_FALSE(transition_allowed(S::executed, S::approved));
  CHECK(command_state_from_string(to_string(S::executed)) == S::executed);
  CHECK(action_from_string("irrigate") == Action::irrigate);
}

TEST_CASE("processing needs a model and keeps the observation") {
  Node n;
  auto o = obs_of(1, 1);
  n.rt->ingest(o);
  CHECK_THROWS_AS(n.rt->process_next(), NotReady);
  CHECK(n.rt->queue_depth() == 1);
  CHECK_THROWS_AS(n.rt->diagnose(o), NotReady);
  n.rt->install_model(constant_model(1, 12.0));
  auto r = n.rt->process_next();
  REQUIRE(r);
  CHECK(r->obs_id == o.obs_id);
  CHECK(n.rt->queue_depth() == 0);
  CHECK_FALSE(n.rt->process_next());
}

TEST_CASE("each processed observation adds one telemetry record") {
  Node n;
  n.rt->install_model(constant_model(0, 5.0));
  auto before = n.rt->telemetry().pending();
  n.rt->ingest(obs_of(0, 2));
  CHECK(n.rt->drain() == 1);
  CHECK(n.rt->telemetry().pending() == before + 1);
  auto batch = n.rt->telemetry().form_batch(10);
  REQUIRE(batch);
  const Json& rec = batch->records[0];
  CHECK(rec["action"] == "none");
  CHECK(rec["class_name"] == "healthy");
  CHECK(rec["edge_id"] == "e1");
  CHECK(rec["image_sha256"].get<std::string>().size() == 64);
  CHECK(rec.contains("seq"));
}

TEST_CASE("ingest validation and backpressure") {
  Node n;
  auto bad = obs_of(1, 3);
  bad.obs_id.clear();
  CHECK_THROWS_AS(n.rt->ingest(bad), ContractViolation);
  bad = obs_of(1, 3);
  bad.image.pixels[0] = 2.0;
  CHECK_THROWS_AS(n.rt->ingest(bad), ContractViolation);

  auto base = obs_of(2, 4);
  for (int i = 0; i < 10000; ++i) {
    auto o = base;
    o.obs_id = "o" + std::to_string(i);
    n.rt->ingest(std::move(o));
  }
  CHECK(n.rt->queue_depth() == 10000);
  auto extra = base;
  extra.obs_id = "overflow";
  CHECK_THROWS_AS(n.rt->ingest(extra), Backpressure);
  CHECK(n.rt->queue_depth() == 10000);
}

TEST_CASE("a burst of anomalies yields ordered alerts") {
  Node n;
  n.rt->install_model(constant_model(5, 12.0));
  std::vector<std::string> ids;
  for (int i = 0; i < 100; ++i) {
    auto o = obs_of(5, 100 + static_cast<std::uint64_t>(i));
    ids.push_back(o.obs_id);
    n.rt->ingest(o);
  }
  CHECK(n.rt->drain() == 100);
  auto alerts = n.rt->alerts_since(0);
  REQUIRE(alerts.size() == 100);
  for (std::size_t i = 0; i < 100; ++i) {
    CHECK(alerts[i].obs_id == ids[i]);
    CHECK(alerts[i].alert_id == "e1-a" + std::to_string(i + 1));
    CHECK(alerts[i].class_name == "leaf_rust");
    CHECK(alerts[i].image_ref == "/v1/observations/" + ids[i]);
  }
  CHECK(n.rt->commands().empty());  // medium urgency
}

TEST_CASE("alerts since a timestamp") {
  Node n;
  n.rt->install_model(constant_model(2, 12.0));
  n.rt->ingest(obs_of(2, 5));
  n.rt->drain();
  n.clock.set(5000);
  n.rt->ingest(obs_of(2, 6));
  n.rt->drain();
  CHECK(n.rt->alerts_since(0).size() == 2);
  CHECK(n.rt->alerts_since(5000).size() == 1);
  CHECK(n.rt->alerts_since(5001).empty());
}

TEST_CASE("approval workflow and audit trail") {
  Node n;
  n.rt->install_model(constant_model(1, 12.0));
  n.rt->ingest(obs_of(1, 7));
  n.rt->ingest(obs_of(1, 8));
  n.rt->drain();
  auto cmds = n.rt->commands();
  REQUIRE(cmds.size() == 2);
  CHECK(cmds[0].state == CommandState::pending);
  CHECK(cmds[0].requires_approval);
  CHECK(cmds[0].action == Action::spray);
  CHECK(n.rt->pending_commands() == 2);

  n.clock.set(2000);
  auto done = n.rt->approve(cmds[0].command_id, "farmer");
  CHECK(done.state == CommandState::executed);
  CHECK_THROWS_AS(n.rt->approve(cmds[0].command_id, "farmer"), Conflict);
  CHECK(n.rt->reject(cmds[1].command_id, "farmer").state == CommandState::rejected);
  CHECK_THROWS_AS(n.rt->approve(cmds[1].command_id, "farmer"), Conflict);
  CHECK_THROWS_AS(n.rt->approve("e1-c99", "farmer"), NotFound);
  CHECK(n.rt->pending_commands() == 0);

  auto audit = n.rt->audit();
  REQUIRE(audit.size() == 3);
  CHECK(audit[0].from == CommandState::pending);
  CHECK(audit[0].to == CommandState::approved);
  CHECK(audit[0].actor == "farmer");
  CHECK(audit[0].at_ms == 2000);
  CHECK(audit[1].to == CommandState::executed);
  CHECK(audit[1].actor == "actuator");
  CHECK(audit[2].to == CommandState::rejected);
}

TEST_CASE("auto actuation executes at once") {
  EdgePolicy p;
  p.auto_actuate = true;
  Node n(p);
  n.rt->install_model(constant_model(4, 12.0));
  n.rt->ingest(obs_of(4, 9));
  auto r = n.rt->process_next();
  REQUIRE(r->command);
  CHECK(r->command->action == Action::irrigate);
  CHECK(r->command->state == CommandState::executed);
  CHECK_FALSE(r->command->requires_approval);
  auto audit = n.rt->audit();
  REQUIRE(audit.size() == 2);
  CHECK(audit[0].actor == "auto");
}

TEST_CASE("queries follow the latest or named observation") {
  Node n;
  CHECK_THROWS_AS(n.rt->query("hello", std::nullopt), NotReady);
  n.rt->install_model(constant_model(3, 12.0));
  auto a = obs_of(3, 10), b = obs_of(3, 11);
  n.rt->ingest(a);
  n.rt->ingest(b);
  auto latest = n.rt->query("what is wrong?", std::nullopt);
  CHECK(latest.obs_id == b.obs_id);
  CHECK(latest.class_name == "aphid_infestation");
  CHECK(latest.prompt.rfind("Current sensor data: pH=", 0) == 0);
  CHECK(n.rt->query("and this?", a.obs_id).obs_id == a.obs_id);
  CHECK_THROWS_AS(n.rt->query("?", std::string("missing")), NotFound);
}

TEST_CASE("model swap is visible in status and persists") {
  auto dir = testing::temp_dir("edge-model");
  std::string v2;
  {
    Node n({}, dir);
    n.rt->install_model(constant_model(1, 3.0));
    auto v1 = n.rt->model_version();
    n.rt->install_model(constant_model(2, 3.0));
    v2 = n.rt->model_version();
    CHECK(v1 != v2);
    CHECK(n.rt->status()["model_version"] == v2);
    CHECK(std::filesystem::exists(std::filesystem::path(dir) / "model.flsm"));
    CHECK_FALSE(std::filesystem::exists(std::filesystem::path(dir) / "model.flsm.tmp"));
  }
  Node again({}, dir);
  CHECK(again.rt->model_version() == v2);

  auto wrong = model::ModelConfig::student();
  wrong.classes = 3;
  model::Artifact three{wrong, model::ModelParams::zeros(wrong), {}};
  CHECK_THROWS_AS(again.rt->install_model(three), ContractViolation);
  CHECK(again.rt->model_version() == v2);
}

TEST_CASE("status reports counters and recent events") {
  Node n;
  for (int i = 0; i < 12; ++i) n.rt->record_event("e" + std::to_string(i), "d");
  auto s = n.rt->status();
  CHECK(s["edge_id"] == "e1");
  CHECK(s["model_version"] == "");
  CHECK(s["recent_events"].size() == 10);
  CHECK(s["recent_events"][0]["kind"] == "e2");
  CHECK(s["last_sync_ms"] == -1);
}

TEST_CASE("worker thread drains the queue") {
  Node n;
  n.rt->install_model(constant_model(6, 12.0));
  n.rt->start_worker();
  for (int i = 0; i < 5; ++i) n.rt->ingest(obs_of(6, 20 + static_cast<std::uint64_t>(i)));
  for (int i = 0; i < 500 && (n.rt->alert_count() < 5 || n.rt->queue_depth() > 0); ++i)
    n.rt->wait_alerts(n.rt->alert_count(), std::chrono::milliseconds(10));
  n.rt->stop_worker();
  CHECK(n.rt->alert_count() == 5);
  CHECK(n.rt->queue_depth() == 0);
}

TEST_CASE("telemetry log batching and acknowledgement") {
  TelemetryLog log("e1", std::nullopt);
  CHECK_FALSE(log.form_batch(10));
  for (int i = 0; i < 7; ++i) log.append({{"obs_id", "o" + std::to_string(i)}});
  auto b1 = log.form_batch(5);
  REQUIRE(b1);
  CHECK(b1->batch_id == "e1-b000001");
  CHECK(b1->records.size() == 5);
  CHECK(b1->seqs.front() == 1);
  CHECK(log.unbatched() == 2);
  CHECK(log.open_batch()->batch_id == b1->batch_id);
  auto b2 = log.form_batch(5);
  CHECK(b2->records.size() == 2);
  CHECK(log.ack(b1->batch_id));
  CHECK_FALSE(log.ack(b1->batch_id));
  CHECK_FALSE(log.ack("nope"));
  CHECK(log.pending() == 2);
  CHECK(log.open_batch()->batch_id == b2->batch_id);
  CHECK(log.batch_ids() == std::vector<std::string>{"e1-b000001", "e1-b000002"});
}

TEST_CASE("telemetry log survives restarts and torn writes") {
  auto dir = testing::temp_dir("tlog");
  auto file = std::filesystem::path(dir) / "telemetry.log";
  std::string open_id;
  {
    TelemetryLog log("e1", file);
    for (int i = 0; i < 6; ++i) log.append({{"obs_id", "o" + std::to_string(i)}});
    auto b = log.form_batch(2);
    log.ack(b->batch_id);
    open_id = log.form_batch(2)->batch_id;
  }
  {
    TelemetryLog log("e1", file);
    CHECK(log.pending() == 4);
    CHECK(log.unbatched() == 2);
    CHECK(log.total_appended() == 6);
    auto b = log.open_batch();
    REQUIRE(b);
    CHECK(b->batch_id == open_id);
    CHECK(b->records[0]["obs_id"] == "o2");
    CHECK(log.append({{"obs_id", "o6"}}) == 7);
  }
  // A crash mid-append leaves a partial entry at the tail.
  {
    std::ofstream out(file, std::ios::binary | std::ios::app);
    out.write("\x00\x00\x01\x00{\"kind\":", 12);
  }
  TelemetryLog log("e1", file);
  CHECK(log.pending() == 5);
  CHECK(log.append({{"obs_id", "o7"}}) == 8);
  TelemetryLog reread("e1", file);
  CHECK(reread.pending() == 6);
  CHECK(reread.form_batch(100)->batch_id == "e1-b000003");
}

TEST_CASE("alert and command json") {
  Alert a;
  a.alert_id = "e1-a1";
  a.urgency = Urgency::high;
  a.location = {1.5, -2.5};
  Json j = a;
  CHECK(j.get<Alert>() == a);
  ActuationCommand c{"e1-c1", "e1-a1", Action::irrigate, "s1", false, CommandState::approved};
  Json k = c;
  CHECK(k["action"] == "irrigate");
  CHECK(k.get<ActuationCommand>() == c);
}
