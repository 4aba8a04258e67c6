#include "farmlight/edge/runtime.h"

#include <algorithm>
#include <cstdio>

#include "farmlight/digest.h"
#include "farmlight/fusion.h"

namespace farmlight::edge {

void EdgePolicy::validate() const {
  if (!(alert_threshold > 0.0 && alert_threshold <= 1.0))
    throw ContractViolation("alert_threshold must be in (0, 1]");
  if (!(idle_secs >= 0.0)) throw ContractViolation("idle_secs must be non-negative");
  if (batch_max < 1) throw ContractViolation("batch_max must be at least 1");
  if (!(model_check_interval_secs > 0.0))
    throw ContractViolation("model_check_interval_secs must be positive");
  if (queue_capacity < 1) throw ContractViolation("queue_capacity must be at least 1");
}

void to_json(Json& j, const EdgePolicy& p) {
  j = Json{{"alert_threshold", p.alert_threshold},
           {"auto_actuate", p.auto_actuate},
           {"idle_secs", p.idle_secs},
           {"batch_max", p.batch_max},
           {"model_check_interval_secs", p.model_check_interval_secs},
           {"queue_capacity", p.queue_capacity}};
}

void from_json(const Json& j, EdgePolicy& p) {
  if (j.contains("alert_threshold")) j.at("alert_threshold").get_to(p.alert_threshold);
  if (j.contains("auto_actuate")) j.at("auto_actuate").get_to(p.auto_actuate);
  if (j.contains("idle_secs")) j.at("idle_secs").get_to(p.idle_secs);
  if (j.contains("batch_max")) j.at("batch_max").get_to(p.batch_max);
  if (j.contains("model_check_interval_secs"))
    j.at("model_check_interval_secs").get_to(p.model_check_interval_secs);
  if (j.contains("queue_capacity")) j.at("queue_capacity").get_to(p.queue_capacity);
  p.validate();
}

Decision decide(const Diagnosis& diagnosis, const ClassCatalog& catalog, const EdgePolicy& policy) {
  const ClassInfo& info = catalog.at(diagnosis.predicted);
  if (info.is_healthy || diagnosis.confidence < policy.alert_threshold) return {};
  if (info.urgency == Urgency::high) return {Outcome::alert_and_command, !policy.auto_actuate};
  return {Outcome::alert, false};
}

Action action_for(const ClassInfo& info) {
  if (info.is_healthy) return Action::none;
  for (const auto& t : info.treatment)
    if (t.find("irrigation") != std::string::npos) return Action::irrigate;
  return Action::spray;
}

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

std::string answer_text(const ClassCatalog& catalog, const Diagnosis& d) {
  const ClassInfo& info = catalog.at(d.predicted);
  std::string head = "Diagnosis: " + info.name + " (confidence " + fixed2(d.confidence) + ").";
  if (info.is_healthy) return head + " " + kNoActionRequired;
  return head + " Urgency: " + to_string(info.urgency) + ". Symptoms: " + join(info.symptoms, ", ") +
         ". Recommended treatment: " + d.recommendation + ".";
}

void to_json(Json& j, const AuditRecord& r) {
  j = Json{{"command_id", r.command_id},
           {"from", to_string(r.from)},
           {"to", to_string(r.to)},
           {"at_ms", r.at_ms},
           {"actor", r.actor}};
}

void to_json(Json& j, const QueryResult& r) {
  j = Json{{"obs_id", r.obs_id},     {"prompt", r.prompt},         {"question", r.question},
           {"diagnosis", r.diagnosis}, {"class_name", r.class_name}, {"answer", r.answer}};
}

EdgeRuntime::EdgeRuntime(EdgeOptions options, ClassCatalog catalog, const Clock& clock)
    : options_(std::move(options)),
      catalog_(std::move(catalog)),
      clock_(clock),
      telemetry_(options_.edge_id, options_.data_dir
                                       ? std::optional(*options_.data_dir / "telemetry.log")
                                       : std::nullopt),
      last_activity_ms_(clock.now_ms()) {
  options_.policy.validate();
  if (catalog_.size() == 0) throw ContractViolation("edge runtime needs a class catalog");
  if (options_.data_dir && std::filesystem::exists(*options_.data_dir / "model.flsm"))
    install_model(read_file(*options_.data_dir / "model.flsm"));
}

EdgeRuntime::~EdgeRuntime() { stop_worker(); }

void EdgeRuntime::install_model(std::span<const std::uint8_t> artifact_bytes) {
  model::Artifact a = model::load(artifact_bytes);
  if (static_cast<std::size_t>(a.config.classes) != catalog_.size())
    throw ContractViolation("model class count does not match the catalog");
  if (options_.data_dir) {
    auto tmp = *options_.data_dir / "model.flsm.tmp";
    write_file(tmp, artifact_bytes);
    std::filesystem::rename(tmp, *options_.data_dir / "model.flsm");
  }
  auto snap = std::make_shared<ModelSnapshot>();
  snap->version_id = a.meta.version_id;
  snap->artifact = std::move(a);
  snap->loaded_ms = clock_.now_ms();
  std::lock_guard lock(model_mu_);
  snapshot_ = std::move(snap);
}

void EdgeRuntime::install_model(const model::Artifact& artifact) {
  install_model(model::save(artifact.params, artifact.config, artifact.meta));
}

std::shared_ptr<const ModelSnapshot> EdgeRuntime::snapshot() const {
  std::lock_guard lock(model_mu_);
  return snapshot_;
}

std::string EdgeRuntime::model_version() const {
  auto s = snapshot();
  return s ? s->version_id : std::string();
}

Diagnosis EdgeRuntime::diagnose_on(const ModelSnapshot& snap, const Observation& obs) const {
  const auto& a = snap.artifact;
  fusion::Prompt prompt = fusion::build_prompt(obs.sensors);
  auto trace = model::forward(a.params, a.config, fusion::patchify(obs.image), prompt.features);
  int predicted = argmax(trace.response);
  return Diagnosis::from_probs(obs.obs_id, trace.response, catalog_.recommendation(predicted),
                               snap.version_id);
}

Diagnosis EdgeRuntime::diagnose(const Observation& obs) const {
  auto snap = snapshot();
  if (!snap) throw NotReady("no model loaded");
  return diagnose_on(*snap, obs);
}

void EdgeRuntime::touch() {
  std::lock_guard lock(state_mu_);
  last_activity_ms_ = clock_.now_ms();
}

void EdgeRuntime::ingest(Observation obs) {
  if (obs.obs_id.empty()) throw ContractViolation("observation needs an obs_id");
  obs.image.validate();
  obs.sensors.validate();
  {
    std::lock_guard lock(queue_mu_);
    if (queue_.size() >= options_.policy.queue_capacity)
      throw Backpressure("ingest queue full (" + std::to_string(queue_.size()) + " queued)");
    queue_.push_back(obs);
  }
  {
    std::lock_guard lock(state_mu_);
    if (!observations_.count(obs.obs_id)) observation_order_.push_back(obs.obs_id);
    latest_obs_ = obs.obs_id;
    observations_[obs.obs_id] = std::move(obs);
    while (observation_order_.size() > kObservationsRetained) {
      observations_.erase(observation_order_.front());
      observation_order_.pop_front();
    }
    last_activity_ms_ = clock_.now_ms();
  }
  queue_cv_.notify_one();
}

std::size_t EdgeRuntime::queue_depth() const {
  std::lock_guard lock(queue_mu_);
  return queue_.size();
}

std::optional<ProcessResult> EdgeRuntime::process_next() {
  Observation obs;
  {
    std::lock_guard lock(queue_mu_);
    if (queue_.empty()) return std::nullopt;
    obs = std::move(queue_.front());
    queue_.pop_front();
  }
  // One snapshot for the whole inference: a concurrent swap only affects the
  // next observation.
  auto snap = snapshot();
  if (!snap) {
    std::lock_guard lock(queue_mu_);
    queue_.push_front(std::move(obs));
    throw NotReady("no model loaded");
  }
  ProcessResult result;
  result.obs_id = obs.obs_id;
  result.diagnosis = diagnose_on(*snap, obs);
  Decision decision = decide(result.diagnosis, catalog_, options_.policy);
  const ClassInfo& info = catalog_.at(result.diagnosis.predicted);
  std::int64_t now = clock_.now_ms();

  Json record{{"edge_id", options_.edge_id},
              {"obs_id", obs.obs_id},
              {"sensor_id", obs.sensors.sensor_id},
              {"timestamp_ms", obs.sensors.timestamp_ms},
              {"processed_ms", now},
              {"location", obs.location},
              {"sensors", obs.sensors},
              {"image_sha256", to_hex(sha256(to_bytes(canonical(Json(obs.image)))))},
              {"diagnosis", result.diagnosis},
              {"class_name", info.name},
              {"action", "none"}};
  if (obs.label) record["label"] = *obs.label;

  {
    std::lock_guard lock(state_mu_);
    if (decision.outcome != Outcome::none) {
      Alert a;
      a.alert_id = options_.edge_id + "-a" + std::to_string(++alert_seq_);
      a.obs_id = obs.obs_id;
      a.sensor_id = obs.sensors.sensor_id;
      a.location = obs.location;
      a.class_id = info.class_id;
      a.class_name = info.name;
      a.confidence = result.diagnosis.confidence;
      a.recommendation = result.diagnosis.recommendation;
      a.urgency = info.urgency;
      a.created_ms = now;
      a.image_ref = "/v1/observations/" + obs.obs_id;
      alerts_.push_back(a);
      result.alert = a;
      record["action"] = "alert";
      record["alert"] = a;
    }
    if (decision.outcome == Outcome::alert_and_command) {
      ActuationCommand c;
      c.command_id = options_.edge_id + "-c" + std::to_string(++command_seq_);
      c.alert_id = result.alert->alert_id;
      c.action = action_for(info);
      c.target_sensor_id = obs.sensors.sensor_id;
      c.requires_approval = decision.requires_approval;
      commands_.push_back(c);
      if (!c.requires_approval) {
        transition(commands_.back(), CommandState::approved, "auto");
        transition(commands_.back(), CommandState::executed, "auto");
      }
      result.command = commands_.back();
      record["action"] = "alert+command";
      record["command"] = commands_.back();
    }
    last_activity_ms_ = now;
  }
  result.telemetry_seq = telemetry_.append(std::move(record));
  if (result.alert) alert_cv_.notify_all();
  return result;
}

std::size_t EdgeRuntime::drain() {
  std::size_t n = 0;
  while (process_next()) ++n;
  return n;
}

std::vector<Alert> EdgeRuntime::alerts_since(std::int64_t since_ms) const {
  std::lock_guard lock(state_mu_);
  std::vector<Alert> out;
  for (const auto& a : alerts_)
    if (a.created_ms >= since_ms) out.push_back(a);
  return out;
}

std::size_t EdgeRuntime::alert_count() const {
  std::lock_guard lock(state_mu_);
  return alerts_.size();
}

std::vector<Alert> EdgeRuntime::wait_alerts(std::size_t seen, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(state_mu_);
  alert_cv_.wait_for(lock, timeout, [&] { return alerts_.size() > seen || stopping_; });
  if (alerts_.size() <= seen) return {};
  return std::vector<Alert>(alerts_.begin() + static_cast<std::ptrdiff_t>(seen), alerts_.end());
}

std::optional<Observation> EdgeRuntime::observation(const std::string& obs_id) const {
  std::lock_guard lock(state_mu_);
  auto it = observations_.find(obs_id);
  if (it == observations_.end()) return std::nullopt;
  return it->second;
}

std::vector<ActuationCommand> EdgeRuntime::commands() const {
  std::lock_guard lock(state_mu_);
  return commands_;
}

std::size_t EdgeRuntime::pending_commands() const {
  std::lock_guard lock(state_mu_);
  return static_cast<std::size_t>(std::count_if(commands_.begin(), commands_.end(), [](const auto& c) {
    return c.state == CommandState::pending;
  }));
}

void EdgeRuntime::transition(ActuationCommand& cmd, CommandState to, const std::string& actor) {
  if (!transition_allowed(cmd.state, to))
    throw Conflict("command " + cmd.command_id + " cannot go from " + to_string(cmd.state) + " to " +
                   to_string(to));
  audit_.push_back({cmd.command_id, cmd.state, to, clock_.now_ms(), actor});
  cmd.state = to;
}

ActuationCommand EdgeRuntime::approve(const std::string& command_id, const std::string& actor) {
  std::lock_guard lock(state_mu_);
  for (auto& c : commands_) {
    if (c.command_id != command_id) continue;
    transition(c, CommandState::approved, actor);
    // The simulated actuator carries out an approved command at once.
    transition(c, CommandState::executed, "actuator");
    return c;
  }
  throw NotFound("no command " + command_id);
}

ActuationCommand EdgeRuntime::reject(const std::string& command_id, const std::string& actor) {
  std::lock_guard lock(state_mu_);
  for (auto& c : commands_) {
    if (c.command_id != command_id) continue;
    transition(c, CommandState::rejected, actor);
    return c;
  }
  throw NotFound("no command " + command_id);
}

std::vector<AuditRecord> EdgeRuntime::audit() const {
  std::lock_guard lock(state_mu_);
  return audit_;
}

QueryResult EdgeRuntime::query(const std::string& text, const std::optional<std::string>& obs_id) {
  Observation obs;
  {
    std::lock_guard lock(state_mu_);
    std::string id = obs_id.value_or(latest_obs_);
    if (id.empty()) throw NotReady("no observation has been ingested");
    auto it = observations_.find(id);
    if (it == observations_.end()) throw NotFound("no observation " + id);
    obs = it->second;
  }
  QueryResult r;
  r.obs_id = obs.obs_id;
  r.prompt = fusion::build_prompt(obs.sensors).text;
  r.question = text;
  r.diagnosis = diagnose(obs);
  r.class_name = catalog_.at(r.diagnosis.predicted).name;
  r.answer = answer_text(catalog_, r.diagnosis);
  touch();
  return r;
}

std::int64_t EdgeRuntime::last_activity_ms() const {
  std::lock_guard lock(state_mu_);
  return last_activity_ms_;
}

void EdgeRuntime::record_event(std::string kind, std::string detail) {
  std::lock_guard lock(state_mu_);
  events_.push_back({clock_.now_ms(), std::move(kind), std::move(detail)});
}

std::vector<EdgeEvent> EdgeRuntime::events() const {
  std::lock_guard lock(state_mu_);
  return events_;
}

void EdgeRuntime::update_sync(const SyncState& s) {
  std::lock_guard lock(state_mu_);
  sync_ = s;
}

SyncState EdgeRuntime::sync_state() const {
  std::lock_guard lock(state_mu_);
  return sync_;
}

Json EdgeRuntime::status() const {
  Json j{{"edge_id", options_.edge_id},
         {"model_version", model_version()},
         {"queue_depth", queue_depth()},
         {"telemetry_pending", telemetry_.pending()},
         {"policy", options_.policy}};
  std::lock_guard lock(state_mu_);
  j["alerts"] = alerts_.size();
  j["pending_commands"] = std::count_if(commands_.begin(), commands_.end(), [](const auto& c) {
    return c.state == CommandState::pending;
  });
  j["last_sync_ms"] = sync_.last_sync_ms;
  j["last_model_check_ms"] = sync_.last_check_ms;
  j["session"] = sync_.session;
  j["last_activity_ms"] = last_activity_ms_;
  Json recent = Json::array();
  for (std::size_t i = events_.size() > 10 ? events_.size() - 10 : 0; i < events_.size(); ++i)
    recent.push_back({{"at_ms", events_[i].at_ms}, {"kind", events_[i].kind}, {"detail", events_[i].detail}});
  j["recent_events"] = recent;
  return j;
}

void EdgeRuntime::start_worker() {
  if (worker_.joinable()) return;
  {
    std::lock_guard lock(queue_mu_);
    stopping_ = false;
  }
  worker_ = std::thread([this] {
    for (;;) {
      {
        std::unique_lock lock(queue_mu_);
        queue_cv_.wait_for(lock, std::chrono::milliseconds(200),
                           [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        if (queue_.empty()) continue;
      }
      try {
        process_next();
      } catch (const NotReady&) {
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
      } catch (const Error& e) {
        record_event("inference_error", e.what());
      }
    }
  });
}

void EdgeRuntime::stop_worker() {
  {
    std::lock_guard lock(queue_mu_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  {
    std::lock_guard lock(state_mu_);
  }
  alert_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

}  // namespace farmlight::edge
