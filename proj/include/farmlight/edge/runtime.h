#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "farmlight/clock.h"
#include "farmlight/domain.h"
#include "farmlight/edge/telemetry_log.h"
#include "farmlight/edge/types.h"
#include "farmlight/model.h"

namespace farmlight::edge {

struct EdgePolicy {
  double alert_threshold = 0.7;  // (0, 1]
  bool auto_actuate = false;
  double idle_secs = 5.0;
  int batch_max = 256;
  double model_check_interval_secs = 30.0;
  std::size_t queue_capacity = 10'000;

  void validate() const;
  bool operator==(const EdgePolicy&) const = default;
};

void to_json(Json& j, const EdgePolicy& p);
/// Keys absent from `j` keep their current values, so a partial object acts
/// as an override.
void from_json(const Json& j, EdgePolicy& p);

enum class Outcome { none, alert, alert_and_command };

struct Decision {
  Outcome outcome = Outcome::none;
  bool requires_approval = false;
};

/// Healthy or below-threshold (strict) diagnoses only reach telemetry; high
/// urgency classes also get an actuation command.
Decision decide(const Diagnosis& diagnosis, const ClassCatalog& catalog, const EdgePolicy& policy);

/// Irrigation changes for classes whose treatment mentions irrigation,
/// spraying otherwise.
Action action_for(const ClassInfo& info);

/// Template answer naming the class and its treatments.
std::string answer_text(const ClassCatalog& catalog, const Diagnosis& diagnosis);

struct ModelSnapshot {
  model::Artifact artifact;
  std::string version_id;
  std::int64_t loaded_ms = 0;
};

struct ProcessResult {
  std::string obs_id;
  Diagnosis diagnosis;
  std::optional<Alert> alert;
  std::optional<ActuationCommand> command;
  std::uint64_t telemetry_seq = 0;
};

struct AuditRecord {
  std::string command_id;
  CommandState from = CommandState::pending;
  CommandState to = CommandState::pending;
  std::int64_t at_ms = 0;
  std::string actor;
};

void to_json(Json& j, const AuditRecord& r);

struct QueryResult {
  std::string obs_id;
  std::string prompt;
  std::string question;
  Diagnosis diagnosis;
  std::string class_name;
  std::string answer;
};

void to_json(Json& j, const QueryResult& r);

struct EdgeEvent {
  std::int64_t at_ms = 0;
  std::string kind;  // model_swap, integrity_error, sync_error, ...
  std::string detail;
};

struct SyncState {
  std::int64_t last_sync_ms = -1;  // last acknowledged batch
  std::int64_t last_check_ms = -1; // last manifest received
  bool session = false;
};

struct EdgeOptions {
  std::string edge_id = "edge-1";
  EdgePolicy policy;
  std::optional<std::filesystem::path> data_dir;  // telemetry.log and model.flsm
};

/// Ingest → inference → decide → telemetry, plus the state the API reads.
/// One consumer drains the queue; API readers may run concurrently.
class EdgeRuntime {
 public:
  EdgeRuntime(EdgeOptions options, ClassCatalog catalog, const Clock& clock);
  ~EdgeRuntime();
  EdgeRuntime(const EdgeRuntime&) = delete;
  EdgeRuntime& operator=(const EdgeRuntime&) = delete;

  const std::string& edge_id() const { return options_.edge_id; }
  const EdgePolicy& policy() const { return options_.policy; }
  const ClassCatalog& catalog() const { return catalog_; }
  const Clock& clock() const { return clock_; }

  /// Verifies and installs an artifact between inferences. The bytes are also
  /// written to model.flsm when a data directory is configured.
  void install_model(std::span<const std::uint8_t> artifact_bytes);
  void install_model(const model::Artifact& artifact);
  std::shared_ptr<const ModelSnapshot> snapshot() const;
  /// Empty when no model is loaded.
  std::string model_version() const;

  /// NotReady without a model.
  Diagnosis diagnose(const Observation& obs) const;

  /// Validates and enqueues. Backpressure at capacity.
  void ingest(Observation obs);
  std::size_t queue_depth() const;
  /// Processes the oldest queued observation; nullopt when the queue is empty.
  std::optional<ProcessResult> process_next();
  std::size_t drain();

  std::vector<Alert> alerts_since(std::int64_t since_ms) const;
  std::size_t alert_count() const;
  /// Blocks until more than `seen` alerts exist or the timeout passes.
  std::vector<Alert> wait_alerts(std::size_t seen, std::chrono::milliseconds timeout) const;

  std::optional<Observation> observation(const std::string& obs_id) const;

  std::vector<ActuationCommand> commands() const;
  std::size_t pending_commands() const;
  /// pending → approved → executed. NotFound / Conflict.
  ActuationCommand approve(const std::string& command_id, const std::string& actor);
  /// pending → rejected. NotFound / Conflict.
  ActuationCommand reject(const std::string& command_id, const std::string& actor);
  std::vector<AuditRecord> audit() const;

  /// Diagnoses the given or latest observation with the current snapshot.
  /// NotFound for an unknown id, NotReady when nothing was ingested.
  QueryResult query(const std::string& text, const std::optional<std::string>& obs_id);

  TelemetryLog& telemetry() { return telemetry_; }
  std::int64_t last_activity_ms() const;

  void record_event(std::string kind, std::string detail);
  std::vector<EdgeEvent> events() const;
  void update_sync(const SyncState& s);
  SyncState sync_state() const;

  Json status() const;

  /// Live mode: a thread that drains the queue as observations arrive.
  void start_worker();
  void stop_worker();

 private:
  void touch();
  void transition(ActuationCommand& cmd, CommandState to, const std::string& actor);
  Diagnosis diagnose_on(const ModelSnapshot& snap, const Observation& obs) const;

  EdgeOptions options_;
  ClassCatalog catalog_;
  const Clock& clock_;
  TelemetryLog telemetry_;

  mutable std::mutex model_mu_;
  std::shared_ptr<const ModelSnapshot> snapshot_;

  mutable std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<Observation> queue_;

  mutable std::mutex state_mu_;
  mutable std::condition_variable alert_cv_;
  std::vector<Alert> alerts_;
  std::map<std::string, Observation> observations_;
  std::deque<std::string> observation_order_;
  std::string latest_obs_;
  std::vector<ActuationCommand> commands_;
  std::vector<AuditRecord> audit_;
  std::vector<EdgeEvent> events_;
  SyncState sync_;
  std::int64_t last_activity_ms_;
  std::uint64_t alert_seq_ = 0;
  std::uint64_t command_seq_ = 0;

  std::thread worker_;
  std::atomic<bool> stopping_{false};
};

inline constexpr std::size_t kObservationsRetained = 10'000;

}  // namespace farmlight::edge
