#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "farmlight/edge/runtime.h"
#include "farmlight/model.h"

namespace farmlight::sim {

struct SimConfig {
  std::uint64_t seed = 1;
  int edges = 3;
  double loss = 0.2;              // per-segment drop probability on every hop
  std::int64_t latency_ms = 20;
  std::int64_t step_ms = 100;
  int bursts = 10;                // observation bursts per edge
  int burst_size = 6;
  std::int64_t burst_spacing_ms = 1000;  // between observations inside a burst
  std::int64_t burst_gap_ms = 15'000;    // quiet time after each burst
  double anomaly_fraction = 0.5;
  std::int64_t publish_at_ms = 10'000;
  std::int64_t max_sim_ms = 3'600'000;
  int convergence_budget = 10;    // model-check intervals allowed after publish
  edge::EdgePolicy policy;

  void validate() const;
};

void to_json(Json& j, const SimConfig& c);
/// Partial objects override the current values.
void from_json(const Json& j, SimConfig& c);

struct EdgeSummary {
  std::string edge_id;
  std::string final_version;
  std::int64_t swap_ms = -1;
  double intervals_to_converge = -1.0;
  std::size_t observations = 0;
  std::size_t alerts = 0;
  std::size_t batches = 0;
  std::uint64_t batch_sends = 0;
  std::uint64_t integrity_failures = 0;
};

struct SimSummary {
  std::string v0;
  std::string v1;
  std::vector<EdgeSummary> edges;
  std::int64_t finished_ms = 0;
  std::uint64_t segments_sent = 0;
  std::uint64_t segments_dropped = 0;
  std::size_t batches_generated = 0;
  std::size_t batches_stored = 0;
  std::size_t duplicate_uploads = 0;
  std::size_t records_generated = 0;
  std::size_t records_stored = 0;
  std::size_t alerts_generated = 0;
  std::size_t alerts_in_telemetry = 0;
  std::size_t alert_frames_received = 0;
  bool converged = false;          // every edge on v1 within the budget
  bool telemetry_exact = false;    // stored batch ids == generated batch ids
  bool alerts_delivered = false;   // every alert reached the store via telemetry
  bool passed() const { return converged && telemetry_exact && alerts_delivered; }
};

void to_json(Json& j, const SimSummary& s);

/// Runs cloud + gateway + N edges on one simulated clock. `v0` is preloaded
/// on every edge and published first; `v1` is published at publish_at_ms.
/// Without artifacts, v0 is an untrained student and v1 a quickly fine-tuned
/// one, both derived from the seed.
SimSummary run_e2e(const SimConfig& config, const std::optional<model::Artifact>& v0 = std::nullopt,
                   const std::optional<model::Artifact>& v1 = std::nullopt);

}  // namespace farmlight::sim
