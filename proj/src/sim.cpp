#include "farmlight/sim.h"

#include <cmath>
#include <memory>
#include <set>

#include "farmlight/edge/sync.h"
#include "farmlight/netproto/cloud.h"
#include "farmlight/netproto/gateway.h"
#include "farmlight/synthgen.h"
#include "farmlight/trainer.h"

namespace farmlight::sim {

void SimConfig::validate() const {
  if (edges < 1) throw ContractViolation("sim needs at least one edge");
  if (!(loss >= 0.0 && loss < 1.0)) throw ContractViolation("loss must be in [0, 1)");
  if (step_ms < 1 || latency_ms < 0) throw ContractViolation("step_ms must be positive");
  if (bursts < 0 || burst_size < 1) throw ContractViolation("bad burst shape");
  if (!(anomaly_fraction >= 0.0 && anomaly_fraction <= 1.0))
    throw ContractViolation("anomaly_fraction must be in [0, 1]");
  if (publish_at_ms < 0 || max_sim_ms <= publish_at_ms)
    throw ContractViolation("publish time must fall inside the run");
  policy.validate();
}

void to_json(Json& j, const SimConfig& c) {
  j = Json{{"seed", c.seed},
           {"edges", c.edges},
           {"loss", c.loss},
           {"latency_ms", c.latency_ms},
           {"step_ms", c.step_ms},
           {"bursts", c.bursts},
           {"burst_size", c.burst_size},
           {"burst_spacing_ms", c.burst_spacing_ms},
           {"burst_gap_ms", c.burst_gap_ms},
           {"anomaly_fraction", c.anomaly_fraction},
           {"publish_at_ms", c.publish_at_ms},
           {"max_sim_ms", c.max_sim_ms},
           {"convergence_budget", c.convergence_budget},
           {"policy", c.policy}};
}

void from_json(const Json& j, SimConfig& c) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("seed", c.seed);
  take("edges", c.edges);
  take("loss", c.loss);
  take("latency_ms", c.latency_ms);
  take("step_ms", c.step_ms);
  take("bursts", c.bursts);
  take("burst_size", c.burst_size);
  take("burst_spacing_ms", c.burst_spacing_ms);
  take("burst_gap_ms", c.burst_gap_ms);
  take("anomaly_fraction", c.anomaly_fraction);
  take("publish_at_ms", c.publish_at_ms);
  take("max_sim_ms", c.max_sim_ms);
  take("convergence_budget", c.convergence_budget);
  if (j.contains("policy")) edge::from_json(j.at("policy"), c.policy);
  c.validate();
}

void to_json(Json& j, const SimSummary& s) {
  Json edges = Json::array();
  for (const auto& e : s.edges)
    edges.push_back({{"edge_id", e.edge_id},
                     {"final_version", e.final_version},
                     {"swap_ms", e.swap_ms},
                     {"intervals_to_converge", e.intervals_to_converge},
                     {"observations", e.observations},
                     {"alerts", e.alerts},
                     {"batches", e.batches},
                     {"batch_sends", e.batch_sends},
                     {"integrity_failures", e.integrity_failures}});
  j = Json{{"v0", s.v0},
           {"v1", s.v1},
           {"edges", edges},
           {"finished_ms", s.finished_ms},
           {"segments_sent", s.segments_sent},
           {"segments_dropped", s.segments_dropped},
           {"batches_generated", s.batches_generated},
           {"batches_stored", s.batches_stored},
           {"duplicate_uploads", s.duplicate_uploads},
           {"records_generated", s.records_generated},
           {"records_stored", s.records_stored},
           {"alerts_generated", s.alerts_generated},
           {"alerts_in_telemetry", s.alerts_in_telemetry},
           {"alert_frames_received", s.alert_frames_received},
           {"converged", s.converged},
           {"telemetry_exact", s.telemetry_exact},
           {"alerts_delivered", s.alerts_delivered},
           {"passed", s.passed()}};
}

namespace {

struct DefaultModels {
  model::Artifact v0;
  model::Artifact v1;
};

/// Untrained student and a short supervised fine-tune of it.
DefaultModels default_models(const synth::World& world, std::uint64_t seed) {
  auto cfg = model::ModelConfig::student();
  model::Artifact v0{cfg, model::init(cfg, SplitMix64(seed ^ 0x51A0ULL).next()), {}};
  v0.meta.stage = "init";
  v0.meta.catalog_digest = world.catalog.digest();
  v0.params.round_to_storage();
  v0.meta.version_id = model::compute_version_id(v0.params, cfg, v0.meta.stage);

  std::vector<int> train_counts(kNumClasses, 40), val_counts(kNumClasses, 5);
  auto train = synth::gen_dataset(world, train_counts, seed, synth::Split::train);
  auto val = synth::gen_dataset(world, val_counts, seed, synth::Split::val);
  auto sc = distill::StageConfig::defaults(distill::Stage::sft, seed);
  sc.epochs = 30;
  auto result = distill::train_stage(v0, nullptr, train.observations, val.observations, sc);
  return {v0, result.artifact};
}

struct EdgeNode {
  std::unique_ptr<edge::EdgeRuntime> runtime;
  std::unique_ptr<edge::SyncClient> sync;
  std::vector<std::pair<std::int64_t, Observation>> schedule;
  std::size_t next = 0;
  std::size_t alerts = 0;
};

}  // namespace

SimSummary run_e2e(const SimConfig& config, const std::optional<model::Artifact>& v0_in,
                   const std::optional<model::Artifact>& v1_in) {
  config.validate();
  synth::World world = synth::default_world();
  model::Artifact v0, v1;
  if (v0_in && v1_in) {
    v0 = *v0_in;
    v1 = *v1_in;
  } else {
    auto d = default_models(world, config.seed);
    v0 = v0_in ? *v0_in : d.v0;
    v1 = v1_in ? *v1_in : d.v1;
  }
  Bytes v0_bytes = model::save(v0.params, v0.config, v0.meta);
  Bytes v1_bytes = model::save(v1.params, v1.config, v1.meta);

  ManualClock clock(0);
  net::SimNetwork network(Rng::substream(config.seed, 0x4E7ULL).next(), config.loss,
                          config.latency_ms);
  net::Registry registry;
  net::TelemetryStore store;
  net::CloudService cloud(registry, store);
  auto v0_entry = registry.publish(v0_bytes, 0);
  net::Gateway gateway(
      [&] {
        auto [gw_side, cloud_side] = network.connect();
        cloud.attach(cloud_side);
        return gw_side;
      },
      clock);

  std::vector<EdgeNode> nodes(static_cast<std::size_t>(config.edges));
  const std::int64_t burst_period =
      static_cast<std::int64_t>(config.burst_size - 1) * config.burst_spacing_ms + config.burst_gap_ms;
  for (int e = 0; e < config.edges; ++e) {
    EdgeNode& n = nodes[static_cast<std::size_t>(e)];
    edge::EdgeOptions opts;
    opts.edge_id = "edge-" + std::to_string(e + 1);
    opts.policy = config.policy;
    n.runtime = std::make_unique<edge::EdgeRuntime>(opts, world.catalog, clock);
    n.runtime->install_model(v0_bytes);
    auto [edge_side, gw_side] = network.connect();
    gateway.attach_edge(gw_side);
    n.sync = std::make_unique<edge::SyncClient>(
        *n.runtime, edge_side, Rng::substream(config.seed, 0x5C00ULL + static_cast<std::uint64_t>(e)).next());

    Rng rng = Rng::substream(config.seed, 0x0B5ULL + static_cast<std::uint64_t>(e));
    // Stagger edges so their bursts interleave on the gateway.
    std::int64_t offset = 500 + static_cast<std::int64_t>(e) * 700;
    for (int b = 0; b < config.bursts; ++b) {
      for (int i = 0; i < config.burst_size; ++i) {
        std::int64_t t = offset + b * burst_period + i * config.burst_spacing_ms;
        int cls = 0;
        if (rng.uniform() < config.anomaly_fraction)
          cls = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(kNumClasses - 1)));
        Observation obs = synth::gen_observation(world.specs[static_cast<std::size_t>(cls)], rng, t);
        obs.sensors.sensor_id = opts.edge_id + "-" + obs.sensors.sensor_id;
        n.schedule.emplace_back(t, std::move(obs));
      }
    }
  }

  SimSummary summary;
  summary.v0 = v0_entry->version_id;
  bool published = false;
  std::int64_t t = 0;
  for (; t <= config.max_sim_ms; t += config.step_ms) {
    clock.set(t);
    network.set_now(t);
    if (!published && t >= config.publish_at_ms) {
      summary.v1 = registry.publish(v1_bytes, t)->version_id;
      published = true;
    }
    for (auto& n : nodes) {
      while (n.next < n.schedule.size() && n.schedule[n.next].first <= t) {
        Observation obs = n.schedule[n.next++].second;
        obs.label.reset();
        n.runtime->ingest(std::move(obs));
        // Each observation is fully handled before the next one is taken.
        while (auto r = n.runtime->process_next()) {
          if (r->alert) {
            ++n.alerts;
            n.sync->push_alert(*r->alert);
          }
        }
      }
      n.sync->tick();
    }
    gateway.poll();
    cloud.poll();
    gateway.poll();

    if (published) {
      bool done = true;
      for (const auto& n : nodes) {
        done = done && n.next == n.schedule.size() && n.runtime->model_version() == summary.v1 &&
               n.runtime->telemetry().pending() == 0;
      }
      if (done) break;
    }
  }
  summary.finished_ms = std::min(t, config.max_sim_ms);

  const double interval_ms = config.policy.model_check_interval_secs * 1000.0;
  std::set<std::pair<std::string, std::string>> generated;
  std::set<std::string> alert_ids;
  bool converged = published;
  for (auto& n : nodes) {
    EdgeSummary es;
    es.edge_id = n.runtime->edge_id();
    es.final_version = n.runtime->model_version();
    es.swap_ms = n.sync->last_swap_ms();
    es.observations = n.schedule.size();
    es.alerts = n.alerts;
    for (const auto& id : n.runtime->telemetry().batch_ids()) generated.insert({es.edge_id, id});
    es.batches = n.runtime->telemetry().batch_ids().size();
    es.batch_sends = n.sync->stats().batches_sent;
    es.integrity_failures = n.sync->stats().integrity_failures;
    if (es.final_version == summary.v1 && es.swap_ms >= config.publish_at_ms)
      es.intervals_to_converge = static_cast<double>(es.swap_ms - config.publish_at_ms) / interval_ms;
    converged = converged && es.intervals_to_converge >= 0.0 &&
                es.intervals_to_converge <= config.convergence_budget;
    summary.records_generated += n.runtime->telemetry().total_appended();
    summary.alerts_generated += n.alerts;
    for (const auto& a : n.runtime->alerts_since(0)) alert_ids.insert(a.alert_id);
    summary.edges.push_back(es);
  }
  summary.segments_sent = network.segments_sent();
  summary.segments_dropped = network.segments_dropped();
  summary.batches_generated = generated.size();
  summary.batches_stored = store.batch_count();
  summary.duplicate_uploads = cloud.duplicate_batches();
  summary.records_stored = store.record_count();
  summary.alert_frames_received = cloud.alerts().size();
  std::set<std::string> alerts_seen;
  for (const auto& n : nodes)
    for (const auto& r : store.records(n.runtime->edge_id()))
      if (r.contains("alert")) alerts_seen.insert(r["alert"].at("alert_id").get<std::string>());
  summary.alerts_in_telemetry = alerts_seen.size();
  summary.converged = converged;
  summary.telemetry_exact = store.keys() == generated && summary.records_stored == summary.records_generated;
  summary.alerts_delivered = alerts_seen == alert_ids;
  return summary;
}

}  // namespace farmlight::sim
