#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "farmlight/edge/runtime.h"
#include "farmlight/netproto/messages.h"
#include "farmlight/netproto/transport.h"
#include "farmlight/rng.h"

namespace farmlight::edge {

struct Backoff {
  std::int64_t base_ms = 1000;
  std::int64_t cap_ms = 60'000;

  /// Delay before retry number `attempt` (0-based): min(cap, base·2^attempt),
  /// jittered uniformly into its upper half.
  std::int64_t delay(int attempt, Rng& rng) const;
};

struct SyncStats {
  std::uint64_t hellos_sent = 0;
  std::uint64_t batches_sent = 0;  // including re-sends
  std::uint64_t batches_acked = 0;
  std::uint64_t model_queries = 0;
  std::uint64_t chunk_requests = 0;
  std::uint64_t swaps = 0;
  std::uint64_t integrity_failures = 0;
  std::uint64_t errors_received = 0;
  std::uint64_t send_failures = 0;
};

/// The edge side of the sync protocol, driven by tick(). Telemetry uploads
/// start only after the runtime has been idle for idle_secs; model checks are
/// due every model_check_interval_secs and are also held until the runtime is
/// idle. Each request class (handshake, telemetry, model) has at most one
/// request outstanding and retries it with exponential backoff until answered.
class SyncClient {
 public:
  SyncClient(EdgeRuntime& runtime, std::shared_ptr<net::Transport> link, std::uint64_t seed,
             Backoff backoff = {});

  void tick();

  /// Swaps the link, e.g. after a reconnect. The session restarts.
  void set_link(std::shared_ptr<net::Transport> link);

  /// Forwards an alert to the cloud, best effort.
  void push_alert(const Alert& alert);

  const SyncStats& stats() const { return stats_; }
  bool session_established() const { return session_; }
  bool link_open() const { return link_ && link_->is_open(); }
  bool downloading() const { return download_.has_value(); }
  /// Time of the last successful swap, or -1.
  std::int64_t last_swap_ms() const { return last_swap_ms_; }

 private:
  struct Lane {
    bool outstanding = false;
    int attempt = 0;
    std::int64_t deadline_ms = 0;  // re-send or next try at this time
  };

  struct Download {
    net::ModelManifest manifest;
    Bytes data;
    std::uint32_t next = 0;
  };

  bool send(const net::Message& m);
  void arm(Lane& lane, std::int64_t now, bool failed);
  void settle(Lane& lane);
  void handle(const net::Message& m, std::int64_t now);
  void send_hello(std::int64_t now);
  void send_batch(std::int64_t now);
  void send_model_request(std::int64_t now);
  void finish_download(std::int64_t now);
  void publish_state();

  EdgeRuntime& runtime_;
  std::shared_ptr<net::Transport> link_;
  net::FrameReader reader_;
  Rng rng_;
  Backoff backoff_;
  SyncStats stats_;

  bool session_ = false;
  Lane hello_;
  Lane telemetry_;
  Lane model_;
  std::optional<std::string> inflight_batch_;
  std::optional<Download> download_;
  std::int64_t next_check_ms_;
  std::int64_t last_sync_ms_ = -1;
  std::int64_t last_check_ms_ = -1;
  std::int64_t last_swap_ms_ = -1;
};

}  // namespace farmlight::edge
