#include "farmlight/edge/sync.h"

#include <algorithm>

#include "farmlight/digest.h"

namespace farmlight::edge {

namespace {
// Larger manifests are refused rather than buffered.
constexpr std::uint64_t kMaxArtifactBytes = 64ULL << 20;
}  // namespace

std::int64_t Backoff::delay(int attempt, Rng& rng) const {
  std::int64_t d = base_ms;
  for (int i = 0; i < attempt && d < cap_ms; ++i) d *= 2;
  d = std::min(d, cap_ms);
  std::int64_t half = d / 2;
  return d - half + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(half) + 1));
}

SyncClient::SyncClient(EdgeRuntime& runtime, std::shared_ptr<net::Transport> link, std::uint64_t seed,
                       Backoff backoff)
    : runtime_(runtime),
      link_(std::move(link)),
      rng_(seed),
      backoff_(backoff),
      next_check_ms_(runtime.clock().now_ms()) {}

void SyncClient::set_link(std::shared_ptr<net::Transport> link) {
  link_ = std::move(link);
  reader_ = {};
  session_ = false;
  hello_ = {};
  telemetry_.outstanding = false;
  model_.outstanding = false;
  // A partial download continues on the new link from its next chunk.
  publish_state();
}

bool SyncClient::send(const net::Message& m) {
  if (!link_ || !link_->send(net::encode(m))) {
    ++stats_.send_failures;
    return false;
  }
  return true;
}

void SyncClient::arm(Lane& lane, std::int64_t now, bool failed) {
  lane.outstanding = !failed;
  lane.deadline_ms = now + backoff_.delay(lane.attempt, rng_);
  ++lane.attempt;
}

void SyncClient::settle(Lane& lane) {
  lane.outstanding = false;
  lane.attempt = 0;
  lane.deadline_ms = 0;
}

void SyncClient::push_alert(const Alert& alert) {
  if (session_) send(net::AlertMsg{alert});
}

void SyncClient::send_hello(std::int64_t now) {
  ++stats_.hellos_sent;
  bool ok = send(net::Hello{runtime_.edge_id(), "edge"});
  arm(hello_, now, !ok);
}

void SyncClient::send_batch(std::int64_t now) {
  auto batch = runtime_.telemetry().open_batch();
  if (!batch) {
    settle(telemetry_);
    inflight_batch_.reset();
    return;
  }
  inflight_batch_ = batch->batch_id;
  ++stats_.batches_sent;
  bool ok = send(net::TelemetryBatch::pack(batch->batch_id, runtime_.edge_id(), batch->records));
  arm(telemetry_, now, !ok);
}

void SyncClient::send_model_request(std::int64_t now) {
  bool ok;
  if (download_) {
    ++stats_.chunk_requests;
    ok = send(net::ModelChunkReq{download_->manifest.version_id, download_->next});
  } else {
    ++stats_.model_queries;
    ok = send(net::ModelQuery{runtime_.model_version()});
  }
  arm(model_, now, !ok);
}

void SyncClient::tick() {
  std::int64_t now = runtime_.clock().now_ms();
  if (link_) {
    reader_.feed(link_->receive());
    while (auto item = reader_.next()) {
      if (item->error) continue;  // garbage from the link; retries cover it
      net::DecodeResult d = net::decode(item->raw);
      if (d.ok()) handle(d.message(), now);
    }
  }

  if (!session_) {
    if (now >= hello_.deadline_ms) send_hello(now);
    publish_state();
    return;
  }

  const EdgePolicy& policy = runtime_.policy();
  bool idle = now - runtime_.last_activity_ms() >= static_cast<std::int64_t>(policy.idle_secs * 1000);

  // Telemetry: retry the open batch on its deadline; form a new one only when idle.
  if (telemetry_.outstanding || telemetry_.attempt > 0) {
    if (now >= telemetry_.deadline_ms) send_batch(now);
  } else if (idle) {
    if (!runtime_.telemetry().open_batch())
      runtime_.telemetry().form_batch(static_cast<std::size_t>(policy.batch_max));
    if (runtime_.telemetry().open_batch()) send_batch(now);
  }

  // Model: a check is due on the interval; downloads and retries run on their deadlines.
  if (model_.outstanding || model_.attempt > 0) {
    if (now >= model_.deadline_ms) send_model_request(now);
  } else if (download_) {
    send_model_request(now);
  } else if (now >= next_check_ms_ && (idle || runtime_.model_version().empty())) {
    // An edge without a model runs no inference, so its check is not held back.
    next_check_ms_ = now + static_cast<std::int64_t>(policy.model_check_interval_secs * 1000);
    send_model_request(now);
  }
  publish_state();
}

void SyncClient::handle(const net::Message& m, std::int64_t now) {
  if (const auto* ack = std::get_if<net::HelloAck>(&m)) {
    (void)ack;
    session_ = true;
    settle(hello_);
    return;
  }
  if (const auto* ack = std::get_if<net::BatchAck>(&m)) {
    if (runtime_.telemetry().ack(ack->batch_id)) {
      ++stats_.batches_acked;
      last_sync_ms_ = now;
    }
    if (inflight_batch_ == ack->batch_id) {
      inflight_batch_.reset();
      settle(telemetry_);
    }
    return;
  }
  if (const auto* manifest = std::get_if<net::ModelManifest>(&m)) {
    if (download_ || !model_.outstanding) return;  // stale reply
    settle(model_);
    last_check_ms_ = now;
    if (manifest->version_id == runtime_.model_version()) return;
    std::uint64_t expected_chunks = (manifest->total_bytes + net::kChunkSize - 1) / net::kChunkSize;
    if (manifest->chunk_size != net::kChunkSize || manifest->chunk_count != expected_chunks ||
        manifest->total_bytes == 0 || manifest->total_bytes > kMaxArtifactBytes) {
      runtime_.record_event("sync_error", "inconsistent manifest for " + manifest->version_id);
      return;
    }
    download_ = Download{*manifest, {}, 0};
    download_->data.reserve(manifest->total_bytes);
    return;
  }
  if (const auto* chunk = std::get_if<net::ModelChunk>(&m)) {
    if (!download_ || chunk->version_id != download_->manifest.version_id ||
        chunk->index != download_->next)
      return;  // duplicate or stale
    std::size_t expected = static_cast<std::size_t>(
        std::min<std::uint64_t>(net::kChunkSize, download_->manifest.total_bytes - download_->data.size()));
    settle(model_);
    if (chunk->bytes.size() != expected) {
      ++stats_.integrity_failures;
      runtime_.record_event("integrity_error", "chunk " + std::to_string(chunk->index) +
                                                   " has the wrong length; swap aborted");
      download_.reset();
      return;
    }
    download_->data.insert(download_->data.end(), chunk->bytes.begin(), chunk->bytes.end());
    ++download_->next;
    if (download_->next == download_->manifest.chunk_count) finish_download(now);
    return;
  }
  if (const auto* err = std::get_if<net::ErrorMsg>(&m)) {
    ++stats_.errors_received;
    runtime_.record_event("remote_error", err->code + ": " + err->detail);
    if (download_ && (err->code == "no_such_version" || err->code == "bad_index")) {
      download_.reset();
      settle(model_);
    }
    if (err->code == "no_model") settle(model_);
    return;
  }
}

void SyncClient::finish_download(std::int64_t now) {
  Download d = std::move(*download_);
  download_.reset();
  try {
    if (to_hex(sha256(d.data)) != d.manifest.sha256_hex)
      throw IntegrityError("downloaded artifact " + d.manifest.version_id +
                           " does not match the manifest digest");
    if (model::load(d.data).meta.version_id != d.manifest.version_id)
      throw IntegrityError("artifact metadata names a different version than the manifest");
    runtime_.install_model(d.data);
    ++stats_.swaps;
    last_swap_ms_ = now;
    runtime_.record_event("model_swap", d.manifest.version_id);
  } catch (const Error& e) {
    // Covers IntegrityError, FormatError and TruncationError from the loader;
    // the previous snapshot keeps serving.
    ++stats_.integrity_failures;
    runtime_.record_event("integrity_error", e.what());
  }
}

void SyncClient::publish_state() {
  runtime_.update_sync({last_sync_ms_, last_check_ms_, session_});
}

}  // namespace farmlight::edge
