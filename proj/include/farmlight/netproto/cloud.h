#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "farmlight/netproto/messages.h"
#include "farmlight/netproto/transport.h"

namespace farmlight::net {

struct RegistryEntry {
  std::string version_id;
  Bytes bytes;
  std::string sha256_hex;
  std::int64_t published_ms = 0;
  std::string stage;

  std::uint32_t chunk_count() const;
  ModelManifest manifest() const;
  /// Slice `index` of the artifact; throws ContractViolation past the end.
  Bytes chunk(std::uint32_t index) const;
};

/// Single writer, many readers. Entries are immutable once published.
class Registry {
 public:
  /// With a directory, previously published artifacts are reloaded from
  /// `<dir>/index.ndjson` and every publish is persisted there.
  explicit Registry(std::optional<std::filesystem::path> dir = std::nullopt);

  /// Verifies with model::load (its error propagates); Conflict on a
  /// version_id that is already registered.
  std::shared_ptr<const RegistryEntry> publish(Bytes artifact, std::int64_t now_ms);
  std::shared_ptr<const RegistryEntry> newest() const;
  std::shared_ptr<const RegistryEntry> find(const std::string& version_id) const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::optional<std::filesystem::path> dir_;
  std::vector<std::shared_ptr<const RegistryEntry>> entries_;
};

/// Append-only, keyed by (edge_id, batch_id). Optional persistence writes one
/// NDJSON file per edge under the directory.
class TelemetryStore {
 public:
  explicit TelemetryStore(std::optional<std::filesystem::path> dir = std::nullopt);

  /// False, and nothing written, when the key is already stored.
  bool store(const std::string& edge_id, const std::string& batch_id, const Json& records);
  bool contains(const std::string& edge_id, const std::string& batch_id) const;
  std::size_t batch_count() const;
  std::size_t record_count() const;
  std::set<std::pair<std::string, std::string>> keys() const;
  std::vector<Json> records(const std::string& edge_id) const;

 private:
  mutable std::mutex mu_;
  std::optional<std::filesystem::path> dir_;
  std::set<std::pair<std::string, std::string>> keys_;
  std::map<std::string, std::vector<Json>> records_;
};

/// Edge ids double as file names, so they are restricted to [A-Za-z0-9_.-].
bool valid_node_id(const std::string& id);

class CloudService {
 public:
  CloudService(Registry& registry, TelemetryStore& store);

  /// Handles one decoded message from session `session`; returns the replies.
  std::vector<Message> handle(std::size_t session, const Message& in);

  /// Adds a connection; frames are processed by poll().
  std::size_t attach(std::shared_ptr<Transport> link);
  /// Reads every attached link and answers what arrived. Malformed frames get
  /// an ERROR reply; the connection stays up.
  void poll();

  std::vector<edge::Alert> alerts() const;
  std::size_t duplicate_batches() const;

 private:
  struct Session {
    std::shared_ptr<Transport> link;
    FrameReader reader;
    std::string session_id;
    std::string node_id;
  };

  Registry& registry_;
  TelemetryStore& store_;
  std::vector<Session> sessions_;
  mutable std::mutex mu_;
  std::vector<edge::Alert> alerts_;
  std::size_t duplicates_ = 0;
};

}  // namespace farmlight::net
