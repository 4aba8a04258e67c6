#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "farmlight/codec_util.h"

namespace farmlight::edge {

/// Append-only telemetry buffer. Each entry on disk is a u32 big-endian length
/// followed by canonical JSON:
///   {"kind":"record","record":{...}}
///   {"kind":"batch","batch_id":...,"n":...,"seqs":[...]}
///   {"kind":"ack","batch_id":...}
/// Replaying the file restores exactly the unacknowledged state, including
/// batch assignments, so a batch re-sent after a restart keeps its id.
class TelemetryLog {
 public:
  struct Batch {
    std::string batch_id;
    std::vector<std::uint64_t> seqs;
    Json records;  // array, in seq order
  };

  TelemetryLog(std::string edge_id, std::optional<std::filesystem::path> file);

  /// Stores `record` with a fresh "seq" field; returns the seq.
  std::uint64_t append(Json record);

  /// Records not yet acknowledged, batched or not.
  std::size_t pending() const;
  std::size_t unbatched() const;
  std::uint64_t total_appended() const;

  /// The oldest assigned but unacknowledged batch, if any.
  std::optional<Batch> open_batch() const;
  /// Assigns up to `max_records` unbatched records to a new batch.
  std::optional<Batch> form_batch(std::size_t max_records);
  /// False when the batch is unknown or already acknowledged.
  bool ack(const std::string& batch_id);

  std::vector<std::string> batch_ids() const;  // every id ever formed

 private:
  void write_entry(const Json& entry);
  void apply(const Json& entry);
  Batch materialize(const std::string& batch_id) const;

  std::string edge_id_;
  std::optional<std::filesystem::path> path_;
  std::ofstream out_;
  mutable std::mutex mu_;
  std::map<std::uint64_t, Json> records_;  // unacknowledged
  std::map<std::uint64_t, std::string> assigned_;  // seq → batch_id
  std::map<std::string, std::vector<std::uint64_t>> open_;  // unacknowledged batches
  std::vector<std::string> order_;
  std::uint64_t next_seq_ = 1;
  std::uint64_t next_batch_ = 1;
};

}  // namespace farmlight::edge
