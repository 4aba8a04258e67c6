#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "farmlight/domain.h"
#include "farmlight/edge/types.h"
#include "farmlight/netproto/frame.h"

namespace farmlight::net {

enum class MsgType : std::uint8_t {
  hello = 0x01,
  hello_ack = 0x02,
  telemetry_batch = 0x03,
  batch_ack = 0x04,
  model_query = 0x05,
  model_manifest = 0x06,
  model_chunk_req = 0x07,
  model_chunk = 0x08,
  alert = 0x09,
  query = 0x0A,
  response = 0x0B,
  error = 0x0C,
};

std::string to_string(MsgType t);

inline constexpr std::uint32_t kChunkSize = 65536;

struct Hello {
  std::string node_id;
  std::string role;
  bool operator==(const Hello&) const = default;
};

struct HelloAck {
  std::string session_id;
  bool operator==(const HelloAck&) const = default;
};

/// `records` is DEFLATE(canonical JSON array of telemetry records).
struct TelemetryBatch {
  std::string batch_id;
  std::string edge_id;
  std::uint32_t count = 0;
  Bytes records;
  bool operator==(const TelemetryBatch&) const = default;

  static TelemetryBatch pack(std::string batch_id, std::string edge_id, const Json& records);
  /// Inflates and parses; throws FormatError when the blob is not a JSON array.
  Json unpack() const;
};

struct BatchAck {
  std::string batch_id;
  bool operator==(const BatchAck&) const = default;
};

struct ModelQuery {
  std::string current_version_id;
  bool operator==(const ModelQuery&) const = default;
};

struct ModelManifest {
  std::string version_id;
  std::uint64_t total_bytes = 0;
  std::uint32_t chunk_size = kChunkSize;
  std::uint32_t chunk_count = 0;
  std::string sha256_hex;
  bool operator==(const ModelManifest&) const = default;
};

struct ModelChunkReq {
  std::string version_id;
  std::uint32_t index = 0;
  bool operator==(const ModelChunkReq&) const = default;
};

struct ModelChunk {
  std::string version_id;
  std::uint32_t index = 0;
  Bytes bytes;
  bool operator==(const ModelChunk&) const = default;
};

struct AlertMsg {
  edge::Alert alert;
  bool operator==(const AlertMsg&) const = default;
};

struct Query {
  std::string text;
  std::optional<std::string> obs_id;
  bool operator==(const Query&) const = default;
};

struct Response {
  Diagnosis diagnosis;
  bool operator==(const Response&) const = default;
};

struct ErrorMsg {
  std::string code;
  std::string detail;
  bool operator==(const ErrorMsg&) const = default;
};

using Message = std::variant<Hello, HelloAck, TelemetryBatch, BatchAck, ModelQuery, ModelManifest,
                             ModelChunkReq, ModelChunk, AlertMsg, Query, Response, ErrorMsg>;

MsgType type_of(const Message& m);

Bytes encode(const Message& m);

struct DecodeResult {
  std::variant<Message, DecodeError> value;
  std::size_t consumed = 0;

  bool ok() const { return std::holds_alternative<Message>(value); }
  const Message& message() const { return std::get<Message>(value); }
  DecodeError error() const { return std::get<DecodeError>(value); }
};

/// Decodes the first frame in `bytes`. Total: every input yields a Message or
/// a DecodeError, never an exception.
DecodeResult decode(std::span<const std::uint8_t> bytes);

}  // namespace farmlight::net
