#include "farmlight/netproto/messages.h"

#include <limits>

#include "farmlight/errors.h"

namespace farmlight::net {

std::string to_string(MsgType t) {
  switch (t) {
    case MsgType::hello: return "HELLO";
    case MsgType::hello_ack: return "HELLO_ACK";
    case MsgType::telemetry_batch: return "TELEMETRY_BATCH";
    case MsgType::batch_ack: return "BATCH_ACK";
    case MsgType::model_query: return "MODEL_QUERY";
    case MsgType::model_manifest: return "MODEL_MANIFEST";
    case MsgType::model_chunk_req: return "MODEL_CHUNK_REQ";
    case MsgType::model_chunk: return "MODEL_CHUNK";
    case MsgType::alert: return "ALERT";
    case MsgType::query: return "QUERY";
    case MsgType::response: return "RESPONSE";
    case MsgType::error: return "ERROR";
  }
  return "UNKNOWN";
}

TelemetryBatch TelemetryBatch::pack(std::string batch_id, std::string edge_id, const Json& records) {
  if (!records.is_array()) throw ContractViolation("telemetry records must be a JSON array");
  TelemetryBatch b;
  b.batch_id = std::move(batch_id);
  b.edge_id = std::move(edge_id);
  b.count = static_cast<std::uint32_t>(records.size());
  b.records = deflate_raw(to_bytes(canonical(records)));
  return b;
}

Json TelemetryBatch::unpack() const {
  Bytes text = inflate_raw(records, kMaxPayload * 64ULL);
  Json j = parse_json(as_text(text));
  if (!j.is_array()) throw FormatError("telemetry records are not a JSON array");
  return j;
}

namespace {

// Index in the variant equals msg_type - 1.
static_assert(std::variant_size_v<Message> == 12);

std::uint64_t get_uint(const Json& j, const char* key, std::uint64_t max) {
  const Json& v = j.at(key);
  if (!v.is_number_unsigned() || v.get<std::uint64_t>() > max)
    throw FormatError(std::string("field '") + key + "' is not an unsigned integer in range");
  return v.get<std::uint64_t>();
}

std::uint32_t get_u32(const Json& j, const char* key) {
  return static_cast<std::uint32_t>(get_uint(j, key, std::numeric_limits<std::uint32_t>::max()));
}

std::string get_str(const Json& j, const char* key) { return j.at(key).get<std::string>(); }

// Hybrid payload: u32 BE header length | canonical JSON header | raw blob.
Bytes hybrid(const Json& header, std::span<const std::uint8_t> blob) {
  std::string h = canonical(header);
  Bytes out;
  out.reserve(4 + h.size() + blob.size());
  put_u32_be(out, static_cast<std::uint32_t>(h.size()));
  out.insert(out.end(), h.begin(), h.end());
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

std::pair<Json, Bytes> split_hybrid(std::span<const std::uint8_t> payload) {
  if (payload.size() < 4) throw FormatError("hybrid payload shorter than its header length");
  std::uint32_t hlen = get_u32_be(payload.data());
  if (hlen > payload.size() - 4) throw FormatError("hybrid header length exceeds payload");
  Json header = parse_json(as_text(payload.subspan(4, hlen)));
  if (!header.is_object()) throw FormatError("hybrid header is not an object");
  auto blob = payload.subspan(4 + hlen);
  return {std::move(header), Bytes(blob.begin(), blob.end())};
}

Bytes json_payload(const Json& j) { return to_bytes(canonical(j)); }

struct PayloadEncoder {
  Bytes operator()(const Hello& m) const {
    return json_payload({{"node_id", m.node_id}, {"role", m.role}});
  }
  Bytes operator()(const HelloAck& m) const { return json_payload({{"session_id", m.session_id}}); }
  Bytes operator()(const TelemetryBatch& m) const {
    return hybrid({{"batch_id", m.batch_id}, {"edge_id", m.edge_id}, {"count", m.count}}, m.records);
  }
  Bytes operator()(const BatchAck& m) const { return json_payload({{"batch_id", m.batch_id}}); }
  Bytes operator()(const ModelQuery& m) const {
    return json_payload({{"current_version_id", m.current_version_id}});
  }
  Bytes operator()(const ModelManifest& m) const {
    return json_payload({{"version_id", m.version_id},
                         {"total_bytes", m.total_bytes},
                         {"chunk_size", m.chunk_size},
                         {"chunk_count", m.chunk_count},
                         {"sha256_hex", m.sha256_hex}});
  }
  Bytes operator()(const ModelChunkReq& m) const {
    return json_payload({{"version_id", m.version_id}, {"index", m.index}});
  }
  Bytes operator()(const ModelChunk& m) const {
    return hybrid({{"version_id", m.version_id}, {"index", m.index}}, m.bytes);
  }
  Bytes operator()(const AlertMsg& m) const { return json_payload(Json(m.alert)); }
  Bytes operator()(const Query& m) const {
    Json j{{"text", m.text}};
    if (m.obs_id) j["obs_id"] = *m.obs_id;
    return json_payload(j);
  }
  Bytes operator()(const Response& m) const { return json_payload(Json(m.diagnosis)); }
  Bytes operator()(const ErrorMsg& m) const {
    return json_payload({{"code", m.code}, {"detail", m.detail}});
  }
};

Json object_payload(std::span<const std::uint8_t> payload) {
  Json j = parse_json(as_text(payload));
  if (!j.is_object()) throw FormatError("payload is not a JSON object");
  return j;
}

Message parse_payload(MsgType type, std::span<const std::uint8_t> payload) {
  switch (type) {
    case MsgType::hello: {
      Json j = object_payload(payload);
      return Hello{get_str(j, "node_id"), get_str(j, "role")};
    }
    case MsgType::hello_ack:
      return HelloAck{get_str(object_payload(payload), "session_id")};
    case MsgType::telemetry_batch: {
      auto [h, blob] = split_hybrid(payload);
      return TelemetryBatch{get_str(h, "batch_id"), get_str(h, "edge_id"), get_u32(h, "count"),
                            std::move(blob)};
    }
    case MsgType::batch_ack:
      return BatchAck{get_str(object_payload(payload), "batch_id")};
    case MsgType::model_query:
      return ModelQuery{get_str(object_payload(payload), "current_version_id")};
    case MsgType::model_manifest: {
      Json j = object_payload(payload);
      return ModelManifest{get_str(j, "version_id"),
                           get_uint(j, "total_bytes", std::numeric_limits<std::uint64_t>::max()),
                           get_u32(j, "chunk_size"), get_u32(j, "chunk_count"),
                           get_str(j, "sha256_hex")};
    }
    case MsgType::model_chunk_req: {
      Json j = object_payload(payload);
      return ModelChunkReq{get_str(j, "version_id"), get_u32(j, "index")};
    }
    case MsgType::model_chunk: {
      auto [h, blob] = split_hybrid(payload);
      return ModelChunk{get_str(h, "version_id"), get_u32(h, "index"), std::move(blob)};
    }
    case MsgType::alert:
      return AlertMsg{object_payload(payload).get<edge::Alert>()};
    case MsgType::query: {
      Json j = object_payload(payload);
      Query q{get_str(j, "text"), std::nullopt};
      if (j.contains("obs_id")) q.obs_id = get_str(j, "obs_id");
      return q;
    }
    case MsgType::response:
      return Response{object_payload(payload).get<Diagnosis>()};
    case MsgType::error: {
      Json j = object_payload(payload);
      return ErrorMsg{get_str(j, "code"), get_str(j, "detail")};
    }
  }
  throw FormatError("unreachable message type");
}

}  // namespace

MsgType type_of(const Message& m) { return static_cast<MsgType>(m.index() + 1); }

Bytes encode(const Message& m) {
  Bytes payload = std::visit(PayloadEncoder{}, m);
  return encode_frame(static_cast<std::uint8_t>(type_of(m)), payload);
}

DecodeResult decode(std::span<const std::uint8_t> bytes) {
  FrameResult f = decode_frame(bytes);
  if (!f.ok()) return {std::get<DecodeError>(f.value), f.consumed};
  const RawFrame& raw = std::get<RawFrame>(f.value);
  if (raw.msg_type < 0x01 || raw.msg_type > 0x0C) return {DecodeError::unknown_type, f.consumed};
  try {
    return {parse_payload(static_cast<MsgType>(raw.msg_type), raw.payload), f.consumed};
  } catch (const std::exception&) {
    // nlohmann type/range errors, FormatError and ContractViolation alike
    return {DecodeError::bad_payload_json, f.consumed};
  }
}

}  // namespace farmlight::net
