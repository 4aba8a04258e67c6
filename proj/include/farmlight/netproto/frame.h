#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>

#include "farmlight/codec_util.h"

namespace farmlight::net {

// Frame layout (all integers big-endian):
//   "FLSK" | version u8 | msg_type u8 | payload_len u32 | payload | crc u32
// crc = CRC-32 over msg_type ++ payload.
inline constexpr std::uint8_t kFrameMagic[4] = {0x46, 0x4C, 0x53, 0x4B};
inline constexpr std::uint8_t kFrameVersion = 0x01;
inline constexpr std::uint32_t kMaxPayload = 1'048'576;
inline constexpr std::size_t kFrameHeaderSize = 10;
inline constexpr std::size_t kFrameOverhead = kFrameHeaderSize + 4;

enum class DecodeError {
  bad_magic,
  bad_version,
  unknown_type,
  length_overflow,
  crc_mismatch,
  truncated,
  bad_payload_json,
};

std::string to_string(DecodeError e);

struct RawFrame {
  std::uint8_t msg_type = 0;
  Bytes payload;
  bool operator==(const RawFrame&) const = default;
};

/// Throws ContractViolation when the payload exceeds kMaxPayload.
Bytes encode_frame(std::uint8_t msg_type, std::span<const std::uint8_t> payload);

struct FrameResult {
  std::variant<RawFrame, DecodeError> value;
  std::size_t consumed = 0;  // bytes of the frame when decoded

  bool ok() const { return std::holds_alternative<RawFrame>(value); }
};

/// Framing-level checks only (magic, version, length, truncation, CRC).
/// Total: never throws on any input.
FrameResult decode_frame(std::span<const std::uint8_t> bytes);

/// Splits a byte stream into frames, resynchronizing on the magic after
/// garbage or an oversize header. A garbage run yields one bad_magic item
/// however it is split across feeds.
class FrameReader {
 public:
  struct Item {
    Bytes raw;                          // the complete frame bytes, when framing succeeded
    std::optional<DecodeError> error;   // set when this item is a framing failure
  };

  void feed(std::span<const std::uint8_t> bytes);
  std::optional<Item> next();
  std::size_t buffered() const { return buffer_.size(); }

 private:
  Bytes buffer_;
  bool in_garbage_ = false;  // the last item was a garbage run that hit the buffer end
};

}  // namespace farmlight::net
