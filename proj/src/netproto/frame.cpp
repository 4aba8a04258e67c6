#include "farmlight/netproto/frame.h"

#include <algorithm>
#include <cstring>

#include "farmlight/digest.h"
#include "farmlight/errors.h"

namespace farmlight::net {

std::string to_string(DecodeError e) {
  switch (e) {
    case DecodeError::bad_magic: return "bad_magic";
    case DecodeError::bad_version: return "bad_version";
    case DecodeError::unknown_type: return "unknown_type";
    case DecodeError::length_overflow: return "length_overflow";
    case DecodeError::crc_mismatch: return "crc_mismatch";
    case DecodeError::truncated: return "truncated";
    case DecodeError::bad_payload_json: return "bad_payload_json";
  }
  return "unknown";
}

namespace {

std::uint32_t frame_crc(std::uint8_t msg_type, std::span<const std::uint8_t> payload) {
  std::uint32_t crc = crc32(std::span<const std::uint8_t>(&msg_type, 1));
  return crc32(payload, crc);
}

bool magic_at(std::span<const std::uint8_t> bytes, std::size_t pos) {
  std::size_t n = std::min<std::size_t>(4, bytes.size() - pos);
  return std::memcmp(bytes.data() + pos, kFrameMagic, n) == 0;
}

}  // namespace

Bytes encode_frame(std::uint8_t msg_type, std::span<const std::uint8_t> payload) {
  if (payload.size() > kMaxPayload)
    throw ContractViolation("frame payload of " + std::to_string(payload.size()) +
                            " bytes exceeds the 1 MiB limit");
  Bytes out;
  out.reserve(kFrameOverhead + payload.size());
  for (std::uint8_t b : kFrameMagic) out.push_back(b);
  out.push_back(kFrameVersion);
  out.push_back(msg_type);
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32_be(out, frame_crc(msg_type, payload));
  return out;
}

FrameResult decode_frame(std::span<const std::uint8_t> bytes) {
  // A prefix of a valid header is reported as truncated, anything else that
  // diverges from the magic as bad_magic.
  if (!magic_at(bytes, 0)) return {DecodeError::bad_magic, 0};
  if (bytes.size() < 5) return {DecodeError::truncated, 0};
  if (bytes[4] != kFrameVersion) return {DecodeError::bad_version, 0};
  if (bytes.size() < kFrameHeaderSize) return {DecodeError::truncated, 0};
  std::uint32_t len = get_u32_be(bytes.data() + 6);
  if (len > kMaxPayload) return {DecodeError::length_overflow, 0};
  std::size_t total = kFrameOverhead + len;
  if (bytes.size() < total) return {DecodeError::truncated, 0};
  std::uint8_t type = bytes[5];
  auto payload = bytes.subspan(kFrameHeaderSize, len);
  if (get_u32_be(bytes.data() + kFrameHeaderSize + len) != frame_crc(type, payload))
    return {DecodeError::crc_mismatch, total};
  return {RawFrame{type, Bytes(payload.begin(), payload.end())}, total};
}

void FrameReader::feed(std::span<const std::uint8_t> bytes) {
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<FrameReader::Item> FrameReader::next() {
  while (!buffer_.empty()) {
    std::span<const std::uint8_t> view(buffer_);
    if (!magic_at(view, 0)) {
      // Drop garbage up to the next position that could start a frame.
      std::size_t skip = 1;
      while (skip < buffer_.size() && !magic_at(view, skip)) ++skip;
      buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(skip));
      bool continuing = in_garbage_;
      // A run that reaches the end of the buffer may go on in the next feed;
      // it is still reported once.
      in_garbage_ = buffer_.empty();
      if (!continuing) return Item{{}, DecodeError::bad_magic};
      continue;
    }
    FrameResult r = decode_frame(view);
    if (r.ok()) {
      in_garbage_ = false;
      Item item{Bytes(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(r.consumed)),
                std::nullopt};
      buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(r.consumed));
      return item;
    }
    DecodeError e = std::get<DecodeError>(r.value);
    if (e == DecodeError::truncated) return std::nullopt;
    in_garbage_ = false;
    // crc_mismatch consumes the whole frame; bad_version and length_overflow
    // discard the magic and resynchronize.
    std::size_t drop = r.consumed > 0 ? r.consumed : 4;
    Item item{Bytes(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(drop)), e};
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(drop));
    return item;
  }
  return std::nullopt;
}

}  // namespace farmlight::net
