#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace farmlight {

using Sha256Digest = std::array<std::uint8_t, 32>;

Sha256Digest sha256(std::span<const std::uint8_t> bytes);
Sha256Digest sha256(std::string_view text);

/// CRC-32, IEEE 802.3 polynomial (reflected 0xEDB88320).
std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t seed = 0);

std::string to_hex(std::span<const std::uint8_t> bytes);

}  // namespace farmlight
