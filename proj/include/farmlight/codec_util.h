#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace farmlight {

using Json = nlohmann::json;
using Bytes = std::vector<std::uint8_t>;

/// Canonical encoding: sorted keys, no whitespace, shortest round-trip numbers.
std::string canonical(const Json& value);

/// Parses JSON text; throws FormatError on malformed input.
Json parse_json(std::string_view text);

/// Raw DEFLATE (RFC 1951), no zlib/gzip wrapper.
Bytes deflate_raw(std::span<const std::uint8_t> data);
/// Throws FormatError on corrupt streams or output beyond `max_out`.
Bytes inflate_raw(std::span<const std::uint8_t> data, std::size_t max_out = 1ULL << 31);

Bytes to_bytes(std::string_view text);
std::string_view as_text(std::span<const std::uint8_t> bytes);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);
void write_file(const std::filesystem::path& path, std::string_view text);

void put_u32_be(Bytes& out, std::uint32_t v);
std::uint32_t get_u32_be(const std::uint8_t* p);
void put_u32_le(Bytes& out, std::uint32_t v);
std::uint32_t get_u32_le(const std::uint8_t* p);

}  // namespace farmlight
