#include <doctest.h>

#include <chrono>
#include <thread>

#include "farmlight/digest.h"
#include "farmlight/netproto/frame.h"
#include "farmlight/netproto/messages.h"
#include "farmlight/netproto/transport.h"
#include "support.h"

using namespace farmlight;
using namespace farmlight::net;
using farmlight::testing::random_message;

namespace {

DecodeError error_of(std::span<const std::uint8_t> bytes) {
  auto r = decode(bytes);
  REQUIRE_FALSE(r.ok());
  return r.error();
}

Bytes frame_with(std::uint8_t type, std::string_view payload) {
  return encode_frame(type, to_bytes(payload));
}

}  // namespace

TEST_CASE("hello ack header bytes") {
  Bytes b = encode(HelloAck{"s1"});
  REQUIRE(b.size() == 14 + 19);
  Bytes head(b.begin(), b.begin() + 10);
  CHECK(head == Bytes{0x46, 0x4C, 0x53, 0x4B, 0x01, 0x02, 0x00, 0x00, 0x00, 0x13});
  CHECK(as_text(std::span(b).subspan(10, 19)) == R"({"session_id":"s1"})");
  std::uint32_t crc = get_u32_be(b.data() + 29);
  Bytes covered(b.begin() + 5, b.begin() + 6);
  covered.insert(covered.end(), b.begin() + 10, b.begin() + 29);
  CHECK(crc == crc32(covered));
}

TEST_CASE("every message type round trips") {
  Rng rng(0xC0DEC);
  for (std::size_t type = 0; type < 12; ++type) {
    for (int i = 0; i < 200; ++i) {
      Message m = random_message(rng, type);
      Bytes wire = encode(m);
      auto r = decode(wire);
      REQUIRE(r.ok());
      CHECK(r.consumed == wire.size());
      CHECK(r.message() == m);
      CHECK(static_cast<std::size_t>(type_of(r.message())) == type + 1);
    }
  }
}

TEST_CASE("decode reports each error class") {
  Bytes good = encode(BatchAck{"b1"});
  CHECK(error_of(Bytes{}) == DecodeError::truncated);
  CHECK(error_of(Bytes{0x46, 0x4C}) == DecodeError::truncated);
  CHECK(error_of(Bytes{0x00, 0x4C, 0x53, 0x4B, 0x01}) == DecodeError::bad_magic);

  Bytes version = good;
  version[4] = 0x02;
  CHECK(error_of(version) == DecodeError::bad_version);

  CHECK(error_of(frame_with(0x0D, "{}")) == DecodeError::unknown_type);
  CHECK(error_of(frame_with(0x00, "{}")) == DecodeError::unknown_type);

  Bytes big = good;
  big[6] = 0x00;
  big[7] = 0x10;
  big[8] = 0x00;
  big[9] = 0x01;  // 1 MiB + 1
  CHECK(error_of(big) == DecodeError::length_overflow);

  Bytes crc = good;
  crc.back() ^= 0x01;
  CHECK(error_of(crc) == DecodeError::crc_mismatch);

  Bytes cut(good.begin(), good.end() - 1);
  CHECK(error_of(cut) == DecodeError::truncated);

  CHECK(error_of(frame_with(0x04, "not json")) == DecodeError::bad_payload_json);
  CHECK(error_of(frame_with(0x04, R"({"batch_id":7})")) == DecodeError::bad_payload_json);
  CHECK(error_of(frame_with(0x04, "[]")) == DecodeError::bad_payload_json);
  CHECK(error_of(frame_with(0x07, R"({"version_id":"v","index":-1})")) == DecodeError::bad_payload_json);
  CHECK(error_of(frame_with(0x07, R"({"version_id":"v","index":4294967296})")) ==
        DecodeError::bad_payload_json);
  CHECK(error_of(frame_with(0x08, "ab")) == DecodeError::bad_payload_json);
}

TEST_CASE("payload size limit") {
  Bytes max(kMaxPayload, 0x20);
  CHECK(encode_frame(0x0C, max).size() == kMaxPayload + kFrameOverhead);
  Bytes over(kMaxPayload + 1, 0x20);
  CHECK_THROWS_AS(encode_frame(0x0C, over), ContractViolation);
}

TEST_CASE("seeded fuzz never crashes decode") {
  Rng rng(0xF022);
  std::vector<Bytes> seeds;
  for (std::size_t t = 0; t < 12; ++t) seeds.push_back(encode(random_message(rng, t)));
  std::size_t messages = 0, errors = 0;
  for (int i = 0; i < 10000; ++i) {
    Bytes input;
    switch (i % 3) {
      case 0: {
        input.resize(rng.below(256));
        rng.fill(input);
        break;
      }
      case 1: {
        input = seeds[rng.below(seeds.size())];
        int edits = 1 + static_cast<int>(rng.below(8));
        for (int e = 0; e < edits && !input.empty(); ++e)
          input[rng.below(input.size())] = static_cast<std::uint8_t>(rng.next());
        if (rng.below(2)) input.resize(rng.below(input.size() + 1));
        break;
      }
      default: {
        // Valid framing around a random payload exercises the JSON layer.
        Bytes payload(rng.below(128));
        rng.fill(payload);
        if (!payload.empty() && rng.below(2)) payload[0] = '{';
        input = encode_frame(static_cast<std::uint8_t>(1 + rng.below(12)), payload);
        break;
      }
    }
    DecodeResult r;
    CHECK_NOTHROW(r = decode(input));
    if (r.ok()) {
      ++messages;
      CHECK(r.consumed <= input.size());
    } else {
      ++errors;
    }
  }
  CHECK(messages + errors == 10000);
}

TEST_CASE("single bit flips are caught by the checksum") {
  Rng rng(0xB17);
  for (int i = 0; i < 1000; ++i) {
    Bytes wire = encode(random_message(rng, rng.below(12)));
    // Any bit of the type byte, the payload or the checksum.
    std::size_t covered = wire.size() - 9;
    std::size_t bit = rng.below(covered * 8);
    std::size_t pos = bit / 8;
    std::size_t byte = pos == 0 ? 5 : 9 + pos;
    wire[byte] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    auto r = decode(wire);
    REQUIRE_FALSE(r.ok());
    CHECK(r.error() == DecodeError::crc_mismatch);
  }
}

TEST_CASE("frame reader splits streams and resynchronizes") {
  Bytes a = encode(Hello{"edge-1", "edge"});
  Bytes b = encode(ModelQuery{"v"});
  Bytes stream = a;
  stream.insert(stream.end(), {0x00, 0x01, 0x02});
  Bytes bad = b;
  bad[bad.size() - 2] ^= 0xFF;
  stream.insert(stream.end(), bad.begin(), bad.end());
  stream.insert(stream.end(), b.begin(), b.end());

  FrameReader reader;
  // Byte-at-a-time delivery yields the same items.
  std::vector<FrameReader::Item> items;
  for (std::uint8_t byte : stream) {
    reader.feed(std::span(&byte, 1));
    while (auto it = reader.next()) items.push_back(*it);
  }
  REQUIRE(items.size() == 4);
  CHECK(!items[0].error);
  CHECK(items[0].raw == a);
  CHECK(items[1].error == DecodeError::bad_magic);
  CHECK(items[2].error == DecodeError::crc_mismatch);
  CHECK(!items[3].error);
  CHECK(items[3].raw == b);
  CHECK(reader.buffered() == 0);
}

TEST_CASE("frame reader drops an oversize header and finds the next frame") {
  Bytes over = {0x46, 0x4C, 0x53, 0x4B, 0x01, 0x03, 0x7F, 0xFF, 0xFF, 0xFF};
  Bytes good = encode(BatchAck{"x"});
  over.insert(over.end(), good.begin(), good.end());
  FrameReader r;
  r.feed(over);
  auto first = r.next();
  REQUIRE(first);
  CHECK(first->error == DecodeError::length_overflow);
  std::optional<FrameReader::Item> ok;
  while (auto it = r.next()) {
    if (!it->error) ok = it;
  }
  REQUIRE(ok);
  CHECK(ok->raw == good);
}

TEST_CASE("telemetry batch packing") {
  Json records = Json::array({{{"seq", 1}}, {{"seq", 2}}});
  auto b = TelemetryBatch::pack("e-b1", "e", records);
  CHECK(b.count == 2);
  CHECK(b.unpack() == records);
  TelemetryBatch junk{"x", "e", 1, {1, 2, 3}};
  CHECK_THROWS_AS(junk.unpack(), FormatError);
}

TEST_CASE("simulated network delivers, delays and drops deterministically") {
  SimNetwork net(5, 0.0, 50);
  auto [a, b] = net.connect();
  Bytes msg{1, 2, 3};
  CHECK(a->send(msg));
  CHECK(b->receive().empty());
  net.set_now(49);
  CHECK(b->receive().empty());
  net.set_now(50);
  CHECK(b->receive() == msg);

  net.set_down(true);
  CHECK_FALSE(a->send(msg));
  net.set_down(false);

  auto run = [](std::uint64_t seed) {
    SimNetwork lossy(seed, 0.5, 0);
    auto [x, y] = lossy.connect();
    std::vector<std::uint8_t> got;
    for (std::uint8_t i = 0; i < 100; ++i) {
      CHECK(x->send(std::span(&i, 1)));
      for (auto v : y->receive()) got.push_back(v);
    }
    return std::make_pair(got, lossy.segments_dropped());
  };
  auto r1 = run(9), r2 = run(9);
  CHECK(r1 == r2);
  CHECK(r1.second > 20);
  CHECK(r1.second < 80);

  a->close();
  CHECK_FALSE(a->is_open());
  CHECK_FALSE(b->is_open());
}

TEST_CASE("tcp transport carries frames") {
  TcpListener listener("127.0.0.1", 0);
  REQUIRE(listener.port() != 0);
  auto client = TcpTransport::connect("127.0.0.1", listener.port());
  std::shared_ptr<TcpTransport> server;
  for (int i = 0; i < 200 && !server; ++i) {
    server = listener.accept();
    if (!server) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  REQUIRE(server);
  Bytes frame = encode(Hello{"edge-9", "edge"});
  CHECK(client->send(frame));
  Bytes got;
  for (int i = 0; i < 200 && got.size() < frame.size(); ++i) {
    auto part = server->receive();
    got.insert(got.end(), part.begin(), part.end());
    if (got.size() < frame.size()) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  CHECK(got == frame);
  client->close();
  for (int i = 0; i < 200 && server->is_open(); ++i) {
    server->receive();
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  CHECK_FALSE(server->is_open());
  CHECK_THROWS_AS(TcpTransport::connect("127.0.0.1", 1), IoError);
}

TEST_CASE("address parsing") {
  CHECK(parse_address("127.0.0.1:8080") == std::make_pair(std::string("127.0.0.1"), std::uint16_t{8080}));
  CHECK_THROWS_AS(parse_address("nohost"), ContractViolation);
  CHECK_THROWS_AS(parse_address("h:99999"), ContractViolation);
  CHECK_THROWS_AS(parse_address(":80"), ContractViolation);
}
