#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>

#include "farmlight/codec_util.h"
#include "farmlight/rng.h"

namespace farmlight::net {

/// One end of a duplex byte stream. Writes are whole segments (one frame per
/// call in practice); reads drain whatever has arrived and never block.
class Transport {
 public:
  virtual ~Transport() = default;
  /// False when the link is down; the caller keeps the data and retries.
  virtual bool send(std::span<const std::uint8_t> bytes) = 0;
  virtual Bytes receive() = 0;
  virtual bool is_open() const = 0;
  virtual void close() = 0;
};

/// In-process links driven by an explicit simulated clock. Each segment is
/// dropped independently with probability `loss` and otherwise delivered
/// `latency_ms` after it was sent. All randomness comes from one seeded Rng,
/// so a run with the same call sequence is reproducible.
class SimNetwork {
 public:
  SimNetwork(std::uint64_t seed, double loss, std::int64_t latency_ms);

  std::pair<std::shared_ptr<Transport>, std::shared_ptr<Transport>> connect();

  void set_now(std::int64_t now_ms);
  std::int64_t now() const;
  void set_loss(double loss);
  /// A down network refuses every send on every link.
  void set_down(bool down);

  std::uint64_t segments_sent() const;
  std::uint64_t segments_dropped() const;

  struct State;

 private:
  std::shared_ptr<State> state_;
};

/// Blocking-connect, non-blocking-read TCP stream.
class TcpTransport : public Transport {
 public:
  explicit TcpTransport(int fd);
  ~TcpTransport() override;
  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

  /// Throws IoError when the connection cannot be established.
  static std::shared_ptr<TcpTransport> connect(const std::string& host, std::uint16_t port);

  bool send(std::span<const std::uint8_t> bytes) override;
  Bytes receive() override;
  bool is_open() const override;
  void close() override;

 private:
  mutable std::mutex mu_;
  int fd_;
};

class TcpListener {
 public:
  /// Port 0 picks an ephemeral port; see port().
  TcpListener(const std::string& host, std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  /// Non-blocking; null when no connection is pending.
  std::shared_ptr<TcpTransport> accept();

 private:
  int fd_;
  std::uint16_t port_;
};

/// Splits "host:port"; throws ContractViolation when malformed.
std::pair<std::string, std::uint16_t> parse_address(const std::string& address);

}  // namespace farmlight::net
