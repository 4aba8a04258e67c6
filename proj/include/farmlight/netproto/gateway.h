#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "farmlight/clock.h"
#include "farmlight/netproto/messages.h"
#include "farmlight/netproto/transport.h"

namespace farmlight::net {

enum class Direction { up, down };  // up: edge → cloud

struct RelayLogEntry {
  std::int64_t ts_ms = 0;
  std::size_t session = 0;
  Direction direction = Direction::up;
  std::uint8_t msg_type = 0;
  std::uint32_t payload_len = 0;
  std::string error;  // empty when the frame was forwarded
};

struct GatewaySession {
  std::string node_id;  // learned from the edge's HELLO
  std::uint64_t frames_up = 0;
  std::uint64_t frames_down = 0;
  std::uint64_t rejected = 0;
};

/// Relays frames verbatim between each edge and its own upstream connection.
/// No store-and-forward: a frame that cannot be sent is dropped and the
/// endpoints' retry logic recovers.
class Gateway {
 public:
  using Connector = std::function<std::shared_ptr<Transport>()>;

  Gateway(Connector upstream, const Clock& clock);

  std::size_t attach_edge(std::shared_ptr<Transport> edge_link);
  void poll();

  const std::vector<GatewaySession>& sessions() const;
  const std::vector<RelayLogEntry>& log() const { return log_; }
  void clear_log() { log_.clear(); }

 private:
  struct Link {
    std::shared_ptr<Transport> edge;
    std::shared_ptr<Transport> cloud;
    FrameReader from_edge;
    FrameReader from_cloud;
  };

  void pump(std::size_t index, Direction dir);

  Connector connector_;
  const Clock& clock_;
  std::vector<Link> links_;
  std::vector<GatewaySession> sessions_;
  std::vector<RelayLogEntry> log_;
};

/// Error code sent back for a rejected frame.
std::string error_code(DecodeError e);

}  // namespace farmlight::net
