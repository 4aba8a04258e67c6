#include "farmlight/netproto/gateway.h"

namespace farmlight::net {

std::string error_code(DecodeError e) {
  return e == DecodeError::length_overflow ? "oversize" : to_string(e);
}

Gateway::Gateway(Connector upstream, const Clock& clock)
    : connector_(std::move(upstream)), clock_(clock) {}

std::size_t Gateway::attach_edge(std::shared_ptr<Transport> edge_link) {
  links_.push_back(Link{std::move(edge_link), nullptr, {}, {}});
  sessions_.emplace_back();
  return links_.size() - 1;
}

const std::vector<GatewaySession>& Gateway::sessions() const { return sessions_; }

void Gateway::poll() {
  for (std::size_t i = 0; i < links_.size(); ++i) {
    Link& l = links_[i];
    if (!l.cloud || !l.cloud->is_open()) l.cloud = connector_();
    pump(i, Direction::up);
    pump(i, Direction::down);
  }
}

void Gateway::pump(std::size_t index, Direction dir) {
  Link& l = links_[index];
  bool up = dir == Direction::up;
  Transport* from = up ? l.edge.get() : l.cloud.get();
  Transport* to = up ? l.cloud.get() : l.edge.get();
  if (!from) return;
  FrameReader& reader = up ? l.from_edge : l.from_cloud;
  reader.feed(from->receive());
  GatewaySession& session = sessions_[index];
  while (auto item = reader.next()) {
    RelayLogEntry entry{clock_.now_ms(), index, dir, 0, 0, {}};
    if (item->raw.size() >= kFrameHeaderSize) {
      entry.msg_type = item->raw[5];
      entry.payload_len = get_u32_be(item->raw.data() + 6);
    }
    std::optional<DecodeError> err = item->error;
    if (!err) {
      // Re-validate the payload too: a frame with a good CRC but an unknown
      // type or broken JSON never reaches the other side.
      DecodeResult d = decode(item->raw);
      if (!d.ok()) {
        err = d.error();
      } else if (up) {
        if (const auto* hello = std::get_if<Hello>(&d.message())) session.node_id = hello->node_id;
      }
    }
    if (err) {
      entry.error = error_code(*err);
      ++session.rejected;
      from->send(encode(ErrorMsg{entry.error, "frame rejected by gateway"}));
    } else {
      if (to) to->send(item->raw);
      ++(up ? session.frames_up : session.frames_down);
    }
    log_.push_back(std::move(entry));
  }
}

}  // namespace farmlight::net
