#include "farmlight/netproto/transport.h"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "farmlight/errors.h"

namespace farmlight::net {

struct Segment {
  std::int64_t deliver_at;
  Bytes bytes;
};

struct SimNetwork::State {
  std::mutex mu;
  Rng rng;
  double loss;
  std::int64_t latency_ms;
  std::int64_t now = 0;
  bool down = false;
  std::uint64_t sent = 0;
  std::uint64_t dropped = 0;

  State(std::uint64_t seed, double l, std::int64_t lat) : rng(seed), loss(l), latency_ms(lat) {}
};

namespace {

struct Pipe {
  std::deque<Segment> queue;
  bool closed = false;
};

class SimEndpoint : public Transport {
 public:
  SimEndpoint(std::shared_ptr<SimNetwork::State> net, std::shared_ptr<Pipe> out,
              std::shared_ptr<Pipe> in)
      : net_(std::move(net)), out_(std::move(out)), in_(std::move(in)) {}

  bool send(std::span<const std::uint8_t> bytes) override {
    std::lock_guard lock(net_->mu);
    if (net_->down || out_->closed) return false;
    ++net_->sent;
    if (net_->rng.uniform() < net_->loss) {
      ++net_->dropped;
      return true;  // lost in flight; the sender cannot tell
    }
    out_->queue.push_back({net_->now + net_->latency_ms, Bytes(bytes.begin(), bytes.end())});
    return true;
  }

  Bytes receive() override {
    std::lock_guard lock(net_->mu);
    Bytes out;
    while (!in_->queue.empty() && in_->queue.front().deliver_at <= net_->now) {
      auto& seg = in_->queue.front().bytes;
      out.insert(out.end(), seg.begin(), seg.end());
      in_->queue.pop_front();
    }
    return out;
  }

  bool is_open() const override {
    std::lock_guard lock(net_->mu);
    return !out_->closed;
  }

  void close() override {
    std::lock_guard lock(net_->mu);
    out_->closed = true;
    in_->closed = true;
  }

 private:
  std::shared_ptr<SimNetwork::State> net_;
  std::shared_ptr<Pipe> out_;
  std::shared_ptr<Pipe> in_;
};

}  // namespace

SimNetwork::SimNetwork(std::uint64_t seed, double loss, std::int64_t latency_ms)
    : state_(std::make_shared<State>(seed, loss, latency_ms)) {
  if (!(loss >= 0.0 && loss < 1.0)) throw ContractViolation("simulated loss must be in [0, 1)");
  if (latency_ms < 0) throw ContractViolation("simulated latency must be non-negative");
}

std::pair<std::shared_ptr<Transport>, std::shared_ptr<Transport>> SimNetwork::connect() {
  auto a_to_b = std::make_shared<Pipe>();
  auto b_to_a = std::make_shared<Pipe>();
  return {std::make_shared<SimEndpoint>(state_, a_to_b, b_to_a),
          std::make_shared<SimEndpoint>(state_, b_to_a, a_to_b)};
}

void SimNetwork::set_now(std::int64_t now_ms) {
  std::lock_guard lock(state_->mu);
  state_->now = now_ms;
}

std::int64_t SimNetwork::now() const {
  std::lock_guard lock(state_->mu);
  return state_->now;
}

void SimNetwork::set_loss(double loss) {
  if (!(loss >= 0.0 && loss < 1.0)) throw ContractViolation("simulated loss must be in [0, 1)");
  std::lock_guard lock(state_->mu);
  state_->loss = loss;
}

void SimNetwork::set_down(bool down) {
  std::lock_guard lock(state_->mu);
  state_->down = down;
}

std::uint64_t SimNetwork::segments_sent() const {
  std::lock_guard lock(state_->mu);
  return state_->sent;
}

std::uint64_t SimNetwork::segments_dropped() const {
  std::lock_guard lock(state_->mu);
  return state_->dropped;
}

// ---- TCP ----

TcpTransport::TcpTransport(int fd) : fd_(fd) {
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  int flags = ::fcntl(fd_, F_GETFL, 0);
  ::fcntl(fd_, F_SETFL, flags | O_NONBLOCK);
}

TcpTransport::~TcpTransport() { close(); }

std::shared_ptr<TcpTransport> TcpTransport::connect(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  std::string where = host + ":" + std::to_string(port);
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
    throw IoError(where, "cannot resolve");
  int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    throw IoError(where, "cannot create socket");
  }
  int rc = ::connect(fd, res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0) {
    ::close(fd);
    throw IoError(where, std::string("cannot connect (") + std::strerror(errno) + ")");
  }
  return std::make_shared<TcpTransport>(fd);
}

bool TcpTransport::send(std::span<const std::uint8_t> bytes) {
  std::lock_guard lock(mu_);
  std::size_t off = 0;
  while (fd_ >= 0 && off < bytes.size()) {
    ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n > 0) {
      off += static_cast<std::size_t>(n);
    } else if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) {
      ::usleep(1000);
    } else {
      ::close(fd_);
      fd_ = -1;
    }
  }
  return fd_ >= 0;
}

Bytes TcpTransport::receive() {
  std::lock_guard lock(mu_);
  Bytes out;
  std::uint8_t buf[16384];
  while (fd_ >= 0) {
    ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n > 0) {
      out.insert(out.end(), buf, buf + n);
    } else if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) {
      break;
    } else {
      ::close(fd_);
      fd_ = -1;
    }
  }
  return out;
}

bool TcpTransport::is_open() const {
  std::lock_guard lock(mu_);
  return fd_ >= 0;
}

void TcpTransport::close() {
  std::lock_guard lock(mu_);
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  std::string where = host + ":" + std::to_string(port);
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw IoError(where, "cannot create socket");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host == "localhost" ? "127.0.0.1" : host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw IoError(where, "bad listen address");
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 16) != 0) {
    ::close(fd_);
    throw IoError(where, std::string("cannot listen (") + std::strerror(errno) + ")");
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  int flags = ::fcntl(fd_, F_GETFL, 0);
  ::fcntl(fd_, F_SETFL, flags | O_NONBLOCK);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::shared_ptr<TcpTransport> TcpListener::accept() {
  int fd = ::accept(fd_, nullptr, nullptr);
  if (fd < 0) return nullptr;
  return std::make_shared<TcpTransport>(fd);
}

std::pair<std::string, std::uint16_t> parse_address(const std::string& address) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size())
    throw ContractViolation("address '" + address + "' is not host:port");
  std::string port_text = address.substr(colon + 1);
  unsigned long port = 0;
  for (char c : port_text) {
    if (c < '0' || c > '9') throw ContractViolation("address '" + address + "' has a bad port");
    port = port * 10 + static_cast<unsigned long>(c - '0');
    if (port > 65535) throw ContractViolation("address '" + address + "' has a bad port");
  }
  return {address.substr(0, colon), static_cast<std::uint16_t>(port)};
}

}  // namespace farmlight::net
