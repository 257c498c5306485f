// SPDX-License-Identifier: Apache-2.0
#include "spirl/env/external.hpp"

#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "spirl/common/binary_io.hpp"
#include "spirl/common/error.hpp"

namespace spirl::env {
namespace {

constexpr std::size_t kHandshakeBytes = 14;

int remaining_ms(std::chrono::steady_clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
  return static_cast<int>(std::max<std::int64_t>(0, left.count()));
}

}  // namespace

Transport::Transport(int fd, std::chrono::milliseconds timeout) : fd_(fd), timeout_(timeout) {}

Transport::~Transport() { close(); }

Transport::Transport(Transport&& other) noexcept : fd_(other.fd_), timeout_(other.timeout_) { other.fd_ = -1; }

Transport& Transport::operator=(Transport&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    timeout_ = other.timeout_;
    other.fd_ = -1;
  }
  return *this;
}

void Transport::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void Transport::send_raw(std::span<const unsigned char> bytes) {
  if (fd_ < 0) throw ProtocolError("transport closed");
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    pollfd p{fd_, POLLOUT, 0};
    const int ready = ::poll(&p, 1, remaining_ms(deadline));
    if (ready == 0) throw ProtocolError("send timed out");
    if (ready < 0 && errno != EINTR) throw ProtocolError(std::string("poll: ") + std::strerror(errno));
    if (ready < 0) continue;
    const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw ProtocolError(std::string("send: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

void Transport::send_message(std::span<const unsigned char> payload) {
  std::vector<unsigned char> buf(4 + payload.size());
  io::put_le<std::uint32_t>(buf.data(), static_cast<std::uint32_t>(payload.size()));
  std::copy(payload.begin(), payload.end(), buf.begin() + 4);
  send_raw(buf);
}

void Transport::read_exact(unsigned char* dst, std::size_t n) {
  if (fd_ < 0) throw ProtocolError("transport closed");
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  std::size_t got = 0;
  while (got < n) {
    pollfd p{fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, remaining_ms(deadline));
    if (ready == 0) throw ProtocolError("receive timed out");
    if (ready < 0 && errno != EINTR) throw ProtocolError(std::string("poll: ") + std::strerror(errno));
    if (ready < 0) continue;
    const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
    if (r == 0) throw ProtocolError("peer closed the connection");
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw ProtocolError(std::string("recv: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
}

std::vector<unsigned char> Transport::recv_message(std::size_t max_len) {
  unsigned char head[4];
  read_exact(head, 4);
  const std::uint32_t len = io::get_le<std::uint32_t>(head);
  if (len > max_len) throw ProtocolError("message of " + std::to_string(len) + " bytes exceeds the limit");
  std::vector<unsigned char> payload(len);
  if (len) read_exact(payload.data(), len);
  return payload;
}

std::pair<Transport, Transport> loopback_pair(std::chrono::milliseconds timeout) {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
    throw IoError(std::string("socketpair: ") + std::strerror(errno));
  }
  return {Transport(fds[0], timeout), Transport(fds[1], timeout)};
}

Transport connect_endpoint(const std::string& endpoint, std::chrono::milliseconds timeout) {
  if (endpoint.rfind("unix:", 0) == 0) {
    const std::string path = endpoint.substr(5);
    sockaddr_un addr{};
    if (path.empty() || path.size() >= sizeof(addr.sun_path)) throw InvalidArgument("bad unix socket path: " + path);
    addr.sun_family = AF_UNIX;
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0) throw IoError(std::string("socket: ") + std::strerror(errno));
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      const std::string err = std::strerror(errno);
      ::close(fd);
      throw IoError("connect " + endpoint + ": " + err);
    }
    return Transport(fd, timeout);
  }
  if (endpoint.rfind("tcp:", 0) == 0) {
    const std::string rest = endpoint.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw InvalidArgument("tcp endpoint needs host:port");
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(rest.substr(0, colon).c_str(), rest.substr(colon + 1).c_str(), &hints, &res) != 0) {
      throw IoError("cannot resolve " + endpoint);
    }
    int fd = -1;
    for (addrinfo* a = res; a; a = a->ai_next) {
      fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw IoError("connect " + endpoint + " failed");
    return Transport(fd, timeout);
  }
  throw InvalidArgument("unknown endpoint scheme: " + endpoint);
}

Listener::Listener(const std::string& endpoint) {
  if (endpoint.rfind("unix:", 0) == 0) {
    const std::string path = endpoint.substr(5);
    sockaddr_un addr{};
    if (path.empty() || path.size() >= sizeof(addr.sun_path)) throw InvalidArgument("bad unix socket path: " + path);
    addr.sun_family = AF_UNIX;
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd_ < 0) throw IoError(std::string("socket: ") + std::strerror(errno));
    ::unlink(path.c_str());
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd_, 1) != 0) {
      const std::string err = std::strerror(errno);
      ::close(fd_);
      throw IoError("listen " + endpoint + ": " + err);
    }
    unix_path_ = path;
    return;
  }
  if (endpoint.rfind("tcp:", 0) == 0) {
    const std::string rest = endpoint.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw InvalidArgument("tcp endpoint needs host:port");
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    if (::getaddrinfo(rest.substr(0, colon).c_str(), rest.substr(colon + 1).c_str(), &hints, &res) != 0) {
      throw IoError("cannot resolve " + endpoint);
    }
    for (addrinfo* a = res; a; a = a->ai_next) {
      fd_ = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
      if (fd_ < 0) continue;
      const int one = 1;
      ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
      if (::bind(fd_, a->ai_addr, a->ai_addrlen) == 0 && ::listen(fd_, 1) == 0) break;
      ::close(fd_);
      fd_ = -1;
    }
    ::freeaddrinfo(res);
    if (fd_ < 0) throw IoError("listen " + endpoint + " failed");
    return;
  }
  throw InvalidArgument("unknown endpoint scheme: " + endpoint);
}

Listener::~Listener() {
  if (fd_ >= 0) ::close(fd_);
  if (!unix_path_.empty()) ::unlink(unix_path_.c_str());
}

Transport Listener::accept(std::chrono::milliseconds timeout) {
  const int fd = ::accept(fd_, nullptr, nullptr);
  if (fd < 0) throw IoError(std::string("accept: ") + std::strerror(errno));
  return Transport(fd, timeout);
}

std::vector<unsigned char> encode_handshake(std::uint16_t version, std::size_t h, std::size_t w,
                                            std::size_t c, std::size_t actions) {
  std::vector<unsigned char> out(kHandshakeBytes);
  std::memcpy(out.data(), "SPEV", 4);
  io::put_le<std::uint16_t>(out.data() + 4, version);
  io::put_le<std::uint16_t>(out.data() + 6, static_cast<std::uint16_t>(h));
  io::put_le<std::uint16_t>(out.data() + 8, static_cast<std::uint16_t>(w));
  io::put_le<std::uint16_t>(out.data() + 10, static_cast<std::uint16_t>(c));
  io::put_le<std::uint16_t>(out.data() + 12, static_cast<std::uint16_t>(actions));
  return out;
}

ExternalEnv::ExternalEnv(Transport transport) : transport_(std::move(transport)) {
  std::vector<unsigned char> hs;
  try {
    hs = transport_.recv_message(kHandshakeBytes);
  } catch (const ProtocolError& e) {
    fail(std::string("handshake: ") + e.what());
  }
  if (hs.size() != kHandshakeBytes || std::memcmp(hs.data(), "SPEV", 4) != 0) fail("handshake: bad magic or length");
  const auto version = io::get_le<std::uint16_t>(hs.data() + 4);
  if (version != kProtocolVersion) {
    fail("handshake: protocol version " + std::to_string(version) + ", expected " +
         std::to_string(kProtocolVersion));
  }
  h_ = io::get_le<std::uint16_t>(hs.data() + 6);
  w_ = io::get_le<std::uint16_t>(hs.data() + 8);
  c_ = io::get_le<std::uint16_t>(hs.data() + 10);
  actions_ = io::get_le<std::uint16_t>(hs.data() + 12);
  if (h_ == 0 || w_ == 0 || c_ == 0 || actions_ == 0) fail("handshake: zero dimension");
}

void ExternalEnv::fail(const std::string& what) {
  transport_.close();
  throw ProtocolError(what);
}

StepResult ExternalEnv::request(std::span<const unsigned char> payload) {
  if (!transport_.is_open()) throw ProtocolError("session closed");
  std::vector<unsigned char> msg;
  try {
    transport_.send_message(payload);
    msg = transport_.recv_message(5 + h_ * w_ * c_);
  } catch (const ProtocolError& e) {
    fail(e.what());
  }
  if (msg.size() != 5 + h_ * w_ * c_) {
    fail("response of " + std::to_string(msg.size()) + " bytes, expected " + std::to_string(5 + h_ * w_ * c_));
  }
  StepResult out;
  out.reward = std::bit_cast<float>(io::get_le<std::uint32_t>(msg.data()));
  if (msg[4] > 1) fail("done flag must be 0 or 1");
  out.done = msg[4] == 1;
  out.frame = Frame(h_, w_, c_);
  std::copy(msg.begin() + 5, msg.end(), out.frame.pixels.begin());
  return out;
}

Frame ExternalEnv::reset(std::uint64_t seed) {
  unsigned char req[9];
  req[0] = kOpReset;
  io::put_le<std::uint64_t>(req + 1, seed);
  auto r = request(req);
  started_ = true;
  done_ = false;
  return std::move(r.frame);
}

StepResult ExternalEnv::step(std::size_t action) {
  if (!started_) throw InvalidArgument("external env: step before reset");
  if (done_) throw InvalidArgument("external env: step after done");
  if (action >= actions_) throw InvalidArgument("external env: action out of range");
  unsigned char req[3];
  req[0] = kOpStep;
  io::put_le<std::uint16_t>(req + 1, static_cast<std::uint16_t>(action));
  auto r = request(req);
  r.info.raw_frames = 1;
  done_ = r.done;
  return r;
}

void serve_env(Transport& transport, EnvInterface& env) {
  transport.send_message(encode_handshake(kProtocolVersion, env.height(), env.width(), env.channels(),
                                          env.action_count()));
  for (;;) {
    std::vector<unsigned char> req;
    try {
      req = transport.recv_message(16);
    } catch (const ProtocolError&) {
      return;  // client hung up
    }
    StepResult r;
    if (req.size() == 9 && req[0] == kOpReset) {
      r.frame = env.reset(io::get_le<std::uint64_t>(req.data() + 1));
    } else if (req.size() == 3 && req[0] == kOpStep) {
      r = env.step(io::get_le<std::uint16_t>(req.data() + 1));
    } else {
      transport.close();
      throw ProtocolError("malformed request");
    }
    std::vector<unsigned char> resp(5 + r.frame.pixels.size());
    io::put_le<std::uint32_t>(resp.data(), std::bit_cast<std::uint32_t>(static_cast<float>(r.reward)));
    resp[4] = r.done ? 1 : 0;
    std::copy(r.frame.pixels.begin(), r.frame.pixels.end(), resp.begin() + 5);
    transport.send_message(resp);
  }
}

}  // namespace spirl::env
