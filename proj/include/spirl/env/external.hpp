// SPDX-License-Identifier: Apache-2.0
// Length-prefixed binary protocol for environments running in another
// process. Every message is u32 LE payload length followed by the payload.
//
//   handshake (peer -> client): "SPEV" | version u16 | h u16 | w u16 | c u16 | actions u16
//   RESET     (client -> peer): 0x01 | seed u64
//   STEP      (client -> peer): 0x02 | action u16
//   response  (peer -> client): reward f32 | done u8 | frame bytes (h*w*c)
#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spirl/env/env.hpp"

namespace spirl::env {

inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::uint8_t kOpReset = 1;
inline constexpr std::uint8_t kOpStep = 2;

// Owns a connected stream socket; all I/O is bounded by the timeout.
class Transport {
 public:
  Transport() = default;
  Transport(int fd, std::chrono::milliseconds timeout);
  ~Transport();
  Transport(Transport&& other) noexcept;
  Transport& operator=(Transport&& other) noexcept;
  Transport(const Transport&) = delete;
  Transport& operator=(const Transport&) = delete;

  void send_message(std::span<const unsigned char> payload);
  // Throws ProtocolError on timeout, EOF, or a payload above max_len.
  std::vector<unsigned char> recv_message(std::size_t max_len);
  // Raw bytes without framing (used to build malformed test traffic).
  void send_raw(std::span<const unsigned char> bytes);
  bool is_open() const { return fd_ >= 0; }
  void close();

 private:
  void read_exact(unsigned char* dst, std::size_t n);
  int fd_ = -1;
  std::chrono::milliseconds timeout_{0};
};

// Connected pair of in-process transports (socketpair).
std::pair<Transport, Transport> loopback_pair(std::chrono::milliseconds timeout);

// "unix:/path/to/socket" or "tcp:host:port".
Transport connect_endpoint(const std::string& endpoint, std::chrono::milliseconds timeout);

// Listening socket for the serving side of an endpoint. Unix socket files
// are removed on destruction.
class Listener {
 public:
  explicit Listener(const std::string& endpoint);
  ~Listener();
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  Transport accept(std::chrono::milliseconds timeout);

 private:
  int fd_ = -1;
  std::string unix_path_;
};

class ExternalEnv final : public EnvInterface {
 public:
  // Reads and checks the handshake.
  explicit ExternalEnv(Transport transport);

  std::size_t action_count() const override { return actions_; }
  std::size_t height() const override { return h_; }
  std::size_t width() const override { return w_; }
  std::size_t channels() const override { return c_; }

  Frame reset(std::uint64_t seed) override;
  StepResult step(std::size_t action) override;

  bool connected() const { return transport_.is_open(); }

 private:
  StepResult request(std::span<const unsigned char> payload);
  [[noreturn]] void fail(const std::string& what);

  Transport transport_;
  std::size_t h_ = 0, w_ = 0, c_ = 0, actions_ = 0;
  bool started_ = false;
  bool done_ = false;
};

// Reference peer: serves env over the transport until the client hangs up.
void serve_env(Transport& transport, EnvInterface& env);

std::vector<unsigned char> encode_handshake(std::uint16_t version, std::size_t h, std::size_t w,
                                            std::size_t c, std::size_t actions);

}  // namespace spirl::env
