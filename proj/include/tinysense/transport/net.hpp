#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinysense/transport/wire.hpp"

namespace tinysense::transport {

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The peer refused the session (codebook mismatch or malformed handshake).
class HandshakeError : public TransportError {
 public:
  using TransportError::TransportError;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  /// "host:port" or ":port". Throws std::invalid_argument.
  static Endpoint parse(const std::string& text);
  std::string str() const;
};

/// Blocking stream connection carrying whole wire frames. One reader and
/// one writer thread may use it at the same time.
class Connection {
 public:
  struct Impl;
  explicit Connection(std::unique_ptr<Impl> impl);
  Connection(Connection&&) noexcept;
  Connection& operator=(Connection&&) noexcept;
  ~Connection();

  /// Tries `attempts` times with `delay` between tries, then throws TransportError.
  static Connection connect(const Endpoint& to, int attempts = 5,
                            std::chrono::milliseconds delay = std::chrono::milliseconds(200));

  /// Raw bytes of the next frame, or nullopt on a clean end of stream.
  /// Throws io::FormatError if the stream is not framed (bad magic or
  /// oversize length) and TransportError on socket failure.
  std::optional<std::vector<std::uint8_t>> read_raw();
  /// read_raw + decode_wire; CRC failures surface as io::FormatError.
  std::optional<WireFrame> read();

  void write_raw(std::span<const std::uint8_t> bytes);
  /// Returns the number of bytes written.
  std::size_t send(const WireFrame& f);

  /// Half-close: the peer sees end of stream, reads still work.
  void shutdown_send();
  /// Unblocks any pending read; safe from another thread.
  void close();

 private:
  std::unique_ptr<Impl> impl_;
};

class Listener {
 public:
  /// Port 0 picks a free port; see port().
  explicit Listener(const Endpoint& at);
  Listener(Listener&&) noexcept;
  ~Listener();

  std::uint16_t port() const;
  Connection accept();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tinysense::transport
