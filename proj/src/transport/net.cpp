#include "tinysense/transport/net.hpp"

#include <boost/asio.hpp>
#include <thread>

#include "tinysense/io/binary.hpp"

namespace tinysense::transport {

namespace asio = boost::asio;
using tcp = asio::ip::tcp;

struct Connection::Impl {
  std::shared_ptr<asio::io_context> io;
  tcp::socket socket;

  Impl(std::shared_ptr<asio::io_context> ctx, tcp::socket s) : io(std::move(ctx)), socket(std::move(s)) {}
};

Endpoint Endpoint::parse(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("endpoint '" + text + "' is not host:port");
  Endpoint e;
  if (colon > 0) e.host = text.substr(0, colon);
  const std::string port = text.substr(colon + 1);
  std::size_t used = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(port, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (port.empty() || used != port.size() || v > 65535) throw std::invalid_argument("bad port in '" + text + "'");
  e.port = static_cast<std::uint16_t>(v);
  return e;
}

std::string Endpoint::str() const { return host + ":" + std::to_string(port); }

Connection::Connection(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Connection::Connection(Connection&&) noexcept = default;
Connection& Connection::operator=(Connection&&) noexcept = default;
Connection::~Connection() {
  if (impl_) close();
}

Connection Connection::connect(const Endpoint& to, int attempts, std::chrono::milliseconds delay) {
  auto io = std::make_shared<asio::io_context>();
  std::string last_error = "no attempts made";
  for (int i = 0; i < std::max(attempts, 1); ++i) {
    if (i > 0) std::this_thread::sleep_for(delay);
    boost::system::error_code ec;
    tcp::resolver resolver(*io);
    const auto results = resolver.resolve(to.host, std::to_string(to.port), ec);
    if (ec) {
      last_error = ec.message();
      continue;
    }
    tcp::socket s(*io);
    asio::connect(s, results, ec);
    if (!ec) {
      s.set_option(tcp::no_delay(true), ec);
      return Connection(std::make_unique<Impl>(io, std::move(s)));
    }
    last_error = ec.message();
  }
  throw TransportError("cannot connect to " + to.str() + ": " + last_error);
}

std::optional<std::vector<std::uint8_t>> Connection::read_raw() {
  std::vector<std::uint8_t> buf(kHeaderSize);
  boost::system::error_code ec;
  const std::size_t got = asio::read(impl_->socket, asio::buffer(buf), ec);
  if (ec == asio::error::eof && got == 0) return std::nullopt;
  if (ec) {
    if (ec == asio::error::eof) throw TransportError("stream ended inside a frame header");
    if (ec == asio::error::operation_aborted || ec == asio::error::bad_descriptor) return std::nullopt;
    throw TransportError("read failed: " + ec.message());
  }
  const std::size_t n = payload_length(buf);
  buf.resize(kHeaderSize + n + kTrailerSize);
  asio::read(impl_->socket, asio::buffer(buf.data() + kHeaderSize, n + kTrailerSize), ec);
  if (ec) throw TransportError("read failed inside a frame: " + ec.message());
  return buf;
}

std::optional<WireFrame> Connection::read() {
  auto raw = read_raw();
  if (!raw) return std::nullopt;
  return decode_wire(*raw);
}

void Connection::write_raw(std::span<const std::uint8_t> bytes) {
  boost::system::error_code ec;
  asio::write(impl_->socket, asio::buffer(bytes.data(), bytes.size()), ec);
  if (ec) throw TransportError("write failed: " + ec.message());
}

std::size_t Connection::send(const WireFrame& f) {
  const auto bytes = encode_wire(f);
  write_raw(bytes);
  return bytes.size();
}

void Connection::shutdown_send() {
  boost::system::error_code ec;
  impl_->socket.shutdown(tcp::socket::shutdown_send, ec);
}

void Connection::close() {
  boost::system::error_code ec;
  impl_->socket.shutdown(tcp::socket::shutdown_both, ec);
  impl_->socket.close(ec);
}

struct Listener::Impl {
  std::shared_ptr<asio::io_context> io = std::make_shared<asio::io_context>();
  tcp::acceptor acceptor{*io};
};

Listener::Listener(const Endpoint& at) : impl_(std::make_unique<Impl>()) {
  boost::system::error_code ec;
  tcp::resolver resolver(*impl_->io);
  const auto results = resolver.resolve(at.host, std::to_string(at.port), ec);
  if (ec || results.empty()) throw TransportError("cannot resolve " + at.str() + ": " + ec.message());
  const tcp::endpoint ep = *results.begin();
  impl_->acceptor.open(ep.protocol(), ec);
  if (!ec) impl_->acceptor.set_option(tcp::acceptor::reuse_address(true), ec);
  if (!ec) impl_->acceptor.bind(ep, ec);
  if (!ec) impl_->acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) throw TransportError("cannot listen on " + at.str() + ": " + ec.message());
}

Listener::Listener(Listener&&) noexcept = default;
Listener::~Listener() = default;

std::uint16_t Listener::port() const { return impl_->acceptor.local_endpoint().port(); }

Connection Listener::accept() {
  boost::system::error_code ec;
  tcp::socket s(*impl_->io);
  impl_->acceptor.accept(s, ec);
  if (ec) throw TransportError("accept failed: " + ec.message());
  s.set_option(tcp::no_delay(true), ec);
  return Connection(std::make_unique<Connection::Impl>(impl_->io, std::move(s)));
}

}  // namespace tinysense::transport
