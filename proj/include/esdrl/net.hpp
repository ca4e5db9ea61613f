#pragma once

// Minimal blocking TCP helpers (POSIX) with poll()-based timeouts.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace esdrl::net {

using Millis = std::chrono::milliseconds;

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Timeout : public NetError {
 public:
  Timeout() : NetError("timed out waiting for peer") {}
};

class Closed : public NetError {
 public:
  Closed() : NetError("connection closed by peer") {}
};

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      close();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  ~Socket() { close(); }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }

  void close() noexcept {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  // Stop both directions without releasing the descriptor.
  void shutdown() noexcept {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

inline bool wait_readable(int fd, Millis timeout) {
  pollfd p{fd, POLLIN, 0};
  const int ms = timeout.count() < 0 ? -1 : static_cast<int>(timeout.count());
  for (;;) {
    const int rc = ::poll(&p, 1, ms);
    if (rc < 0 && errno == EINTR) continue;
    if (rc < 0) throw NetError(std::string("poll: ") + std::strerror(errno));
    return rc > 0;
  }
}

inline sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (host.empty() || host == "0.0.0.0" || host == "*") {
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    return addr;
  }
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
    throw NetError("cannot resolve host '" + host + "'");
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

// Parse "host:port".
inline std::pair<std::string, std::uint16_t> split_host_port(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("expected host:port, got '" + s + "'");
  const int port = std::stoi(s.substr(colon + 1));
  if (port < 0 || port > 65535) throw std::invalid_argument("port out of range in '" + s + "'");
  return {s.substr(0, colon), static_cast<std::uint16_t>(port)};
}

inline Socket connect_tcp(const std::string& host, std::uint16_t port) {
  const sockaddr_in addr = resolve(host, port);
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw NetError(std::string("socket: ") + std::strerror(errno));
  if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    throw NetError("connect to " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

// Retry until the listener is up or the deadline passes.
inline Socket connect_with_retry(const std::string& host, std::uint16_t port, Millis deadline) {
  const auto until = std::chrono::steady_clock::now() + deadline;
  for (;;) {
    try {
      return connect_tcp(host, port);
    } catch (const NetError&) {
      if (std::chrono::steady_clock::now() >= until) throw;
      std::this_thread::sleep_for(Millis(50));
    }
  }
}

class Listener {
 public:
  Listener(const std::string& host, std::uint16_t port) {
    const sockaddr_in addr = resolve(host, port);
    sock_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!sock_.valid()) throw NetError(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(sock_.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
      throw NetError("bind " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
    if (::listen(sock_.fd(), 64) != 0) throw NetError(std::string("listen: ") + std::strerror(errno));
    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    ::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
  }

  std::uint16_t port() const noexcept { return port_; }

  std::optional<Socket> accept(Millis timeout) {
    if (!wait_readable(sock_.fd(), timeout)) return std::nullopt;
    Socket s(::accept(sock_.fd(), nullptr, nullptr));
    if (!s.valid()) throw NetError(std::string("accept: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return s;
  }

 private:
  Socket sock_;
  std::uint16_t port_ = 0;
};

// Buffered line / byte-block reader and writer over a connected socket.
class Channel {
 public:
  explicit Channel(Socket sock) : sock_(std::move(sock)) {}

  void send_line(const std::string& line) {
    std::string framed = line;
    framed.push_back('\n');
    send_all(framed.data(), framed.size());
  }

  void send_bytes(const std::vector<std::uint8_t>& bytes) { send_all(bytes.data(), bytes.size()); }

  std::string read_line(Millis timeout) {
    const auto until = deadline(timeout);
    for (;;) {
      const auto nl = std::find(buffer_.begin(), buffer_.end(), '\n');
      if (nl != buffer_.end()) {
        std::string line(buffer_.begin(), nl);
        buffer_.erase(buffer_.begin(), nl + 1);
        return line;
      }
      fill(until);
    }
  }

  std::vector<std::uint8_t> read_bytes(std::size_t n, Millis timeout) {
    const auto until = deadline(timeout);
    while (buffer_.size() < n) fill(until);
    std::vector<std::uint8_t> out(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(n));
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
  }

  void close() noexcept { sock_.close(); }
  void shutdown() noexcept { sock_.shutdown(); }
  bool open() const noexcept { return sock_.valid(); }

 private:
  using Clock = std::chrono::steady_clock;

  static std::optional<Clock::time_point> deadline(Millis timeout) {
    if (timeout.count() < 0) return std::nullopt;
    return Clock::now() + timeout;
  }

  void fill(const std::optional<Clock::time_point>& until) {
    Millis remaining(-1);
    if (until) {
      remaining = std::chrono::duration_cast<Millis>(*until - Clock::now());
      if (remaining.count() <= 0) throw Timeout();
    }
    if (!wait_readable(sock_.fd(), remaining)) throw Timeout();
    char chunk[65536];
    const ssize_t n = ::recv(sock_.fd(), chunk, sizeof chunk, 0);
    if (n == 0) throw Closed();
    if (n < 0) {
      if (errno == EINTR) return;
      throw NetError(std::string("recv: ") + std::strerror(errno));
    }
    buffer_.insert(buffer_.end(), chunk, chunk + n);
  }

  void send_all(const void* data, std::size_t size) {
    const auto* p = static_cast<const char*>(data);
    while (size > 0) {
      const ssize_t n = ::send(sock_.fd(), p, size, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        if (errno == EPIPE || errno == ECONNRESET) throw Closed();
        throw NetError(std::string("send: ") + std::strerror(errno));
      }
      p += n;
      size -= static_cast<std::size_t>(n);
    }
  }

  Socket sock_;
  std::vector<char> buffer_;
};

}  // namespace esdrl::net
