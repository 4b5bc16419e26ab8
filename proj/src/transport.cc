// Copyright 2026 The CVR Clean Room Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cvr/transport.h"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include "cvr/common.h"
#include "cvr/wire.h"

namespace cvr {
namespace {

struct Channel {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::vector<uint8_t>> frames;
  bool closed = false;
};

class LoopbackTransport : public Transport {
 public:
  LoopbackTransport(std::shared_ptr<Channel> in, std::shared_ptr<Channel> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~LoopbackTransport() override { close(); }

  void send(std::span<const uint8_t> frame) override {
    std::lock_guard lock(out_->mu);
    if (out_->closed) throw TransportClosed("loopback: peer closed");
    out_->frames.emplace_back(frame.begin(), frame.end());
    out_->cv.notify_all();
  }

  std::vector<uint8_t> receive() override {
    std::unique_lock lock(in_->mu);
    in_->cv.wait(lock, [&] { return !in_->frames.empty() || in_->closed; });
    if (in_->frames.empty()) throw TransportClosed("loopback: closed");
    auto f = std::move(in_->frames.front());
    in_->frames.pop_front();
    return f;
  }

  void close() override {
    for (auto* ch : {in_.get(), out_.get()}) {
      std::lock_guard lock(ch->mu);
      ch->closed = true;
      ch->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<Channel> in_;
  std::shared_ptr<Channel> out_;
};

std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

class TcpTransport : public Transport {
 public:
  explicit TcpTransport(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  ~TcpTransport() override { close(); }

  void send(std::span<const uint8_t> frame) override {
    size_t sent = 0;
    while (sent < frame.size()) {
      const ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportClosed(errno_text("tcp send"));
      }
      sent += static_cast<size_t>(n);
    }
  }

  std::vector<uint8_t> receive() override {
    std::vector<uint8_t> frame(kFrameHeaderBytes);
    read_exact(frame.data(), kFrameHeaderBytes, true);
    const FrameHeader h = parse_frame_header(frame);
    frame.resize(kFrameHeaderBytes + h.payload_length);
    read_exact(frame.data() + kFrameHeaderBytes, h.payload_length, false);
    return frame;
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  void read_exact(uint8_t* dst, size_t n, bool at_boundary) {
    size_t got = 0;
    while (got < n) {
      if (fd_ < 0) throw TransportClosed("tcp: closed");
      const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
      if (r < 0) {
        if (errno == EINTR) continue;
        throw TransportClosed(errno_text("tcp recv"));
      }
      if (r == 0) {
        if (at_boundary && got == 0) throw TransportClosed("tcp: peer closed");
        throw ProtocolError("truncated payload");
      }
      got += static_cast<size_t>(r);
    }
  }

  int fd_;
};

sockaddr_in resolve(const std::string& host, uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  const std::string h = host.empty() || host == "localhost" ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) != 1) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    addrinfo* res = nullptr;
    if (::getaddrinfo(h.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
      throw std::runtime_error("cannot resolve host '" + host + "'");
    }
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
  }
  return addr;
}

}  // namespace

std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>>
make_loopback_pair() {
  auto a_to_b = std::make_shared<Channel>();
  auto b_to_a = std::make_shared<Channel>();
  return {std::make_unique<LoopbackTransport>(b_to_a, a_to_b),
          std::make_unique<LoopbackTransport>(a_to_b, b_to_a)};
}

Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon + 1 == text.size()) {
    throw std::invalid_argument("expected host:port, got '" + text + "'");
  }
  Endpoint ep;
  ep.host = text.substr(0, colon);
  const std::string port = text.substr(colon + 1);
  size_t pos = 0;
  unsigned long value = 0;
  try {
    value = std::stoul(port, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != port.size() || value > 65535) {
    throw std::invalid_argument("bad port in '" + text + "'");
  }
  ep.port = static_cast<uint16_t>(value);
  return ep;
}

TcpListener::TcpListener(const std::string& host, uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw std::runtime_error(errno_text("socket"));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = resolve(host, port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const std::string msg = errno_text("bind");
    ::close(fd_);
    throw std::runtime_error(msg);
  }
  if (::listen(fd_, 16) != 0) {
    const std::string msg = errno_text("listen");
    ::close(fd_);
    throw std::runtime_error(msg);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Transport> TcpListener::accept() {
  for (;;) {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) return std::make_unique<TcpTransport>(fd);
    if (errno != EINTR) throw std::runtime_error(errno_text("accept"));
  }
}

std::unique_ptr<Transport> tcp_connect(const std::string& host, uint16_t port,
                                       int timeout_ms) {
  const sockaddr_in addr = resolve(host, port);
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  for (;;) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error(errno_text("socket"));
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) {
      return std::make_unique<TcpTransport>(fd);
    }
    const std::string msg = errno_text("connect");
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline) {
      throw TransportClosed(msg + " (" + host + ":" + std::to_string(port) + ")");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

}  // namespace cvr
