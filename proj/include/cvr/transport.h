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

#ifndef CVR_TRANSPORT_H_
#define CVR_TRANSPORT_H_

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cvr {

class TransportClosed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Moves whole frames. Implementations are used by one session at a time.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(std::span<const uint8_t> frame) = 0;
  // Blocks for the next complete frame; throws TransportClosed at end of
  // stream.
  virtual std::vector<uint8_t> receive() = 0;
  virtual void close() = 0;
};

// Two connected in-process endpoints.
std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>>
make_loopback_pair();

struct Endpoint {
  std::string host;
  uint16_t port = 0;
};

// "host:port"
Endpoint parse_endpoint(const std::string& text);

class TcpListener {
 public:
  // Port 0 picks an ephemeral port; see port().
  TcpListener(const std::string& host, uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  uint16_t port() const { return port_; }
  std::unique_ptr<Transport> accept();

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

// Retries until the listener is up or timeout_ms elapses.
std::unique_ptr<Transport> tcp_connect(const std::string& host, uint16_t port,
                                       int timeout_ms = 5000);

}  // namespace cvr

#endif  // CVR_TRANSPORT_H_
