#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "semlink/channel.hpp"
#include "semlink/wire.hpp"

namespace semlink {

// Shared impairment rule for both the in-process channel and the UDP
// emulator: the realization seed depends on (session_seed, group) so frames
// of one image share a realization, while the noise stream advances with
// every message seq. The emulator normalizes sigma^2 on its native
// prototype numerology.
std::vector<cplx> impair_samples(std::span<const cplx> samples, const ChannelSpec& spec,
                                 std::uint64_t session_seed, std::uint16_t group,
                                 std::uint32_t seq);

// UDP channel-emulator service. CONFIG binds a channel spec + seed to a
// session; each reassembled IQ_UP message comes back as IQ_DOWN with the
// same seq after passing through the channel. Incomplete fragment sets
// expire after one second and trigger an ERROR carrying the seq.
class ChannelEmulator {
 public:
  ChannelEmulator(const ChannelSpec& default_spec, std::uint64_t default_seed);
  ~ChannelEmulator();

  // Binds and starts the service thread; port 0 picks an ephemeral port.
  void start(const std::string& bind_addr, std::uint16_t port);
  void stop();
  std::uint16_t port() const { return port_; }

  // Runs the receive loop on the calling thread until stop() (serve mode).
  void run(const std::string& bind_addr, std::uint16_t port);

 private:
  void loop();
  void handle_datagram(std::span<const std::uint8_t> data, const void* peer, int peer_len);
  void send_to(const std::vector<std::uint8_t>& datagram, const void* peer, int peer_len);

  struct Session {
    ChannelSpec spec;
    std::uint64_t seed = 0;
  };

  ChannelSpec default_spec_;
  std::uint64_t default_seed_;
  int fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread thread_;
  Reassembler reassembler_{1.0};
  std::vector<std::pair<std::uint32_t, Session>> sessions_;
  // Sender address per in-flight (session, seq), for timeout ERROR replies.
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::pair<std::vector<unsigned char>, int>>
      pending_peers_;
};

// Synchronous client: configure once, then round-trip sample bursts.
class EmulatorClient {
 public:
  EmulatorClient(const std::string& host, std::uint16_t port);
  ~EmulatorClient();

  void configure(const ChannelSpec& spec, std::uint64_t seed, std::uint32_t session,
                 int timeout_ms = 2000);
  std::vector<cplx> roundtrip(std::span<const cplx> samples, std::uint16_t group,
                              std::uint32_t seq, int timeout_ms = 5000);

  std::uint32_t session() const { return session_; }

 private:
  int fd_ = -1;
  std::uint32_t session_ = 0;
};

}  // namespace semlink
