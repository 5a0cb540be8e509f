#include "semlink/emulator.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <stdexcept>

#include "semlink/frame.hpp"

namespace semlink {

namespace {

double monotonic_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (host.empty() || host == "0.0.0.0") {
    addr.sin_addr.s_addr = INADDR_ANY;
  } else if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw std::runtime_error("emulator: bad IPv4 address " + host);
  }
  return addr;
}

}  // namespace

std::vector<cplx> impair_samples(std::span<const cplx> samples, const ChannelSpec& spec,
                                 std::uint64_t session_seed, std::uint16_t group,
                                 std::uint32_t seq) {
  const OfdmConfig cfg = OfdmConfig::prototype();
  ChannelRealization ch = realize(spec, derive_seed(session_seed, 0x6B0C, group), cfg);
  CounterRng noise(derive_seed(session_seed, 0x401E, seq));
  return apply_time_domain(samples, ch, noise, cfg.cp_len).samples;
}

ChannelEmulator::ChannelEmulator(const ChannelSpec& default_spec, std::uint64_t default_seed)
    : default_spec_(default_spec), default_seed_(default_seed) {}

ChannelEmulator::~ChannelEmulator() { stop(); }

void ChannelEmulator::start(const std::string& bind_addr, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd_ < 0) throw std::runtime_error("emulator: socket() failed");
  sockaddr_in addr = make_addr(bind_addr, port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw std::runtime_error("emulator: bind() failed");
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);

  timeval tv{0, 100000};  // 100 ms poll so stop() and expiry stay responsive
  ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));

  running_ = true;
  thread_ = std::thread([this] { loop(); });
}

void ChannelEmulator::run(const std::string& bind_addr, std::uint16_t port) {
  start(bind_addr, port);
  thread_.join();
}

void ChannelEmulator::stop() {
  running_ = false;
  if (thread_.joinable()) thread_.join();
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void ChannelEmulator::loop() {
  std::vector<std::uint8_t> buf(kWireHeaderSize + kWireMaxPayload);
  while (running_) {
    sockaddr_in peer{};
    socklen_t peer_len = sizeof(peer);
    ssize_t n = ::recvfrom(fd_, buf.data(), buf.size(), 0,
                           reinterpret_cast<sockaddr*>(&peer), &peer_len);
    double now = monotonic_seconds();
    if (n > 0)
      handle_datagram(std::span<const std::uint8_t>(buf.data(), static_cast<std::size_t>(n)),
                      &peer, static_cast<int>(peer_len));
    // Expire stale fragment sets and tell their senders.
    for (auto [session, seq] : reassembler_.expire(now)) {
      auto it = pending_peers_.find({session, seq});
      if (it == pending_peers_.end()) continue;
      WireMessage err;
      err.msg_type = MsgType::error;
      err.session = session;
      err.seq = seq;
      static const char kMsg[] = "fragment reassembly timed out";
      err.payload.assign(kMsg, kMsg + sizeof(kMsg) - 1);
      send_to(serialize(err), it->second.first.data(), it->second.second);
      pending_peers_.erase(it);
    }
  }
}

void ChannelEmulator::send_to(const std::vector<std::uint8_t>& datagram, const void* peer,
                              int peer_len) {
  ::sendto(fd_, datagram.data(), datagram.size(), 0,
           reinterpret_cast<const sockaddr*>(peer), static_cast<socklen_t>(peer_len));
}

void ChannelEmulator::handle_datagram(std::span<const std::uint8_t> data, const void* peer,
                                      int peer_len) {
  WireMessage msg;
  try {
    msg = parse_message(data);
  } catch (const std::exception& e) {
    WireMessage err;
    err.msg_type = MsgType::error;
    const char* what = e.what();
    err.payload.assign(what, what + std::strlen(what));
    send_to(serialize(err), peer, peer_len);
    return;
  }

  switch (msg.msg_type) {
    case MsgType::config: {
      Session s;
      try {
        decode_config(msg.payload, &s.spec, &s.seed);
      } catch (const std::exception& e) {
        WireMessage err;
        err.msg_type = MsgType::error;
        err.session = msg.session;
        err.seq = msg.seq;
        const char* what = e.what();
        err.payload.assign(what, what + std::strlen(what));
        send_to(serialize(err), peer, peer_len);
        return;
      }
      bool found = false;
      for (auto& [id, sess] : sessions_)
        if (id == msg.session) {
          sess = s;
          found = true;
        }
      if (!found) sessions_.emplace_back(msg.session, s);
      WireMessage ack;
      ack.msg_type = MsgType::ack;
      ack.session = msg.session;
      ack.seq = msg.seq;
      send_to(serialize(ack), peer, peer_len);
      break;
    }
    case MsgType::iq_up: {
      {
        const unsigned char* p = static_cast<const unsigned char*>(peer);
        pending_peers_[{msg.session, msg.seq}] = {
            std::vector<unsigned char>(p, p + peer_len), peer_len};
      }
      auto whole = reassembler_.feed(msg, monotonic_seconds());
      if (!whole) break;
      pending_peers_.erase({msg.session, msg.seq});
      Session session{default_spec_, default_seed_};
      for (auto& [id, sess] : sessions_)
        if (id == msg.session) session = sess;

      std::vector<cplx> rx;
      try {
        auto samples = bytes_to_samples(*whole);
        rx = impair_samples(samples, session.spec, session.seed, msg.flags, msg.seq);
      } catch (const std::exception& e) {
        WireMessage err;
        err.msg_type = MsgType::error;
        err.session = msg.session;
        err.seq = msg.seq;
        const char* what = e.what();
        err.payload.assign(what, what + std::strlen(what));
        send_to(serialize(err), peer, peer_len);
        return;
      }
      auto bytes = samples_to_bytes(rx);
      for (const WireMessage& frag :
           fragment_message(MsgType::iq_down, msg.flags, msg.session, msg.seq, bytes))
        send_to(serialize(frag), peer, peer_len);
      break;
    }
    default: {
      WireMessage err;
      err.msg_type = MsgType::error;
      err.session = msg.session;
      err.seq = msg.seq;
      static const char kMsg[] = "unexpected msg_type";
      err.payload.assign(kMsg, kMsg + sizeof(kMsg) - 1);
      send_to(serialize(err), peer, peer_len);
      break;
    }
  }
}

EmulatorClient::EmulatorClient(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd_ < 0) throw std::runtime_error("client: socket() failed");
  sockaddr_in addr = make_addr(host.empty() ? "127.0.0.1" : host, port);
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw std::runtime_error("client: connect() failed");
  }
}

EmulatorClient::~EmulatorClient() {
  if (fd_ >= 0) ::close(fd_);
}

namespace {

void set_timeout(int fd, int timeout_ms) {
  timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
}

}  // namespace

void EmulatorClient::configure(const ChannelSpec& spec, std::uint64_t seed,
                               std::uint32_t session, int timeout_ms) {
  session_ = session;
  WireMessage cfg;
  cfg.msg_type = MsgType::config;
  cfg.session = session;
  cfg.seq = 0;
  cfg.payload = encode_config(spec, seed);
  auto bytes = serialize(cfg);
  if (::send(fd_, bytes.data(), bytes.size(), 0) < 0)
    throw std::runtime_error("client: send failed");

  set_timeout(fd_, timeout_ms);
  std::vector<std::uint8_t> buf(kWireHeaderSize + kWireMaxPayload);
  ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
  if (n <= 0) throw std::runtime_error("client: CONFIG timed out");
  WireMessage reply = parse_message({buf.data(), static_cast<std::size_t>(n)});
  if (reply.msg_type != MsgType::ack) throw std::runtime_error("client: CONFIG rejected");
}

std::vector<cplx> EmulatorClient::roundtrip(std::span<const cplx> samples, std::uint16_t group,
                                            std::uint32_t seq, int timeout_ms) {
  auto bytes = samples_to_bytes(samples);
  for (const WireMessage& frag :
       fragment_message(MsgType::iq_up, group, session_, seq, bytes)) {
    auto raw = serialize(frag);
    if (::send(fd_, raw.data(), raw.size(), 0) < 0)
      throw std::runtime_error("client: send failed");
  }

  set_timeout(fd_, timeout_ms);
  Reassembler reasm(timeout_ms / 1000.0 + 1.0);
  std::vector<std::uint8_t> buf(kWireHeaderSize + kWireMaxPayload);
  for (;;) {
    ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n <= 0) throw std::runtime_error("client: IQ round trip timed out");
    WireMessage reply = parse_message({buf.data(), static_cast<std::size_t>(n)});
    if (reply.msg_type == MsgType::error)
      throw std::runtime_error("client: emulator error: " +
                               std::string(reply.payload.begin(), reply.payload.end()));
    if (reply.msg_type != MsgType::iq_down || reply.seq != seq) continue;
    if (auto whole = reasm.feed(reply, monotonic_seconds()))
      return bytes_to_samples(*whole);
  }
}

}  // namespace semlink
