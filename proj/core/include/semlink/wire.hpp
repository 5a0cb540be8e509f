#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "semlink/channel.hpp"

namespace semlink {

// Datagram layout, all integers little-endian:
//   magic "SEML" (4) | version u8 (=1) | msg_type u8 | flags u16 |
//   session u32 | seq u32 | frag_index u16 | frag_count u16 |
//   payload_len u32 | payload (<= 1400 bytes)
// Fragments of one logical message share (session, seq); `flags` names the
// block-fading group: messages with equal flags see one channel realization.
enum class MsgType : std::uint8_t {
  config = 0,
  iq_up = 1,
  iq_down = 2,
  ack = 3,
  error = 4,
};

constexpr std::size_t kWireHeaderSize = 24;
constexpr std::size_t kWireMaxPayload = 1400;
constexpr std::uint8_t kWireVersion = 1;

struct WireMessage {
  std::uint8_t version = kWireVersion;
  MsgType msg_type = MsgType::ack;
  std::uint16_t flags = 0;
  std::uint32_t session = 0;
  std::uint32_t seq = 0;
  std::uint16_t frag_index = 0;
  std::uint16_t frag_count = 1;
  std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> serialize(const WireMessage& msg);
WireMessage parse_message(std::span<const std::uint8_t> datagram);  // throws on malformed

// Splits a logical payload into <= 1400-byte fragments sharing one seq.
std::vector<WireMessage> fragment_message(MsgType type, std::uint16_t flags,
                                          std::uint32_t session, std::uint32_t seq,
                                          std::span<const std::uint8_t> payload);

// Reassembles fragments per (session, seq); returns the payload once every
// fragment has arrived (out-of-order tolerated). expire() drops sets older
// than the timeout and reports their seq numbers.
class Reassembler {
 public:
  explicit Reassembler(double timeout_seconds = 1.0) : timeout_(timeout_seconds) {}

  std::optional<std::vector<std::uint8_t>> feed(const WireMessage& msg, double now_seconds);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> expire(double now_seconds);

 private:
  struct Pending {
    std::vector<std::vector<std::uint8_t>> parts;
    std::size_t received = 0;
    double first_seen = 0.0;
    std::uint16_t flags = 0;
  };
  double timeout_;
  std::map<std::pair<std::uint32_t, std::uint32_t>, Pending> pending_;
};

// IQ payload codec: interleaved little-endian 32-bit floats (I, Q, ...).
std::vector<std::uint8_t> samples_to_bytes(std::span<const cplx> samples);
std::vector<cplx> bytes_to_samples(std::span<const std::uint8_t> bytes);

// CONFIG payload: kind u8 | num_paths u8 | reserved u16 | decay f64 |
// snr_db f64 | seed u64 (28 bytes, little-endian).
std::vector<std::uint8_t> encode_config(const ChannelSpec& spec, std::uint64_t seed);
void decode_config(std::span<const std::uint8_t> payload, ChannelSpec* spec,
                   std::uint64_t* seed);

// .iq file helpers (same float32 interleaved format).
void write_iq_file(const std::string& path, std::span<const cplx> samples);
std::vector<cplx> read_iq_file(const std::string& path);

}  // namespace semlink
