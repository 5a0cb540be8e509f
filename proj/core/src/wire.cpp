#include "semlink/wire.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace semlink {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) |
         (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[off + i]) << (8 * i);
  return v;
}

double get_f64(std::span<const std::uint8_t> b, std::size_t off) {
  return std::bit_cast<double>(get_u64(b, off));
}

}  // namespace

std::vector<std::uint8_t> serialize(const WireMessage& msg) {
  if (msg.payload.size() > kWireMaxPayload)
    throw std::invalid_argument("wire: payload exceeds 1400 bytes");
  std::vector<std::uint8_t> out;
  out.reserve(kWireHeaderSize + msg.payload.size());
  out.push_back('S');
  out.push_back('E');
  out.push_back('M');
  out.push_back('L');
  out.push_back(msg.version);
  out.push_back(static_cast<std::uint8_t>(msg.msg_type));
  put_u16(out, msg.flags);
  put_u32(out, msg.session);
  put_u32(out, msg.seq);
  put_u16(out, msg.frag_index);
  put_u16(out, msg.frag_count);
  put_u32(out, static_cast<std::uint32_t>(msg.payload.size()));
  out.insert(out.end(), msg.payload.begin(), msg.payload.end());
  return out;
}

WireMessage parse_message(std::span<const std::uint8_t> datagram) {
  if (datagram.size() < kWireHeaderSize) throw std::runtime_error("wire: short datagram");
  if (std::memcmp(datagram.data(), "SEML", 4) != 0)
    throw std::runtime_error("wire: bad magic");
  WireMessage msg;
  msg.version = datagram[4];
  if (msg.version != kWireVersion) throw std::runtime_error("wire: unknown version");
  if (datagram[5] > 4) throw std::runtime_error("wire: unknown msg_type");
  msg.msg_type = static_cast<MsgType>(datagram[5]);
  msg.flags = get_u16(datagram, 6);
  msg.session = get_u32(datagram, 8);
  msg.seq = get_u32(datagram, 12);
  msg.frag_index = get_u16(datagram, 16);
  msg.frag_count = get_u16(datagram, 18);
  std::uint32_t len = get_u32(datagram, 20);
  if (len > kWireMaxPayload) throw std::runtime_error("wire: payload_len exceeds limit");
  if (datagram.size() != kWireHeaderSize + len)
    throw std::runtime_error("wire: payload length mismatch");
  if (msg.frag_count == 0 || msg.frag_index >= msg.frag_count)
    throw std::runtime_error("wire: bad fragment indices");
  msg.payload.assign(datagram.begin() + kWireHeaderSize, datagram.end());
  return msg;
}

std::vector<WireMessage> fragment_message(MsgType type, std::uint16_t flags,
                                          std::uint32_t session, std::uint32_t seq,
                                          std::span<const std::uint8_t> payload) {
  std::size_t count = payload.empty() ? 1 : (payload.size() + kWireMaxPayload - 1) / kWireMaxPayload;
  if (count > 0xFFFF) throw std::invalid_argument("wire: payload needs too many fragments");
  std::vector<WireMessage> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    WireMessage m;
    m.msg_type = type;
    m.flags = flags;
    m.session = session;
    m.seq = seq;
    m.frag_index = static_cast<std::uint16_t>(i);
    m.frag_count = static_cast<std::uint16_t>(count);
    std::size_t off = i * kWireMaxPayload;
    std::size_t len = std::min(kWireMaxPayload, payload.size() - off);
    if (!payload.empty())
      m.payload.assign(payload.begin() + off, payload.begin() + off + len);
    out.push_back(std::move(m));
  }
  return out;
}

std::optional<std::vector<std::uint8_t>> Reassembler::feed(const WireMessage& msg,
                                                           double now_seconds) {
  auto key = std::make_pair(msg.session, msg.seq);
  Pending& p = pending_[key];
  if (p.parts.empty()) {
    p.parts.resize(msg.frag_count);
    p.first_seen = now_seconds;
    p.flags = msg.flags;
  }
  if (msg.frag_count != p.parts.size()) {
    pending_.erase(key);
    throw std::runtime_error("wire: inconsistent fragment count");
  }
  if (p.parts[msg.frag_index].empty()) {
    p.parts[msg.frag_index] = msg.payload;
    ++p.received;
  }
  if (p.received < p.parts.size()) return std::nullopt;

  std::vector<std::uint8_t> whole;
  for (auto& part : p.parts) whole.insert(whole.end(), part.begin(), part.end());
  pending_.erase(key);
  return whole;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> Reassembler::expire(double now_seconds) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> dead;
  for (auto it = pending_.begin(); it != pending_.end();) {
    if (now_seconds - it->second.first_seen > timeout_) {
      dead.push_back(it->first);
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }
  return dead;
}

std::vector<std::uint8_t> samples_to_bytes(std::span<const cplx> samples) {
  std::vector<std::uint8_t> out;
  out.reserve(samples.size() * 8);
  auto put_f32 = [&](float f) {
    std::uint32_t v = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  for (const cplx& s : samples) {
    put_f32(static_cast<float>(s.real()));
    put_f32(static_cast<float>(s.imag()));
  }
  return out;
}

std::vector<cplx> bytes_to_samples(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 8 != 0) throw std::runtime_error("wire: IQ payload not a float pair array");
  std::vector<cplx> out(bytes.size() / 8);
  auto get_f32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[off + i]) << (8 * i);
    return std::bit_cast<float>(v);
  };
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = cplx(get_f32(8 * i), get_f32(8 * i + 4));
  return out;
}

std::vector<std::uint8_t> encode_config(const ChannelSpec& spec, std::uint64_t seed) {
  std::vector<std::uint8_t> out;
  out.push_back(static_cast<std::uint8_t>(spec.kind));
  out.push_back(static_cast<std::uint8_t>(spec.num_paths));
  put_u16(out, 0);
  put_f64(out, spec.decay);
  put_f64(out, spec.snr_db);
  put_u64(out, seed);
  return out;
}

void decode_config(std::span<const std::uint8_t> payload, ChannelSpec* spec,
                   std::uint64_t* seed) {
  if (payload.size() != 28) throw std::runtime_error("wire: bad CONFIG payload");
  if (payload[0] > 2) throw std::runtime_error("wire: bad channel kind");
  spec->kind = static_cast<ChannelKind>(payload[0]);
  spec->num_paths = payload[1];
  spec->decay = get_f64(payload, 4);
  spec->snr_db = get_f64(payload, 12);
  *seed = get_u64(payload, 20);
}

void write_iq_file(const std::string& path, std::span<const cplx> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("iq: cannot write " + path);
  auto bytes = samples_to_bytes(samples);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

std::vector<cplx> read_iq_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("iq: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes_to_samples(bytes);
}

}  // namespace semlink
