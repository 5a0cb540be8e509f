#include "semlink/frame.hpp"

#include <cmath>
#include <stdexcept>

#include "semlink/rng.hpp"

namespace semlink {

namespace {

constexpr std::uint64_t kPreambleSeed = 0x5EA15EED;
constexpr int kHeaderBits = 16;
constexpr int kHeaderRepetition = 4;

std::uint16_t pack_meta(const FrameMeta& m) {
  return static_cast<std::uint16_t>(((m.payload_type & 0xF) << 12) |
                                    ((m.mr_index & 0xF) << 8) | m.frame_seq);
}

FrameMeta unpack_meta(std::uint16_t v) {
  FrameMeta m;
  m.payload_type = static_cast<std::uint8_t>((v >> 12) & 0xF);
  m.mr_index = static_cast<std::uint8_t>((v >> 8) & 0xF);
  m.frame_seq = static_cast<std::uint8_t>(v & 0xFF);
  return m;
}

}  // namespace

const std::vector<cplx>& frame_preamble() {
  static const std::vector<cplx> preamble = [] {
    std::vector<cplx> p;
    p.reserve(kFrameSyncSamples);
    CounterRng rng(kPreambleSeed);
    std::vector<cplx> segment(kFramePnLength);
    for (auto& s : segment) {
      // QPSK pseudo-noise, unit modulus.
      double re = rng.next_u64() & 1 ? M_SQRT1_2 : -M_SQRT1_2;
      double im = rng.next_u64() & 1 ? M_SQRT1_2 : -M_SQRT1_2;
      s = {re, im};
    }
    p.insert(p.end(), segment.begin(), segment.end());
    p.insert(p.end(), segment.begin(), segment.end());
    p.resize(kFrameSyncSamples, cplx{0.0, 0.0});  // 88 guard samples
    return p;
  }();
  return preamble;
}

std::vector<cplx> build_frame(std::span<const cplx> symbols, const FrameMeta& meta) {
  if (symbols.size() > kFrameSymbolCapacity)
    throw std::invalid_argument("frame: payload exceeds 5000 symbols");
  const OfdmConfig cfg = OfdmConfig::prototype();

  std::vector<cplx> out = frame_preamble();
  out.reserve(kFrameSamples);

  // Header symbol: 16 meta bits, repeated 4x, BPSK on the first 64 data
  // bins; the remaining 61 bins stay empty.
  SymbolBlock header_bins(cfg.n_data, cplx{0.0, 0.0});
  std::uint16_t bits = pack_meta(meta);
  for (int r = 0; r < kHeaderRepetition; ++r)
    for (int b = 0; b < kHeaderBits; ++b) {
      int bit = (bits >> (kHeaderBits - 1 - b)) & 1;
      header_bins[r * kHeaderBits + b] = cplx(bit ? 1.0 : -1.0, 0.0);
    }
  auto header_samples = ofdm_modulate(header_bins, cfg);
  out.insert(out.end(), header_samples.begin(), header_samples.end());

  SymbolBlock data(static_cast<std::size_t>(kFrameDataSymbols) * cfg.n_data, cplx{0.0, 0.0});
  std::copy(symbols.begin(), symbols.end(), data.begin());
  auto data_samples = ofdm_modulate(data, cfg);
  out.insert(out.end(), data_samples.begin(), data_samples.end());

  if (static_cast<int>(out.size()) != kFrameSamples)
    throw std::logic_error("frame: sample count mismatch");
  return out;
}

ParsedFrame parse_frame(std::span<const cplx> samples) {
  if (samples.size() < kFrameSamples) throw std::invalid_argument("frame: truncated");
  const OfdmConfig cfg = OfdmConfig::prototype();

  OfdmRx rx = ofdm_demodulate(
      samples.subspan(kFrameSyncSamples, static_cast<std::size_t>(kFrameTotalSymbols) *
                                             cfg.samples_per_symbol()),
      cfg);

  ParsedFrame out;
  out.pilots = rx.pilots;

  // Majority vote across the four header repetitions (BPSK sign).
  std::uint16_t bits = 0;
  for (int b = 0; b < kHeaderBits; ++b) {
    double acc = 0.0;
    for (int r = 0; r < kHeaderRepetition; ++r)
      acc += rx.data[static_cast<std::size_t>(r) * kHeaderBits + b].real();
    bits = static_cast<std::uint16_t>((bits << 1) | (acc > 0.0 ? 1 : 0));
  }
  out.meta = unpack_meta(bits);

  out.data.assign(rx.data.begin() + cfg.n_data, rx.data.end());
  return out;
}

std::optional<std::size_t> synchronize(std::span<const cplx> stream, std::size_t max_offset,
                                       double threshold) {
  const std::vector<cplx>& pre = frame_preamble();
  const std::size_t corr_len = 2 * kFramePnLength;  // the PN portion only
  if (stream.size() < corr_len) return std::nullopt;

  double pre_energy = 0.0;
  for (std::size_t n = 0; n < corr_len; ++n) pre_energy += std::norm(pre[n]);

  std::size_t last = std::min(max_offset, stream.size() - corr_len);
  double best = 0.0;
  std::size_t best_idx = 0;
  for (std::size_t tau = 0; tau <= last; ++tau) {
    cplx acc{0.0, 0.0};
    double sig_energy = 0.0;
    for (std::size_t n = 0; n < corr_len; ++n) {
      acc += std::conj(pre[n]) * stream[tau + n];
      sig_energy += std::norm(stream[tau + n]);
    }
    if (sig_energy <= 0.0) continue;
    double metric = std::abs(acc) / std::sqrt(pre_energy * sig_energy);
    if (metric > best) {
      best = metric;
      best_idx = tau;
    }
  }
  if (best < threshold) return std::nullopt;
  return best_idx;
}

double frame_data_rate_bps(bool include_sync_overhead) {
  // 40 data symbols x 125 bins x 4 bits (16-QAM) per frame at 1 Msps.
  const double bits = 40.0 * 125.0 * 4.0;
  const double samples = include_sync_overhead ? kFrameSamples : 41.0 * 320.0;
  return bits / (samples / 1.0e6);
}

}  // namespace semlink
