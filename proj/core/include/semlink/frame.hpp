#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "semlink/ofdm.hpp"

namespace semlink {

// Physical frame of the prototype link: 600 synchronization samples (two
// repeated 256-sample pseudo-noise segments plus 88 guard samples), one
// header OFDM symbol and 40 data OFDM symbols at the 256-FFT numerology,
// 13,720 samples in total.
constexpr int kFrameSyncSamples = 600;
constexpr int kFramePnLength = 256;
constexpr int kFrameDataSymbols = 40;
constexpr int kFrameTotalSymbols = 41;
constexpr int kFrameSamples = 13720;
constexpr int kFrameSymbolCapacity = 5000;  // 40 x 125 data bins

struct FrameMeta {
  std::uint8_t payload_type = 0;  // 4 bits on the wire
  std::uint8_t mr_index = 0;      // 4 bits, mask ratio in tenths
  std::uint8_t frame_seq = 0;     // 8 bits
};

// Known preamble: PN segment repeated twice (512 samples) + 88 zeros.
const std::vector<cplx>& frame_preamble();

// Packs up to kFrameSymbolCapacity data symbols (tail zero-padded) behind
// the preamble and the BPSK repetition-coded header symbol.
std::vector<cplx> build_frame(std::span<const cplx> symbols, const FrameMeta& meta);

struct ParsedFrame {
  SymbolBlock data;    // 5000 raw data-bin values (no equalization)
  SymbolBlock pilots;  // 41 x 25 pilot-bin values, header symbol first
  FrameMeta meta;
};

// Structural inverse of build_frame; expects the frame to start at sample 0
// (run synchronize() first on a stream). Header bits decode by majority
// vote over the four repetitions.
ParsedFrame parse_frame(std::span<const cplx> samples);

// Preamble search by normalized cross-correlation against the known 512
// PN samples. Returns the frame start index, or nullopt when no peak
// clears the detection threshold.
std::optional<std::size_t> synchronize(std::span<const cplx> stream, std::size_t max_offset,
                                       double threshold = 0.4);

// Effective data rate of the frame design in bits per second. Durations at
// 1 Msps: 13.12 ms for the 41 OFDM symbols; 13.72 ms counting the
// synchronization samples as well (the design carries both numbers).
double frame_data_rate_bps(bool include_sync_overhead);

}  // namespace semlink
