#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "semlink/channel.hpp"
#include "semlink/image.hpp"
#include "semlink/ofdm.hpp"

namespace semlink {

// Coded-bit segmentation mirroring a 1440-bit, rate-1/2 block code: each
// block carries payload + CRC-32 + 6 tail bits and encodes to twice that.
// The total coded bit count is 4x the complex-symbol budget, so the symbol
// counts of the separable path and the JSCC path match exactly.
struct BaselineBudget {
  struct Block {
    int payload_bits = 0;
    int coded_bits() const { return 2 * (payload_bits + 32 + 6); }
  };
  std::vector<Block> blocks;
  long total_coded_bits = 0;

  long payload_capacity() const;
  long symbol_count() const { return total_coded_bits / 4; }

  static BaselineBudget for_symbols(long n_complex_symbols);
};

struct CompressedImage {
  int height = 0, width = 0, channels = 0;
  std::uint8_t quality_index = 0;
  std::vector<std::uint8_t> bitstream;  // packed MSB-first
  long bit_count = 0;
  std::vector<std::uint32_t> block_crcs;
};

// Fixed-budget 8x8 block-DCT codec: uniform quantization, zigzag run-length
// with exp-Golomb coding; the quantizer step is chosen by bisection as the
// finest one whose stream fits the payload budget. Decompression inverts an
// uncorrupted stream exactly.
CompressedImage dct_compress(const ImageTensor& img, long payload_bit_budget);
ImageTensor dct_decompress(const CompressedImage& c);

// Bitwise CRC-32 (IEEE reflected polynomial 0xEDB88320) over a bit sequence.
std::uint32_t crc32_bits(std::span<const std::uint8_t> bits);

// Rate-1/2 convolutional code, constraint length 7, generators 171/133
// octal, terminated with 6 tail bits: coded length = 2*(info+6).
std::vector<std::uint8_t> conv_encode(std::span<const std::uint8_t> info_bits);

// Hard-decision Viterbi (max-likelihood for the Hamming metric) on a
// terminated trellis; always returns a path.
std::vector<std::uint8_t> viterbi_decode(std::span<const std::uint8_t> coded_bits);
// Soft-decision variant; llr > 0 votes for bit 0.
std::vector<std::uint8_t> viterbi_decode_soft(std::span<const double> llrs);

// Max-log LLRs for Gray 16-QAM symbols after equalization.
std::vector<double> qam16_llrs(std::span<const cplx> symbols, double noise_variance);

struct BaselineResult {
  ImageTensor image;
  bool ok = false;
  int crc_failures = 0;
  long data_symbols = 0;  // QAM symbols carrying coded bits
};

// Full separable chain: DCT -> per-block CRC -> convolutional code -> 16-QAM
// -> OFDM -> channel -> LS/ZF -> demap -> Viterbi -> CRC check. Any failed
// block CRC collapses the result to the all-zero image with ok = false.
BaselineResult transmit_baseline(const ImageTensor& img, const ChannelSpec& spec,
                                 const OfdmConfig& cfg, std::uint64_t seed,
                                 bool soft_decision = false);

}  // namespace semlink
