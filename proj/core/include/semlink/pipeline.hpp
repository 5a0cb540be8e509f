#pragma once

#include <cstdint>
#include <string>

#include "semlink/baseline.hpp"
#include "semlink/codec.hpp"
#include "semlink/metrics.hpp"
#include "semlink/power.hpp"

namespace semlink {

struct E2eOptions {
  ChannelSpec channel = ChannelSpec::awgn(10.0);
  std::uint64_t seed = 1;
  double mr_override = -1.0;  // < 0: adaptive policy from SNR and object area
  AllocatorMode allocator_mode = AllocatorMode::uniform;
  const PowerAllocator* learned_allocator = nullptr;  // for AllocatorMode::learned
  bool use_frames = false;    // prototype framing (256-FFT, sync, header)
  std::string emulator_host;  // frames path only; empty = in-process channel
  int emulator_port = 0;
};

struct E2eResult {
  ImageTensor reconstructed;
  MetricsReport metrics;
  MaskMatrix mask;
  double mask_ratio = 0.0;
  double unmasked_mse = 0.0;  // Eq.(7)-style loss of the decoded masked image
  int frames_sent = 0;
};

// Full chain: preprocess -> encode -> quantize -> (place/allocate) -> OFDM
// -> channel -> LS/ZF -> dequantize -> decode -> infill -> metrics.
//
// The 64-FFT simulation flavor supports power allocation; the rank order is
// shared by both ends (ideal order feedback), while equalization always uses
// the receiver's LS estimates. The frames flavor uses the prototype
// numerology with uniform allocation, in-process or through the UDP
// emulator, with identical channel derivation either way.
E2eResult run_e2e(const ImageTensor& img, const RegionAnnotation& ann, const CodecModel& model,
                  const E2eOptions& opts);

// Separable baseline wrapper producing the same metrics layout; failed
// transmissions report zero metrics with the raw values preserved.
struct BaselineE2eResult {
  ImageTensor reconstructed;
  MetricsReport metrics;      // forced to zero on failure
  MetricsReport raw_metrics;  // as measured, regardless of status
  bool ok = false;
};

BaselineE2eResult run_baseline_e2e(const ImageTensor& img, const RegionAnnotation& ann,
                                   const ChannelSpec& channel, std::uint64_t seed);

}  // namespace semlink
