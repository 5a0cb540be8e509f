#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semlink/ofdm.hpp"
#include "semlink/rng.hpp"

namespace semlink {

enum class ChannelKind { awgn, rayleigh_flat, multipath };

struct ChannelSpec {
  ChannelKind kind = ChannelKind::awgn;
  int num_paths = 1;
  double decay = 1.0;  // exponential power delay profile constant tau
  double snr_db = 10.0;

  static ChannelSpec awgn(double snr_db);
  static ChannelSpec rayleigh(double snr_db);
  static ChannelSpec multipath(int paths, double snr_db, double tau = 1.0);
};

ChannelKind channel_kind_from_string(const std::string& s);
const char* to_string(ChannelKind k);

// One realization, held constant for a whole image. Taps are drawn from a
// circularly-symmetric complex Gaussian with the normalized exponential
// power profile; sigma^2 follows from the target SNR with unit-power input
// evaluated on the realized response.
struct ChannelRealization {
  std::vector<cplx> taps;
  SymbolBlock freq_response;   // per band bin of the config it was built for
  SymbolBlock data_response;   // band bins minus the pilot comb
  double noise_variance = 0.0;
  std::uint64_t seed = 0;

  // CSV dump (taps, sigma^2, seed, generator id) for auditing runs.
  std::string to_csv() const;
};

// Band response = DFT of zero-padded taps evaluated on the occupied bins.
ChannelRealization realize(const ChannelSpec& spec, std::uint64_t seed, const OfdmConfig& cfg);

// Frequency-domain application y = h (.) x + z on symbols already mapped to
// band bins (cycled when x spans several OFDM symbols). `noise` continues
// the realization's noise stream.
SymbolBlock apply(std::span<const cplx> x, const ChannelRealization& ch, CounterRng& noise);

struct TimeDomainResult {
  std::vector<cplx> samples;
  bool isi_warning = false;  // channel memory exceeded the cyclic prefix
};

// Linear convolution with taps plus per-sample AWGN. Equivalent to the
// frequency-domain path after OFDM demodulation while the CP covers the
// channel memory.
TimeDomainResult apply_time_domain(std::span<const cplx> samples, const ChannelRealization& ch,
                                   CounterRng& noise, int cp_len);

}  // namespace semlink
