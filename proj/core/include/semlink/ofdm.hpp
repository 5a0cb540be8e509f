#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

namespace semlink {

using cplx = std::complex<double>;
using SymbolBlock = std::vector<cplx>;

// One OFDM numerology. The occupied band (data + pilot bins) is contiguous
// starting at guard_left; pilots sit on a uniform comb inside the band.
struct OfdmConfig {
  int fft_size = 64;
  int n_data = 55;
  int n_pilot = 9;
  int n_guard = 0;
  int guard_left = 0;
  int cp_len = 16;
  int pilot_spacing = 7;
  cplx pilot_value = {M_SQRT1_2, M_SQRT1_2};

  int band() const { return n_data + n_pilot; }
  int samples_per_symbol() const { return fft_size + cp_len; }
  bool is_pilot_bin(int band_index) const {
    return band_index % pilot_spacing == 0 && band_index / pilot_spacing < n_pilot;
  }

  void validate() const;

  // 64-FFT simulation numerology: 55 data + 9 comb pilots, CP 16.
  static OfdmConfig simulation();
  // 256-FFT prototype numerology: 125 data + 25 pilots + 106 guards, CP 64.
  static OfdmConfig prototype();
};

// Gray-mapped 16-QAM, unit mean constellation energy. Per axis two bits map
// as 00->-3, 01->-1, 11->+1, 10->+3, scaled by 1/sqrt(10); the first two
// bits of each group of four select the in-phase level.
SymbolBlock map_qam16(std::span<const std::uint8_t> bits);
std::vector<std::uint8_t> demap_qam16(std::span<const cplx> symbols);

// Unitary FFT helpers (1/sqrt(N) both ways); size must be a power of two.
void fft_inplace(SymbolBlock& x, bool inverse);

// Data symbols -> time samples. Symbol count must be a multiple of n_data;
// pilots inserted on the comb, guards zeroed, CP prepended per OFDM symbol.
std::vector<cplx> ofdm_modulate(std::span<const cplx> data_symbols, const OfdmConfig& cfg);

struct OfdmRx {
  int n_symbols = 0;
  SymbolBlock data;    // n_symbols * n_data, symbol-major
  SymbolBlock pilots;  // n_symbols * n_pilot
};

OfdmRx ofdm_demodulate(std::span<const cplx> samples, const OfdmConfig& cfg);

struct CsiReport {
  SymbolBlock h;  // per band bin (data + pilot), interpolated
  double snr_db = 0.0;
};

// LS channel estimation from received pilot bins (one or more OFDM symbols;
// multiple symbols are averaged). Linear interpolation between pilots,
// nearest-pilot extrapolation outside the comb. If noise_variance > 0 the
// report's snr_db is filled from the estimated response.
CsiReport ls_estimate(std::span<const cplx> rx_pilots, const OfdmConfig& cfg,
                      double noise_variance = 0.0);

struct ZfResult {
  SymbolBlock symbols;
  std::vector<std::uint8_t> erased;  // 1 where |h_hat| ~ 0
};

// Zero-forcing detection: per-bin division by the channel estimate. Bins
// with |h_hat| < 1e-12 are flagged erased and set to zero.
ZfResult zf_detect(std::span<const cplx> rx_data, const CsiReport& csi, const OfdmConfig& cfg);

// Total system SNR in dB: 10*log10(sum |h_k x_k|^2 / (K sigma^2)).
double measure_snr(std::span<const cplx> tx, std::span<const cplx> h, double noise_variance);

}  // namespace semlink
