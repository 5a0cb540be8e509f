#include "semlink/ofdm.hpp"

#include <cmath>
#include <stdexcept>

namespace semlink {

void OfdmConfig::validate() const {
  if (n_data + n_pilot + n_guard != fft_size)
    throw std::invalid_argument("ofdm: data+pilot+guard must equal fft_size");
  if (cp_len < 0 || cp_len >= fft_size) throw std::invalid_argument("ofdm: bad cp length");
  if ((fft_size & (fft_size - 1)) != 0) throw std::invalid_argument("ofdm: fft_size not 2^n");
  if (n_pilot < 2) throw std::invalid_argument("ofdm: need at least two pilots");
  if ((n_pilot - 1) * pilot_spacing >= band())
    throw std::invalid_argument("ofdm: pilot comb exceeds band");
  if (guard_left + band() > fft_size) throw std::invalid_argument("ofdm: band exceeds fft");
  if (std::abs(pilot_value) == 0.0) throw std::invalid_argument("ofdm: zero pilot value");
}

OfdmConfig OfdmConfig::simulation() {
  OfdmConfig c;
  c.fft_size = 64;
  c.n_data = 55;
  c.n_pilot = 9;
  c.n_guard = 0;
  c.guard_left = 0;
  c.cp_len = 16;
  c.pilot_spacing = 7;
  c.validate();
  return c;
}

OfdmConfig OfdmConfig::prototype() {
  OfdmConfig c;
  c.fft_size = 256;
  c.n_data = 125;
  c.n_pilot = 25;
  c.n_guard = 106;
  c.guard_left = 53;
  c.cp_len = 64;
  c.pilot_spacing = 6;
  c.validate();
  return c;
}

namespace {
constexpr double kInvSqrt10 = 0.31622776601683794;  // 1/sqrt(10)

// Gray pair -> PAM level in {-3,-1,1,3}.
inline int gray_level(std::uint8_t b0, std::uint8_t b1) {
  if (!b0) return b1 ? -1 : -3;
  return b1 ? 1 : 3;
}

inline void level_bits(double v, std::uint8_t* b0, std::uint8_t* b1) {
  // Nearest-level hard decision with thresholds at -2, 0, +2.
  if (v < -2.0) {
    *b0 = 0;
    *b1 = 0;
  } else if (v < 0.0) {
    *b0 = 0;
    *b1 = 1;
  } else if (v < 2.0) {
    *b0 = 1;
    *b1 = 1;
  } else {
    *b0 = 1;
    *b1 = 0;
  }
}
}  // namespace

SymbolBlock map_qam16(std::span<const std::uint8_t> bits) {
  if (bits.size() % 4 != 0) throw std::invalid_argument("qam16: bit count not divisible by 4");
  SymbolBlock out(bits.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int re = gray_level(bits[4 * i], bits[4 * i + 1]);
    int im = gray_level(bits[4 * i + 2], bits[4 * i + 3]);
    out[i] = cplx(re * kInvSqrt10, im * kInvSqrt10);
  }
  return out;
}

std::vector<std::uint8_t> demap_qam16(std::span<const cplx> symbols) {
  std::vector<std::uint8_t> bits(symbols.size() * 4);
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    level_bits(symbols[i].real() / kInvSqrt10, &bits[4 * i], &bits[4 * i + 1]);
    level_bits(symbols[i].imag() / kInvSqrt10, &bits[4 * i + 2], &bits[4 * i + 3]);
  }
  return bits;
}

void fft_inplace(SymbolBlock& x, bool inverse) {
  const std::size_t n = x.size();
  if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft: size not a power of two");

  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    cplx wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        cplx u = x[i + j];
        cplx v = x[i + j + len / 2] * w;
        x[i + j] = u + v;
        x[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }

  // Unitary scaling keeps energy identical in both domains.
  double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (auto& v : x) v *= scale;
}

std::vector<cplx> ofdm_modulate(std::span<const cplx> data_symbols, const OfdmConfig& cfg) {
  cfg.validate();
  if (data_symbols.size() % cfg.n_data != 0)
    throw std::invalid_argument("ofdm: symbol count not a multiple of data subcarriers");
  const std::size_t n_sym = data_symbols.size() / cfg.n_data;
  std::vector<cplx> out;
  out.reserve(n_sym * cfg.samples_per_symbol());

  SymbolBlock spec(cfg.fft_size);
  std::size_t di = 0;
  for (std::size_t s = 0; s < n_sym; ++s) {
    std::fill(spec.begin(), spec.end(), cplx{0.0, 0.0});
    for (int b = 0; b < cfg.band(); ++b)
      spec[cfg.guard_left + b] = cfg.is_pilot_bin(b) ? cfg.pilot_value : data_symbols[di++];
    fft_inplace(spec, /*inverse=*/true);
    // Cyclic prefix: copy of the symbol tail.
    for (int i = cfg.fft_size - cfg.cp_len; i < cfg.fft_size; ++i) out.push_back(spec[i]);
    out.insert(out.end(), spec.begin(), spec.end());
  }
  return out;
}

OfdmRx ofdm_demodulate(std::span<const cplx> samples, const OfdmConfig& cfg) {
  cfg.validate();
  const int sps = cfg.samples_per_symbol();
  if (samples.size() % sps != 0)
    throw std::invalid_argument("ofdm: sample count not a multiple of symbol length");
  OfdmRx rx;
  rx.n_symbols = static_cast<int>(samples.size()) / sps;
  rx.data.reserve(static_cast<std::size_t>(rx.n_symbols) * cfg.n_data);
  rx.pilots.reserve(static_cast<std::size_t>(rx.n_symbols) * cfg.n_pilot);

  SymbolBlock spec(cfg.fft_size);
  for (int s = 0; s < rx.n_symbols; ++s) {
    const cplx* sym = samples.data() + static_cast<std::size_t>(s) * sps + cfg.cp_len;
    spec.assign(sym, sym + cfg.fft_size);
    fft_inplace(spec, /*inverse=*/false);
    for (int b = 0; b < cfg.band(); ++b) {
      cplx v = spec[cfg.guard_left + b];
      if (cfg.is_pilot_bin(b))
        rx.pilots.push_back(v);
      else
        rx.data.push_back(v);
    }
  }
  return rx;
}

CsiReport ls_estimate(std::span<const cplx> rx_pilots, const OfdmConfig& cfg,
                      double noise_variance) {
  cfg.validate();
  if (rx_pilots.empty() || rx_pilots.size() % cfg.n_pilot != 0)
    throw std::invalid_argument("ls: pilot count not a multiple of the comb size");
  const std::size_t n_sym = rx_pilots.size() / cfg.n_pilot;

  // Average pilot observations across OFDM symbols (channel is
  // block-constant), then divide by the known pilot value.
  SymbolBlock hp(cfg.n_pilot, cplx{0.0, 0.0});
  for (std::size_t s = 0; s < n_sym; ++s)
    for (int p = 0; p < cfg.n_pilot; ++p) hp[p] += rx_pilots[s * cfg.n_pilot + p];
  for (auto& v : hp) v /= (static_cast<double>(n_sym) * cfg.pilot_value);

  CsiReport csi;
  csi.h.resize(cfg.band());
  for (int b = 0; b < cfg.band(); ++b) {
    int left = b / cfg.pilot_spacing;
    if (left >= cfg.n_pilot - 1) {
      // Beyond the outermost pilot: nearest-pilot extrapolation.
      csi.h[b] = hp[cfg.n_pilot - 1];
      continue;
    }
    double t = static_cast<double>(b - left * cfg.pilot_spacing) / cfg.pilot_spacing;
    csi.h[b] = hp[left] * (1.0 - t) + hp[left + 1] * t;
  }

  if (noise_variance > 0.0) {
    double num = 0.0;
    for (const cplx& h : csi.h) num += std::norm(h);
    csi.snr_db = 10.0 * std::log10(num / (csi.h.size() * noise_variance));
  }
  return csi;
}

ZfResult zf_detect(std::span<const cplx> rx_data, const CsiReport& csi, const OfdmConfig& cfg) {
  cfg.validate();
  if (rx_data.size() % cfg.n_data != 0)
    throw std::invalid_argument("zf: data count not a multiple of data subcarriers");

  // Channel estimates at the data bins, in band order.
  SymbolBlock hd;
  hd.reserve(cfg.n_data);
  for (int b = 0; b < cfg.band(); ++b)
    if (!cfg.is_pilot_bin(b)) hd.push_back(csi.h[b]);

  ZfResult out;
  out.symbols.resize(rx_data.size());
  out.erased.assign(rx_data.size(), 0);
  for (std::size_t i = 0; i < rx_data.size(); ++i) {
    const cplx& h = hd[i % cfg.n_data];
    if (std::abs(h) < 1e-12) {
      out.symbols[i] = cplx{0.0, 0.0};
      out.erased[i] = 1;
    } else {
      out.symbols[i] = rx_data[i] / h;
    }
  }
  return out;
}

double measure_snr(std::span<const cplx> tx, std::span<const cplx> h, double noise_variance) {
  if (tx.size() != h.size()) throw std::invalid_argument("measure_snr: length mismatch");
  if (noise_variance <= 0.0) throw std::invalid_argument("measure_snr: sigma^2 must be > 0");
  double num = 0.0;
  for (std::size_t k = 0; k < tx.size(); ++k) num += std::norm(h[k] * tx[k]);
  return 10.0 * std::log10(num / (static_cast<double>(tx.size()) * noise_variance));
}

}  // namespace semlink
