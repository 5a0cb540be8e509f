#include "semlink/channel.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace semlink {

ChannelSpec ChannelSpec::awgn(double snr_db) {
  ChannelSpec s;
  s.kind = ChannelKind::awgn;
  s.num_paths = 1;
  s.snr_db = snr_db;
  return s;
}

ChannelSpec ChannelSpec::rayleigh(double snr_db) {
  ChannelSpec s;
  s.kind = ChannelKind::rayleigh_flat;
  s.num_paths = 1;
  s.snr_db = snr_db;
  return s;
}

ChannelSpec ChannelSpec::multipath(int paths, double snr_db, double tau) {
  ChannelSpec s;
  s.kind = ChannelKind::multipath;
  s.num_paths = paths;
  s.decay = tau;
  s.snr_db = snr_db;
  return s;
}

ChannelKind channel_kind_from_string(const std::string& s) {
  if (s == "awgn") return ChannelKind::awgn;
  if (s == "rayleigh" || s == "rayleigh_flat") return ChannelKind::rayleigh_flat;
  if (s == "multipath") return ChannelKind::multipath;
  throw std::invalid_argument("unknown channel kind: " + s);
}

const char* to_string(ChannelKind k) {
  switch (k) {
    case ChannelKind::awgn: return "awgn";
    case ChannelKind::rayleigh_flat: return "rayleigh_flat";
    case ChannelKind::multipath: return "multipath";
  }
  return "?";
}

std::string ChannelRealization::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "# generator," << CounterRng::identity() << "\n";
  out << "# seed," << seed << "\n";
  out << "# noise_variance," << noise_variance << "\n";
  out << "tap_index,re,im\n";
  for (std::size_t l = 0; l < taps.size(); ++l)
    out << l << "," << taps[l].real() << "," << taps[l].imag() << "\n";
  return out.str();
}

ChannelRealization realize(const ChannelSpec& spec, std::uint64_t seed, const OfdmConfig& cfg) {
  cfg.validate();
  if (spec.num_paths < 1) throw std::invalid_argument("channel: num_paths must be >= 1");

  ChannelRealization ch;
  ch.seed = seed;
  CounterRng rng(seed);

  switch (spec.kind) {
    case ChannelKind::awgn:
      ch.taps = {cplx{1.0, 0.0}};
      break;
    case ChannelKind::rayleigh_flat:
      ch.taps = {rng.next_cgauss(1.0)};
      break;
    case ChannelKind::multipath: {
      // Exponential power delay profile, normalized to unit average power.
      std::vector<double> p(spec.num_paths);
      double sum = 0.0;
      for (int l = 0; l < spec.num_paths; ++l) {
        p[l] = std::exp(-static_cast<double>(l) / spec.decay);
        sum += p[l];
      }
      ch.taps.resize(spec.num_paths);
      for (int l = 0; l < spec.num_paths; ++l) ch.taps[l] = rng.next_cgauss(p[l] / sum);
      break;
    }
  }

  ch.freq_response.resize(cfg.band());
  for (int b = 0; b < cfg.band(); ++b) {
    int bin = cfg.guard_left + b;
    cplx h{0.0, 0.0};
    for (std::size_t l = 0; l < ch.taps.size(); ++l) {
      double ang = -2.0 * M_PI * bin * static_cast<double>(l) / cfg.fft_size;
      h += ch.taps[l] * cplx{std::cos(ang), std::sin(ang)};
    }
    ch.freq_response[b] = h;
  }

  for (int b = 0; b < cfg.band(); ++b)
    if (!cfg.is_pilot_bin(b)) ch.data_response.push_back(ch.freq_response[b]);

  // sigma^2 from the target SNR via the realized response over the data
  // bins, unit-power input assumed.
  double mean_gain = 0.0;
  for (const cplx& h : ch.data_response) mean_gain += std::norm(h);
  mean_gain /= static_cast<double>(ch.data_response.size());
  ch.noise_variance = mean_gain / std::pow(10.0, spec.snr_db / 10.0);
  return ch;
}

SymbolBlock apply(std::span<const cplx> x, const ChannelRealization& ch, CounterRng& noise) {
  // x[k] sits on data bin (k mod K), mirroring how a stream of symbols is
  // laid onto consecutive OFDM symbols.
  SymbolBlock out(x.size());
  const std::size_t k_data = ch.data_response.size();
  for (std::size_t k = 0; k < x.size(); ++k) {
    const cplx& h = ch.data_response[k % k_data];
    out[k] = h * x[k] + noise.next_cgauss(ch.noise_variance);
  }
  return out;
}

TimeDomainResult apply_time_domain(std::span<const cplx> samples, const ChannelRealization& ch,
                                   CounterRng& noise, int cp_len) {
  TimeDomainResult res;
  res.isi_warning = static_cast<int>(ch.taps.size()) - 1 > cp_len;
  res.samples.resize(samples.size());
  for (std::size_t n = 0; n < samples.size(); ++n) {
    cplx acc{0.0, 0.0};
    for (std::size_t l = 0; l < ch.taps.size() && l <= n; ++l)
      acc += ch.taps[l] * samples[n - l];
    if (ch.noise_variance > 0.0) acc += noise.next_cgauss(ch.noise_variance);
    res.samples[n] = acc;
  }
  return res;
}

}  // namespace semlink
