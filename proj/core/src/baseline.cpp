#include "semlink/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "semlink/codec.hpp"

namespace semlink {

namespace {

class BitWriter {
 public:
  void put(int bit) {
    if (count_ % 8 == 0) bytes_.push_back(0);
    if (bit) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (count_ % 8));
    ++count_;
  }
  void put_ue(long n) {  // exp-Golomb, unsigned
    long m = n + 1;
    int len = 0;
    while ((1L << (len + 1)) <= m) ++len;
    for (int i = 0; i < len; ++i) put(0);
    for (int i = len; i >= 0; --i) put((m >> i) & 1);
  }
  void put_se(long v) { put_ue(v > 0 ? 2 * v - 1 : -2 * v); }
  long bits() const { return count_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
  long count_ = 0;
};

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> bytes, long bit_count)
      : bytes_(bytes), bit_count_(bit_count) {}
  int get() {
    if (pos_ >= bit_count_) throw std::runtime_error("dct: bitstream underrun");
    int b = (bytes_[pos_ / 8] >> (7 - pos_ % 8)) & 1;
    ++pos_;
    return b;
  }
  long get_ue() {
    int len = 0;
    while (get() == 0) {
      if (++len > 40) throw std::runtime_error("dct: malformed exp-Golomb");
    }
    long m = 1;
    for (int i = 0; i < len; ++i) m = (m << 1) | get();
    return m - 1;
  }
  long get_se() {
    long u = get_ue();
    return (u % 2 == 1) ? (u + 1) / 2 : -(u / 2);
  }

 private:
  std::span<const std::uint8_t> bytes_;
  long bit_count_;
  long pos_ = 0;
};

constexpr int kDctN = 8;

const double* dct8() {
  static double b[kDctN * kDctN];
  static bool init = [] {
    for (int f = 0; f < kDctN; ++f) {
      double c = std::sqrt((f == 0 ? 1.0 : 2.0) / kDctN);
      for (int y = 0; y < kDctN; ++y)
        b[f * kDctN + y] = c * std::cos(M_PI * (2.0 * y + 1.0) * f / (2.0 * kDctN));
    }
    return true;
  }();
  (void)init;
  return b;
}

std::vector<int> zigzag8() {
  std::vector<int> order;
  for (int s = 0; s <= 2 * (kDctN - 1); ++s) {
    if (s % 2 == 0) {
      for (int fy = std::min(s, kDctN - 1); fy >= std::max(0, s - kDctN + 1); --fy)
        order.push_back(fy * kDctN + (s - fy));
    } else {
      for (int fy = std::max(0, s - kDctN + 1); fy <= std::min(s, kDctN - 1); ++fy)
        order.push_back(fy * kDctN + (s - fy));
    }
  }
  return order;
}

double step_for_quality(int qi) { return 0.25 * std::pow(2.0, qi / 12.0); }

// 3-channel images are coded in YCbCr (BT.601); the luma plane then carries
// most of the energy and the zero runs get long on the chroma planes.
inline void rgb_to_ycbcr(double r, double g, double b, double* y, double* cb, double* cr) {
  *y = 0.299 * r + 0.587 * g + 0.114 * b;
  *cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
  *cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
}

inline void ycbcr_to_rgb(double y, double cb, double cr, double* r, double* g, double* b) {
  *r = y + 1.402 * (cr - 128.0);
  *g = y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0);
  *b = y + 1.772 * (cb - 128.0);
}

// Planar working image in the coding color space, values around [0,255].
std::vector<double> to_coding_planes(const ImageTensor& img) {
  std::vector<double> planes(img.pixels.size());
  const std::size_t plane_size = static_cast<std::size_t>(img.height) * img.width;
  if (img.channels == 3) {
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double yy, cb, cr;
        rgb_to_ycbcr(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2), &yy, &cb, &cr);
        std::size_t p = static_cast<std::size_t>(y) * img.width + x;
        planes[p] = yy;
        planes[plane_size + p] = cb;
        planes[2 * plane_size + p] = cr;
      }
  } else {
    for (std::size_t i = 0; i < plane_size; ++i) planes[i] = img.pixels[i];
  }
  return planes;
}

ImageTensor from_coding_planes(const std::vector<double>& planes, int h, int w, int c) {
  ImageTensor img = ImageTensor::filled(h, w, c, 0);
  const std::size_t plane_size = static_cast<std::size_t>(h) * w;
  auto clamp8 = [](double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  };
  if (c == 3) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        std::size_t p = static_cast<std::size_t>(y) * w + x;
        double r, g, b;
        ycbcr_to_rgb(planes[p], planes[plane_size + p], planes[2 * plane_size + p], &r, &g, &b);
        img.at(y, x, 0) = clamp8(r);
        img.at(y, x, 1) = clamp8(g);
        img.at(y, x, 2) = clamp8(b);
      }
  } else {
    for (std::size_t i = 0; i < plane_size; ++i) img.pixels[i] = clamp8(planes[i]);
  }
  return img;
}

// Forward 8x8 DCT of one block (values pre-shifted by -128).
void block_dct(const double in[64], double out[64]) {
  const double* b = dct8();
  double tmp[64];
  for (int f = 0; f < 8; ++f)
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int y = 0; y < 8; ++y) acc += b[f * 8 + y] * in[y * 8 + x];
      tmp[f * 8 + x] = acc;
    }
  for (int fy = 0; fy < 8; ++fy)
    for (int fx = 0; fx < 8; ++fx) {
      double acc = 0.0;
      for (int x = 0; x < 8; ++x) acc += b[fx * 8 + x] * tmp[fy * 8 + x];
      out[fy * 8 + fx] = acc;
    }
}

void block_idct(const double in[64], double out[64]) {
  const double* b = dct8();
  double tmp[64];
  for (int fy = 0; fy < 8; ++fy)
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int fx = 0; fx < 8; ++fx) acc += b[fx * 8 + x] * in[fy * 8 + fx];
      tmp[fy * 8 + x] = acc;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int fy = 0; fy < 8; ++fy) acc += b[fy * 8 + y] * tmp[fy * 8 + x];
      out[y * 8 + x] = acc;
    }
}

// Encodes the whole image at one quality; returns the bit count.
long encode_stream(const ImageTensor& img, int qi, BitWriter* w) {
  static const std::vector<int> zz = zigzag8();
  const double step = step_for_quality(qi);
  const std::vector<double> planes = to_coding_planes(img);
  const std::size_t plane_size = static_cast<std::size_t>(img.height) * img.width;
  BitWriter local;
  BitWriter& out = w ? *w : local;
  for (int c = 0; c < img.channels; ++c) {
    // Chroma planes take a coarser step, as in common DCT codecs.
    const double plane_step = (img.channels == 3 && c > 0) ? 2.0 * step : step;
    long dc_pred = 0;  // DC coded as delta from the previous block
    for (int by = 0; by < img.height / kDctN; ++by)
      for (int bx = 0; bx < img.width / kDctN; ++bx) {
        double block[64], coef[64];
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            block[y * 8 + x] =
                planes[c * plane_size + static_cast<std::size_t>(by * 8 + y) * img.width +
                       (bx * 8 + x)] -
                128.0;
        block_dct(block, coef);
        long qc[64];
        for (int i = 0; i < 64; ++i) qc[i] = std::lround(coef[zz[i]] / plane_step);
        out.put_se(qc[0] - dc_pred);
        dc_pred = qc[0];
        int run = 0;
        for (int i = 1; i < 64; ++i) {
          if (qc[i] == 0) {
            ++run;
            continue;
          }
          out.put(0);
          out.put_ue(run);
          out.put_se(qc[i]);
          run = 0;
        }
        out.put(1);  // end of block
      }
  }
  return out.bits();
}

}  // namespace

long BaselineBudget::payload_capacity() const {
  long total = 0;
  for (const Block& b : blocks) total += b.payload_bits;
  return total;
}

BaselineBudget BaselineBudget::for_symbols(long n_complex_symbols) {
  BaselineBudget bb;
  bb.total_coded_bits = 4 * n_complex_symbols;
  long remaining = bb.total_coded_bits;
  while (remaining > 0) {
    long coded = std::min(remaining, 1440L);
    if (coded % 2 != 0 || coded < 2 * (32 + 6) + 2)
      throw std::invalid_argument("baseline: symbol budget too small to frame");
    bb.blocks.push_back({static_cast<int>(coded / 2 - 32 - 6)});
    remaining -= coded;
  }
  return bb;
}

CompressedImage dct_compress(const ImageTensor& img, long payload_bit_budget) {
  if (img.height % kDctN != 0 || img.width % kDctN != 0)
    throw std::invalid_argument("dct: dimensions must be multiples of 8");
  // 8 header bits carry the quality index.
  if (payload_bit_budget < 16) throw std::invalid_argument("dct: budget below header size");
  const long body_budget = payload_bit_budget - 8;

  // Smallest quantizer step whose stream fits. Stream size is non-increasing
  // in the step, so bisection applies.
  int lo = 0, hi = 255;
  if (encode_stream(img, hi, nullptr) > body_budget)
    throw std::invalid_argument("dct: budget too small at any quality");
  if (encode_stream(img, lo, nullptr) > body_budget) {
    while (hi - lo > 1) {
      int mid = (lo + hi) / 2;
      if (encode_stream(img, mid, nullptr) <= body_budget)
        hi = mid;
      else
        lo = mid;
    }
    lo = hi;
  }

  CompressedImage c;
  c.height = img.height;
  c.width = img.width;
  c.channels = img.channels;
  c.quality_index = static_cast<std::uint8_t>(lo);
  BitWriter w;
  for (int i = 7; i >= 0; --i) w.put((lo >> i) & 1);
  encode_stream(img, lo, &w);
  c.bit_count = w.bits();
  c.bitstream = w.take();
  return c;
}

ImageTensor dct_decompress(const CompressedImage& c) {
  static const std::vector<int> zz = zigzag8();
  BitReader r(c.bitstream, c.bit_count);
  int qi = 0;
  for (int i = 0; i < 8; ++i) qi = (qi << 1) | r.get();
  const double step = step_for_quality(qi);

  std::vector<double> planes(static_cast<std::size_t>(c.height) * c.width * c.channels);
  const std::size_t plane_size = static_cast<std::size_t>(c.height) * c.width;
  for (int ch = 0; ch < c.channels; ++ch) {
    const double plane_step = (c.channels == 3 && ch > 0) ? 2.0 * step : step;
    long dc_pred = 0;
    for (int by = 0; by < c.height / kDctN; ++by)
      for (int bx = 0; bx < c.width / kDctN; ++bx) {
        long qc[64] = {0};
        qc[0] = r.get_se() + dc_pred;
        dc_pred = qc[0];
        int pos = 1;
        while (true) {
          if (r.get() == 1) break;  // end of block
          pos += static_cast<int>(r.get_ue());
          if (pos >= 64) throw std::runtime_error("dct: run escapes block");
          qc[pos++] = r.get_se();
        }
        double coef[64], block[64];
        for (int i = 0; i < 64; ++i) coef[zz[i]] = static_cast<double>(qc[i]) * plane_step;
        block_idct(coef, block);
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            planes[ch * plane_size + static_cast<std::size_t>(by * 8 + y) * c.width +
                   (bx * 8 + x)] = block[y * 8 + x] + 128.0;
      }
  }
  return from_coding_planes(planes, c.height, c.width, c.channels);
}

std::uint32_t crc32_bits(std::span<const std::uint8_t> bits) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::uint8_t bit : bits) {
    std::uint32_t in = (crc ^ bit) & 1u;
    crc >>= 1;
    if (in) crc ^= 0xEDB88320u;
  }
  return crc ^ 0xFFFFFFFFu;
}

namespace {

constexpr int kG0 = 0x79;  // 171 octal
constexpr int kG1 = 0x5B;  // 133 octal
constexpr int kStates = 64;

inline int parity7(int v) { return __builtin_popcount(v) & 1; }

}  // namespace

std::vector<std::uint8_t> conv_encode(std::span<const std::uint8_t> info_bits) {
  if (info_bits.empty()) throw std::invalid_argument("conv: empty input");
  std::vector<std::uint8_t> out;
  out.reserve(2 * (info_bits.size() + 6));
  int state = 0;
  auto push = [&](int u) {
    int full = (u << 6) | state;
    out.push_back(static_cast<std::uint8_t>(parity7(full & kG0)));
    out.push_back(static_cast<std::uint8_t>(parity7(full & kG1)));
    state = full >> 1;
  };
  for (std::uint8_t b : info_bits) push(b & 1);
  for (int i = 0; i < 6; ++i) push(0);  // terminate the trellis
  return out;
}

namespace {

std::vector<std::uint8_t> viterbi_core(std::size_t n_steps,
                                       const std::function<double(std::size_t, int, int)>& cost) {
  constexpr double kInf = 1e18;
  std::vector<double> metric(kStates, kInf), next_metric(kStates, kInf);
  metric[0] = 0.0;
  std::vector<std::uint8_t> decisions(n_steps * kStates);

  for (std::size_t t = 0; t < n_steps; ++t) {
    std::fill(next_metric.begin(), next_metric.end(), kInf);
    for (int s = 0; s < kStates; ++s) {
      if (metric[s] >= kInf) continue;
      for (int u = 0; u < 2; ++u) {
        int full = (u << 6) | s;
        int c0 = parity7(full & kG0);
        int c1 = parity7(full & kG1);
        int ns = full >> 1;
        double m = metric[s] + cost(t, c0, c1);
        if (m < next_metric[ns]) {
          next_metric[ns] = m;
          // Record the predecessor's low bit and the input.
          decisions[t * kStates + ns] = static_cast<std::uint8_t>((s & 1) | (u << 1));
        }
      }
    }
    metric.swap(next_metric);
  }

  // Traceback from the all-zero state (terminated trellis).
  std::vector<std::uint8_t> bits(n_steps);
  int s = 0;
  for (std::size_t t = n_steps; t-- > 0;) {
    std::uint8_t d = decisions[t * kStates + s];
    int u = (d >> 1) & 1;
    bits[t] = static_cast<std::uint8_t>(u);
    // Previous state: shift back, restoring the dropped low bit.
    s = ((s << 1) | (d & 1)) & 0x3F;
    (void)u;
  }
  bits.resize(n_steps - 6);  // drop tail
  return bits;
}

}  // namespace

std::vector<std::uint8_t> viterbi_decode(std::span<const std::uint8_t> coded_bits) {
  if (coded_bits.size() % 2 != 0 || coded_bits.size() < 14)
    throw std::invalid_argument("viterbi: coded length must be even and >= 14");
  std::size_t n_steps = coded_bits.size() / 2;
  return viterbi_core(n_steps, [&](std::size_t t, int c0, int c1) {
    return static_cast<double>((coded_bits[2 * t] != c0) + (coded_bits[2 * t + 1] != c1));
  });
}

std::vector<std::uint8_t> viterbi_decode_soft(std::span<const double> llrs) {
  if (llrs.size() % 2 != 0 || llrs.size() < 14)
    throw std::invalid_argument("viterbi: coded length must be even and >= 14");
  std::size_t n_steps = llrs.size() / 2;
  // llr > 0 favors bit 0: cost of hypothesizing bit c against llr l.
  auto bit_cost = [](double l, int c) { return c ? l : -l; };
  return viterbi_core(n_steps, [&](std::size_t t, int c0, int c1) {
    return bit_cost(llrs[2 * t], c0) + bit_cost(llrs[2 * t + 1], c1);
  });
}

std::vector<double> qam16_llrs(std::span<const cplx> symbols, double noise_variance) {
  // Max-log over the 16 constellation points.
  static const std::uint8_t patterns[16][4] = {
      {0, 0, 0, 0}, {0, 0, 0, 1}, {0, 0, 1, 0}, {0, 0, 1, 1}, {0, 1, 0, 0}, {0, 1, 0, 1},
      {0, 1, 1, 0}, {0, 1, 1, 1}, {1, 0, 0, 0}, {1, 0, 0, 1}, {1, 0, 1, 0}, {1, 0, 1, 1},
      {1, 1, 0, 0}, {1, 1, 0, 1}, {1, 1, 1, 0}, {1, 1, 1, 1}};
  static const SymbolBlock points = [] {
    std::vector<std::uint8_t> bits;
    for (auto& p : patterns) bits.insert(bits.end(), p, p + 4);
    return map_qam16(bits);
  }();

  const double inv_n0 = 1.0 / std::max(noise_variance, 1e-12);
  std::vector<double> llrs(symbols.size() * 4);
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    double best0[4], best1[4];
    std::fill(best0, best0 + 4, 1e18);
    std::fill(best1, best1 + 4, 1e18);
    for (int p = 0; p < 16; ++p) {
      double d = std::norm(symbols[i] - points[p]) * inv_n0;
      for (int b = 0; b < 4; ++b)
        (patterns[p][b] ? best1 : best0)[b] = std::min((patterns[p][b] ? best1 : best0)[b], d);
    }
    for (int b = 0; b < 4; ++b) llrs[4 * i + b] = best1[b] - best0[b];
  }
  return llrs;
}

BaselineResult transmit_baseline(const ImageTensor& img, const ChannelSpec& spec,
                                 const OfdmConfig& cfg, std::uint64_t seed,
                                 bool soft_decision) {
  // Symbol budget matched to the JSCC path for this image geometry.
  CodecDims dims = CodecDims::for_image(img.height, img.width, img.channels);
  BaselineBudget budget = BaselineBudget::for_symbols(dims.latent_count() / 2);

  CompressedImage comp = dct_compress(img, budget.payload_capacity());

  // Assemble payload bits, zero-padded to the fixed capacity.
  std::vector<std::uint8_t> payload(budget.payload_capacity(), 0);
  for (long i = 0; i < comp.bit_count; ++i)
    payload[i] = (comp.bitstream[i / 8] >> (7 - i % 8)) & 1;

  std::vector<std::uint8_t> coded;
  coded.reserve(budget.total_coded_bits);
  long offset = 0;
  for (const BaselineBudget::Block& blk : budget.blocks) {
    std::vector<std::uint8_t> info(payload.begin() + offset,
                                   payload.begin() + offset + blk.payload_bits);
    offset += blk.payload_bits;
    std::uint32_t crc = crc32_bits(info);
    comp.block_crcs.push_back(crc);
    for (int i = 31; i >= 0; --i) info.push_back((crc >> i) & 1);
    auto enc = conv_encode(info);
    coded.insert(coded.end(), enc.begin(), enc.end());
  }

  SymbolBlock tx = map_qam16(coded);
  BaselineResult res;
  res.data_symbols = static_cast<long>(tx.size());

  // Pad to whole OFDM symbols with zero symbols.
  std::size_t per = cfg.n_data;
  std::size_t n_ofdm = (tx.size() + per - 1) / per;
  tx.resize(n_ofdm * per, cplx{0.0, 0.0});

  auto samples = ofdm_modulate(tx, cfg);
  ChannelRealization ch = realize(spec, seed, cfg);
  CounterRng noise(derive_seed(seed, 0xBA5E));
  auto rx_samples = apply_time_domain(samples, ch, noise, cfg.cp_len);
  OfdmRx rx = ofdm_demodulate(rx_samples.samples, cfg);
  CsiReport csi = ls_estimate(rx.pilots, cfg, ch.noise_variance);
  ZfResult zf = zf_detect(rx.data, csi, cfg);
  zf.symbols.resize(res.data_symbols);

  // Decode block by block; any CRC failure zeroes the whole image.
  std::vector<std::uint8_t> hard_bits;
  std::vector<double> llrs;
  if (soft_decision)
    llrs = qam16_llrs(zf.symbols, ch.noise_variance);
  else
    hard_bits = demap_qam16(zf.symbols);

  std::vector<std::uint8_t> decoded;
  bool all_ok = true;
  long pos = 0;
  for (const BaselineBudget::Block& blk : budget.blocks) {
    int coded_bits = blk.coded_bits();
    std::vector<std::uint8_t> info;
    if (soft_decision) {
      std::span<const double> seg(llrs.data() + pos, coded_bits);
      info = viterbi_decode_soft(seg);
    } else {
      std::span<const std::uint8_t> seg(hard_bits.data() + pos, coded_bits);
      info = viterbi_decode(seg);
    }
    pos += coded_bits;
    std::vector<std::uint8_t> body(info.begin(), info.end() - 32);
    std::uint32_t crc = 0;
    for (int i = 0; i < 32; ++i) crc = (crc << 1) | info[info.size() - 32 + i];
    if (crc != crc32_bits(body)) {
      all_ok = false;
      ++res.crc_failures;
    }
    decoded.insert(decoded.end(), body.begin(), body.end());
  }

  if (all_ok) {
    CompressedImage rxc;
    rxc.height = img.height;
    rxc.width = img.width;
    rxc.channels = img.channels;
    rxc.bitstream.assign((decoded.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < decoded.size(); ++i)
      if (decoded[i]) rxc.bitstream[i / 8] |= 0x80u >> (i % 8);
    rxc.bit_count = static_cast<long>(decoded.size());
    res.image = dct_decompress(rxc);
    res.ok = true;
  } else {
    res.image = ImageTensor::filled(img.height, img.width, img.channels, 0);
  }
  return res;
}

}  // namespace semlink
