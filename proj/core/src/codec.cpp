#include "semlink/codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace semlink {

namespace {

constexpr double kSqrt10 = 3.1622776601683795;
constexpr double kLogitEps = 1e-7;

// Out = In * W^T + b, row-wise. In: N x i, W: o x i, b: 1 x o, Out: N x o.
void affine_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
  out = Tensor(in.rows, w.rows);
  for (int n = 0; n < in.rows; ++n) {
    const double* inp = in.v.data() + static_cast<std::size_t>(n) * in.cols;
    double* op = out.v.data() + static_cast<std::size_t>(n) * out.cols;
    for (int j = 0; j < w.rows; ++j) {
      const double* wp = w.v.data() + static_cast<std::size_t>(j) * w.cols;
      double acc = b.v[j];
      for (int k = 0; k < in.cols; ++k) acc += inp[k] * wp[k];
      op[j] = acc;
    }
  }
}

void affine_backward(const Tensor& in, const Tensor& w, const Tensor& dout, Tensor& din,
                     Tensor& dw, Tensor& db) {
  din = Tensor(in.rows, in.cols);
  for (int n = 0; n < in.rows; ++n) {
    const double* dop = dout.v.data() + static_cast<std::size_t>(n) * dout.cols;
    const double* inp = in.v.data() + static_cast<std::size_t>(n) * in.cols;
    double* dip = din.v.data() + static_cast<std::size_t>(n) * din.cols;
    for (int j = 0; j < w.rows; ++j) {
      const double g = dop[j];
      if (g == 0.0) continue;
      const double* wp = w.v.data() + static_cast<std::size_t>(j) * w.cols;
      double* dwp = dw.v.data() + static_cast<std::size_t>(j) * dw.cols;
      for (int k = 0; k < in.cols; ++k) {
        dip[k] += g * wp[k];
        dwp[k] += g * inp[k];
      }
      db.v[j] += g;
    }
  }
}

// Out = M * In + b 1^T: mixing across the patch axis. M: N x N, In: N x d,
// b: 1 x N.
void mix_forward(const Tensor& m, const Tensor& b, const Tensor& in, Tensor& out) {
  out = Tensor(in.rows, in.cols);
  for (int i = 0; i < in.rows; ++i) {
    double* op = out.v.data() + static_cast<std::size_t>(i) * in.cols;
    for (int j = 0; j < in.cols; ++j) op[j] = b.v[i];
    for (int k = 0; k < in.rows; ++k) {
      double mv = m.at(i, k);
      if (mv == 0.0) continue;
      const double* inp = in.v.data() + static_cast<std::size_t>(k) * in.cols;
      for (int j = 0; j < in.cols; ++j) op[j] += mv * inp[j];
    }
  }
}

void mix_backward(const Tensor& m, const Tensor& in, const Tensor& dout, Tensor& din, Tensor& dm,
                  Tensor& db) {
  din = Tensor(in.rows, in.cols);
  for (int i = 0; i < in.rows; ++i) {
    const double* dop = dout.v.data() + static_cast<std::size_t>(i) * dout.cols;
    for (int j = 0; j < in.cols; ++j) db.v[i] += dop[j];
    for (int k = 0; k < in.rows; ++k) {
      const double* inp = in.v.data() + static_cast<std::size_t>(k) * in.cols;
      double* dip = din.v.data() + static_cast<std::size_t>(k) * din.cols;
      double mv = m.at(i, k);
      double dmv = 0.0;
      for (int j = 0; j < in.cols; ++j) {
        dmv += dop[j] * inp[j];
        dip[j] += mv * dop[j];
      }
      dm.at(i, k) += dmv;
    }
  }
}

Tensor image_to_patches(const ImageTensor& img, const CodecDims& dims) {
  const int ps = dims.patch_size;
  Tensor u(dims.n_patches(), dims.patch_dim());
  for (int pr = 0; pr < dims.patch_rows; ++pr)
    for (int pc = 0; pc < dims.patch_cols; ++pc) {
      int p = pr * dims.patch_cols + pc;
      int col = 0;
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x)
          for (int c = 0; c < dims.channels; ++c)
            u.at(p, col++) = img.at(pr * ps + y, pc * ps + x, c) / 255.0;
    }
  return u;
}

ImageTensor patches_to_image(const Tensor& s, const CodecDims& dims) {
  const int ps = dims.patch_size;
  ImageTensor img = ImageTensor::filled(dims.image_height(), dims.image_width(),
                                        dims.channels, 0);
  for (int pr = 0; pr < dims.patch_rows; ++pr)
    for (int pc = 0; pc < dims.patch_cols; ++pc) {
      int p = pr * dims.patch_cols + pc;
      int col = 0;
      for (int y = 0; y < ps; ++y)
        for (int x = 0; x < ps; ++x)
          for (int c = 0; c < dims.channels; ++c) {
            double v = std::clamp(s.at(p, col++), 0.0, 1.0);
            img.at(pr * ps + y, pc * ps + x, c) =
                static_cast<std::uint8_t>(std::lround(v * 255.0));
          }
    }
  return img;
}

inline double slice_level(double y) {
  if (y < -2.0) return -3.0;
  if (y < 0.0) return -1.0;
  if (y < 2.0) return 1.0;
  return 3.0;
}

// Zigzag traversal order of an n x n frequency grid, low frequencies first.
std::vector<int> zigzag_order(int n) {
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(n) * n);
  for (int s = 0; s <= 2 * (n - 1); ++s) {
    if (s % 2 == 0) {
      for (int fy = std::min(s, n - 1); fy >= std::max(0, s - n + 1); --fy)
        order.push_back(fy * n + (s - fy));
    } else {
      for (int fy = std::max(0, s - n + 1); fy <= std::min(s, n - 1); ++fy)
        order.push_back(fy * n + (s - fy));
    }
  }
  return order;
}

// Orthonormal DCT-II matrix rows: B(f, y).
std::vector<double> dct_matrix(int n) {
  std::vector<double> b(static_cast<std::size_t>(n) * n);
  for (int f = 0; f < n; ++f) {
    double c = std::sqrt((f == 0 ? 1.0 : 2.0) / n);
    for (int y = 0; y < n; ++y)
      b[static_cast<std::size_t>(f) * n + y] =
          c * std::cos(M_PI * (2.0 * y + 1.0) * f / (2.0 * n));
  }
  return b;
}

}  // namespace

CodecDims CodecDims::for_image(int height, int width, int channels, int patch_size) {
  if (height % patch_size != 0 || width % patch_size != 0)
    throw std::invalid_argument("codec: image dims not divisible by patch size");
  CodecDims d;
  d.patch_size = patch_size;
  d.channels = channels;
  d.patch_rows = height / patch_size;
  d.patch_cols = width / patch_size;
  d.q = d.patch_dim() / 8;  // BCR 1/16 in complex symbols per source dim
  if (d.q % 2 != 0) throw std::invalid_argument("codec: latent size must be even");
  d.d = 2 * d.q;
  return d;
}

std::vector<Tensor*> CodecModel::params() {
  return {&enc_embed_w, &enc_embed_b, &enc_mix_w, &enc_mix_b, &enc_comp_w, &enc_comp_b,
          &dec_comp_w, &dec_comp_b, &dec_mix_w, &dec_mix_b, &dec_embed_w, &dec_embed_b};
}

std::vector<const Tensor*> CodecModel::params() const {
  return {&enc_embed_w, &enc_embed_b, &enc_mix_w, &enc_mix_b, &enc_comp_w, &enc_comp_b,
          &dec_comp_w, &dec_comp_b, &dec_mix_w, &dec_mix_b, &dec_embed_w, &dec_embed_b};
}

void CodecModel::reset_optimizer() {
  adam_m.clear();
  adam_v.clear();
  for (Tensor* t : params()) {
    adam_m.emplace_back(t->rows, t->cols);
    adam_v.emplace_back(t->rows, t->cols);
  }
  adam_step = 0;
}

namespace {

CodecModel make_shell(const CodecDims& dims) {
  CodecModel m;
  m.dims = dims;
  const int p = dims.patch_dim(), n = dims.n_patches(), d = dims.d, q = dims.q;
  m.enc_embed_w = Tensor(d, p);
  m.enc_embed_b = Tensor(1, d);
  m.enc_mix_w = Tensor(n, n);
  m.enc_mix_b = Tensor(1, n);
  m.enc_comp_w = Tensor(q, d);
  m.enc_comp_b = Tensor(1, q);
  m.dec_comp_w = Tensor(d, q);
  m.dec_comp_b = Tensor(1, d);
  m.dec_mix_w = Tensor(n, n);
  m.dec_mix_b = Tensor(1, n);
  m.dec_embed_w = Tensor(p, d);
  m.dec_embed_b = Tensor(1, p);
  for (int i = 0; i < n; ++i) {
    m.enc_mix_w.at(i, i) = 1.0;
    m.dec_mix_w.at(i, i) = 1.0;
  }
  m.reset_optimizer();
  return m;
}

}  // namespace

CodecModel CodecModel::identity(int patch_size, int channels, int patch_rows, int patch_cols) {
  CodecDims dims;
  dims.patch_size = patch_size;
  dims.channels = channels;
  dims.patch_rows = patch_rows;
  dims.patch_cols = patch_cols;
  dims.d = dims.patch_dim();
  dims.q = dims.patch_dim();
  CodecModel m = make_shell(dims);
  for (int i = 0; i < dims.d; ++i) {
    m.enc_embed_w.at(i, i) = 1.0;
    m.enc_comp_w.at(i, i) = 1.0;
    m.dec_comp_w.at(i, i) = 1.0;
    m.dec_embed_w.at(i, i) = 1.0;
  }
  return m;
}

CodecModel CodecModel::init_dct(const CodecDims& dims, const std::vector<ImageTensor>* corpus,
                                double init_gain) {
  const int p = dims.patch_dim(), d = dims.d, q = dims.q;
  if (d > p) throw std::invalid_argument("codec: d must not exceed patch_dim");
  if (q > d) throw std::invalid_argument("codec: q must not exceed d");
  CodecModel m = make_shell(dims);

  // Basis row j = zigzag 2D-DCT component (j / C) times channel-DCT row
  // (j % C); low spatial frequencies (and the channel mean) come first, so
  // lower latent indices carry coarser structure.
  const int ps = dims.patch_size, nc = dims.channels;
  std::vector<int> zz = zigzag_order(ps);
  std::vector<double> d1 = dct_matrix(ps);
  std::vector<double> dc = dct_matrix(nc);
  for (int j = 0; j < d; ++j) {
    int fidx = zz[j / nc];
    int fy = fidx / ps, fx = fidx % ps;
    int cb = j % nc;
    for (int y = 0; y < ps; ++y)
      for (int x = 0; x < ps; ++x)
        for (int c = 0; c < nc; ++c) {
          double val = d1[static_cast<std::size_t>(fy) * ps + y] *
                       d1[static_cast<std::size_t>(fx) * ps + x] *
                       dc[static_cast<std::size_t>(cb) * nc + c];
          m.enc_embed_w.at(j, (y * ps + x) * nc + c) = val;
          m.dec_embed_w.at((y * ps + x) * nc + c, j) = val;
        }
  }

  // Per-component statistics over the corpus drive the latent scaling so
  // every latent spans a comparable share of the sigmoid range.
  std::vector<double> mean(d, 0.0), var(d, 1.0);
  if (corpus && !corpus->empty()) {
    std::vector<double> sum(d, 0.0), sum2(d, 0.0);
    long count = 0;
    for (const ImageTensor& img : *corpus) {
      Tensor u = image_to_patches(img, dims);
      Tensor v;
      affine_forward(u, m.enc_embed_w, m.enc_embed_b, v);
      for (int n = 0; n < v.rows; ++n)
        for (int j = 0; j < d; ++j) {
          sum[j] += v.at(n, j);
          sum2[j] += v.at(n, j) * v.at(n, j);
        }
      count += v.rows;
    }
    for (int j = 0; j < d; ++j) {
      mean[j] = sum[j] / count;
      var[j] = std::max(sum2[j] / count - mean[j] * mean[j], 0.0);
    }
  } else {
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(var.begin(), var.end(), 1.0);
  }

  for (int j = 0; j < q; ++j) {
    double gamma = 1.2 * init_gain / std::max(std::sqrt(var[j]), 1e-3);
    m.enc_comp_w.at(j, j) = gamma;
    m.enc_comp_b.v[j] = -gamma * mean[j];
    m.dec_comp_w.at(j, j) = 1.0 / gamma;
  }
  // Truncated components reconstruct at their corpus mean.
  for (int j = 0; j < d; ++j) m.dec_comp_b.v[j] = mean[j];
  return m;
}

CodecModel CodecModel::init_random(const CodecDims& dims, std::uint64_t seed, double scale) {
  CodecModel m = make_shell(dims);
  CounterRng rng(seed);
  for (Tensor* t : m.params()) {
    if (t->rows == 1) continue;
    double s = scale / std::sqrt(static_cast<double>(t->cols));
    for (double& x : t->v) x = s * rng.next_gauss();
  }
  // Random pre-sigmoid biases give the latent code a nonzero mean component,
  // without which the sigmoid/logit pair cancels every DC path through the
  // decoder weights.
  for (double& x : m.enc_comp_b.v) x = 0.75 * rng.next_gauss();
  return m;
}

std::vector<int> redundancy_partner(const MaskMatrix& m) {
  std::vector<int> kept;
  for (std::size_t i = 0; i < m.patch_mask.size(); ++i)
    if (m.patch_mask[i]) kept.push_back(static_cast<int>(i));
  std::vector<int> partner(m.patch_mask.size(), -1);
  if (kept.empty()) return partner;
  int c = 0;
  for (std::size_t i = 0; i < m.patch_mask.size(); ++i)
    if (!m.patch_mask[i]) partner[i] = kept[c++ % kept.size()];
  return partner;
}

namespace {

// Masked rows take a copy of their partner's compressed features.
void mask_op(Tensor& a, const MaskMatrix& m, const std::vector<int>& partner) {
  for (int i = 0; i < a.rows; ++i) {
    if (m.patch_mask[i]) continue;
    int src = partner[i];
    for (int j = 0; j < a.cols; ++j) a.at(i, j) = (src >= 0) ? a.at(src, j) : 0.0;
  }
}

}  // namespace

LatentBlock encode(const ImageTensor& p_masked, const MaskMatrix& m, const CodecModel& model) {
  const CodecDims& dims = model.dims;
  if (p_masked.height != dims.image_height() || p_masked.width != dims.image_width() ||
      p_masked.channels != dims.channels)
    throw std::invalid_argument("encode: image/model dimension mismatch");
  if (static_cast<int>(m.patch_mask.size()) != dims.n_patches())
    throw std::invalid_argument("encode: mask/model dimension mismatch");

  Tensor u = image_to_patches(p_masked, dims);
  Tensor v, a;
  affine_forward(u, model.enc_embed_w, model.enc_embed_b, v);
  affine_forward(v, model.enc_comp_w, model.enc_comp_b, a);
  mask_op(a, m, redundancy_partner(m));
  Tensor x;
  mix_forward(model.enc_mix_w, model.enc_mix_b, a, x);

  LatentBlock out;
  out.n_patches = dims.n_patches();
  out.q = dims.q;
  out.values.resize(x.v.size());
  for (std::size_t i = 0; i < x.v.size(); ++i) out.values[i] = 1.0 / (1.0 + std::exp(-x.v[i]));
  return out;
}

LatentBlock combine_redundant(const LatentBlock& rx, const MaskMatrix& m,
                              std::span<const double> per_real_noise_var) {
  std::vector<int> partner = redundancy_partner(m);
  const int n = rx.n_patches, q = rx.q;

  // Copy groups per kept patch.
  std::vector<std::vector<int>> group(n);
  for (int i = 0; i < n; ++i) {
    if (m.patch_mask[i])
      group[i].push_back(i);
    else if (partner[i] >= 0)
      group[partner[i]].push_back(i);
  }

  LatentBlock out;
  out.n_patches = n;
  out.q = q;
  out.values.assign(rx.values.size(), 0.5);
  for (int i = 0; i < n; ++i) {
    if (!m.patch_mask[i]) continue;  // masked latents stay neutral
    for (int j = 0; j < q; ++j) {
      double acc = 0.0, wsum = 0.0;
      for (int src : group[i]) {
        std::size_t idx = static_cast<std::size_t>(src) * q + j;
        double c = std::clamp(rx.values[idx], kLogitEps, 1.0 - kLogitEps);
        double z = std::log(c / (1.0 - c));
        double w = per_real_noise_var.empty()
                       ? 1.0
                       : 1.0 / std::max(per_real_noise_var[idx], 1e-12);
        acc += w * z;
        wsum += w;
      }
      double z = acc / wsum;
      out.values[static_cast<std::size_t>(i) * q + j] = 1.0 / (1.0 + std::exp(-z));
    }
  }
  return out;
}

QuantizedBlock quantize(const LatentBlock& l) {
  QuantizedBlock out;
  out.n_patches = l.n_patches;
  out.q = l.q;
  out.levels.resize(l.values.size());
  for (std::size_t i = 0; i < l.values.size(); ++i) {
    double v = l.values[i];
    if (v < 0.0 || v > 1.0)
      throw std::domain_error("quantize: latent outside [0,1] (encoder contract violation)");
    if (v < 0.25)
      out.levels[i] = -3;
    else if (v < 0.5)
      out.levels[i] = -1;
    else if (v < 0.75)
      out.levels[i] = 1;
    else
      out.levels[i] = 3;
  }
  return out;
}

LatentBlock dequantize(const QuantizedBlock& q) {
  LatentBlock out;
  out.n_patches = q.n_patches;
  out.q = q.q;
  out.values.resize(q.levels.size());
  for (std::size_t i = 0; i < q.levels.size(); ++i) {
    switch (q.levels[i]) {
      case -3: out.values[i] = 0.125; break;
      case -1: out.values[i] = 0.375; break;
      case 1: out.values[i] = 0.625; break;
      case 3: out.values[i] = 0.875; break;
      default: throw std::domain_error("dequantize: invalid level value");
    }
  }
  return out;
}

double dequantize_soft(double level_axis_value) {
  return std::clamp((level_axis_value + 4.0) / 8.0, 0.0, 1.0);
}

ImageTensor decode(const LatentBlock& l, const CodecModel& model) {
  const CodecDims& dims = model.dims;
  if (l.n_patches != dims.n_patches() || l.q != dims.q)
    throw std::invalid_argument("decode: latent/model dimension mismatch");

  Tensor t(dims.n_patches(), dims.q);
  for (std::size_t i = 0; i < l.values.size(); ++i) {
    double c = std::clamp(l.values[i], kLogitEps, 1.0 - kLogitEps);
    t.v[i] = std::log(c / (1.0 - c));
  }
  Tensor z, y, s;
  mix_forward(model.dec_mix_w, model.dec_mix_b, t, z);
  affine_forward(z, model.dec_comp_w, model.dec_comp_b, y);
  affine_forward(y, model.dec_embed_w, model.dec_embed_b, s);
  return patches_to_image(s, dims);
}

SymbolBlock pair_symbols(std::span<const double> level_reals) {
  if (level_reals.size() % 2 != 0)
    throw std::invalid_argument("pair_symbols: odd number of reals");
  SymbolBlock out(level_reals.size() / 2);
  for (std::size_t s = 0; s < out.size(); ++s)
    out[s] = cplx(level_reals[2 * s] / kSqrt10, level_reals[2 * s + 1] / kSqrt10);
  return out;
}

std::vector<double> unpair_symbols(std::span<const cplx> symbols) {
  std::vector<double> out(symbols.size() * 2);
  for (std::size_t s = 0; s < symbols.size(); ++s) {
    out[2 * s] = symbols[s].real() * kSqrt10;
    out[2 * s + 1] = symbols[s].imag() * kSqrt10;
  }
  return out;
}

double loss_mse(const ImageTensor& a, const ImageTensor& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels)
    throw std::invalid_argument("loss_mse: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    double d = (a.pixels[i] - static_cast<double>(b.pixels[i])) / 255.0;
    acc += d * d;
  }
  return acc / static_cast<double>(a.pixels.size());
}

double loss_mse_unmasked(const ImageTensor& p, const ImageTensor& phat, const MaskMatrix& m,
                         const PatchGrid& grid) {
  if (p.height != phat.height || p.width != phat.width || p.channels != phat.channels)
    throw std::invalid_argument("loss_mse_unmasked: shape mismatch");
  const int n_total = grid.count();
  int n_unmasked = 0;
  for (auto b : m.patch_mask) n_unmasked += (b != 0);
  if (n_unmasked == 0)
    throw std::invalid_argument("loss_mse_unmasked: no unmasked patch (N_U = 0)");

  const int ps = grid.patch_size;
  double acc = 0.0;
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) {
      int patch = (y / ps) * grid.cols + (x / ps);
      double mbit = m.patch_mask[patch] ? 1.0 : 0.0;
      for (int c = 0; c < p.channels; ++c) {
        double d = p.at(y, x, c) / 255.0 - (phat.at(y, x, c) / 255.0) * mbit;
        acc += d * d;
      }
    }
  return acc / static_cast<double>(p.pixels.size()) * n_total / n_unmasked;
}

std::vector<int> trainable_param_indices(TrainStage stage) {
  switch (stage) {
    case TrainStage::stage1: return {0, 1, 4, 5, 6, 7, 10, 11};
    case TrainStage::stage2: return {2, 3, 8, 9};
    case TrainStage::stage3: return {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  }
  return {};
}

double codec_pass(const CodecModel& model, const ImageTensor& p_masked, const MaskMatrix& m,
                  QuantMode qm, LossKind lk, const ChannelSample& ch, CodecGrads* grads,
                  std::span<const double> gains, std::vector<double>* dgains) {
  const CodecDims& dims = model.dims;
  const int n = dims.n_patches(), q = dims.q;

  // ---- forward ----
  std::vector<int> partner = redundancy_partner(m);
  std::vector<std::vector<int>> group(n);
  for (int i = 0; i < n; ++i) {
    if (m.patch_mask[i])
      group[i].push_back(i);
    else if (partner[i] >= 0)
      group[partner[i]].push_back(i);
  }

  Tensor u = image_to_patches(p_masked, dims);
  Tensor v, a0;
  affine_forward(u, model.enc_embed_w, model.enc_embed_b, v);
  affine_forward(v, model.enc_comp_w, model.enc_comp_b, a0);
  Tensor a = a0;
  mask_op(a, m, partner);
  Tensor x;
  mix_forward(model.enc_mix_w, model.enc_mix_b, a, x);
  Tensor t(n, q);
  for (std::size_t i = 0; i < x.v.size(); ++i) t.v[i] = 1.0 / (1.0 + std::exp(-x.v[i]));

  // Quantize -> symbols -> channel -> soft dequantize. The slicing step is
  // straight-through: its backward is the identity, so gradients follow the
  // bypass (affine) path exactly.
  const std::size_t latents = t.v.size();
  Tensor t2 = t;
  std::vector<std::uint8_t> rx_unclamped(latents, 1);
  if (qm != QuantMode::off) {
    std::vector<double> level_axis(latents);
    for (std::size_t i = 0; i < latents; ++i) {
      double y = 8.0 * t.v[i] - 4.0;
      level_axis[i] = (qm == QuantMode::hard) ? slice_level(y) : y;
    }
    for (std::size_t s = 0; s < latents / 2; ++s) {
      cplx xs(level_axis[2 * s] / kSqrt10, level_axis[2 * s + 1] / kSqrt10);
      if (s < ch.effective_noise.size()) xs += ch.effective_noise[s];
      level_axis[2 * s] = xs.real() * kSqrt10;
      level_axis[2 * s + 1] = xs.imag() * kSqrt10;
    }
    for (std::size_t i = 0; i < latents; ++i) {
      double raw = (level_axis[i] + 4.0) / 8.0;
      if (raw < 0.0 || raw > 1.0) rx_unclamped[i] = 0;
      t2.v[i] = std::clamp(raw, 0.0, 1.0);
    }
  }

  Tensor z0(n, q);
  std::vector<double> logit_deriv(latents);
  for (std::size_t i = 0; i < latents; ++i) {
    double c = std::clamp(t2.v[i], kLogitEps, 1.0 - kLogitEps);
    z0.v[i] = std::log(c / (1.0 - c));
    bool interior = t2.v[i] > kLogitEps && t2.v[i] < 1.0 - kLogitEps;
    logit_deriv[i] = interior ? 1.0 / (c * (1.0 - c)) : 0.0;
  }
  Tensor z1;
  mix_forward(model.dec_mix_w, model.dec_mix_b, z0, z1);

  // Receiver-side combining of redundant copies (unweighted during
  // training); masked patches decode from the neutral zero.
  Tensor zc(n, q);
  for (int i = 0; i < n; ++i) {
    if (!m.patch_mask[i]) continue;
    for (int j = 0; j < q; ++j) {
      double acc = 0.0;
      for (int src : group[i]) acc += z1.at(src, j);
      zc.at(i, j) = acc / static_cast<double>(group[i].size());
    }
  }

  // The training objective reads the raw decoder output; clamping to the
  // pixel range happens only in decode(). A clamp here would freeze the
  // gradient of every out-of-range output.
  Tensor y, phat;
  affine_forward(zc, model.dec_comp_w, model.dec_comp_b, y);
  affine_forward(y, model.dec_embed_w, model.dec_embed_b, phat);

  const double total_px = static_cast<double>(u.v.size());
  int n_unmasked = 0;
  for (auto b : m.patch_mask) n_unmasked += (b != 0);
  if (lk == LossKind::mse_unmasked && n_unmasked == 0)
    throw std::invalid_argument("codec_pass: N_U = 0");
  const double scale =
      (lk == LossKind::mse) ? 1.0 / total_px
                            : static_cast<double>(n) / (n_unmasked * total_px);

  double loss = 0.0;
  Tensor dphat(n, dims.patch_dim());
  for (int i = 0; i < n; ++i) {
    double mbit = (lk == LossKind::mse) ? 1.0 : (m.patch_mask[i] ? 1.0 : 0.0);
    for (int j = 0; j < dims.patch_dim(); ++j) {
      double diff = u.at(i, j) - phat.at(i, j) * mbit;
      loss += scale * diff * diff;
      dphat.at(i, j) = -2.0 * scale * diff * mbit;
    }
  }

  if (!grads && !dgains) return loss;

  // ---- backward ----
  CodecGrads local;
  CodecGrads& g = grads ? *grads : local;
  if (g.g.empty()) {
    auto ps = model.params();
    for (const Tensor* p : ps) g.g.emplace_back(p->rows, p->cols);
  }

  Tensor dy, dzc;
  affine_backward(y, model.dec_embed_w, dphat, dy, g.g[10], g.g[11]);
  affine_backward(zc, model.dec_comp_w, dy, dzc, g.g[6], g.g[7]);

  // Combine backward: each group member receives an equal share of its kept
  // patch's gradient; masked combine outputs are constants.
  Tensor dz1(n, q);
  for (int i = 0; i < n; ++i) {
    if (!m.patch_mask[i]) continue;
    double share = 1.0 / static_cast<double>(group[i].size());
    for (int src : group[i])
      for (int j = 0; j < q; ++j) dz1.at(src, j) += share * dzc.at(i, j);
  }

  Tensor dz0;
  mix_backward(model.dec_mix_w, z0, dz1, dz0, g.g[8], g.g[9]);

  Tensor dt2(n, q);
  for (std::size_t i = 0; i < latents; ++i) dt2.v[i] = dz0.v[i] * logit_deriv[i];

  // Receiver clamp mask, then straight-through back to the latent. The
  // affine level-axis scalings cancel, so dT = dT2 on unclamped entries.
  Tensor dt = dt2;
  if (qm != QuantMode::off) {
    for (std::size_t i = 0; i < latents; ++i)
      if (!rx_unclamped[i]) dt.v[i] = 0.0;

    if (dgains) {
      if (ch.rank_of_symbol.size() != latents / 2 || gains.empty())
        throw std::invalid_argument("codec_pass: allocator gradient needs ranks and gains");
      // x_hat = x + n_eff with n_eff = z/(h g_r), so d x_hat/d g_r =
      // -n_eff/g_r, and dL/dRe(x_hat) = dT * sqrt(10)/8 (receiver affine).
      for (std::size_t s = 0; s < latents / 2; ++s) {
        if (s >= ch.effective_noise.size()) break;
        int r = ch.rank_of_symbol[s];
        double dre = dt.v[2 * s] * (kSqrt10 / 8.0);
        double dim = dt.v[2 * s + 1] * (kSqrt10 / 8.0);
        const cplx& neff = ch.effective_noise[s];
        (*dgains)[r] += -(dre * neff.real() + dim * neff.imag()) / gains[r];
      }
    }
  }

  Tensor dx(n, q);
  for (std::size_t i = 0; i < latents; ++i) dx.v[i] = dt.v[i] * t.v[i] * (1.0 - t.v[i]);

  Tensor da;
  mix_backward(model.enc_mix_w, a, dx, da, g.g[2], g.g[3]);

  // Mask-op backward: a masked slot's gradient flows to its source patch.
  Tensor da0 = da;
  for (int i = 0; i < n; ++i) {
    if (m.patch_mask[i]) continue;
    for (int j = 0; j < q; ++j) {
      if (partner[i] >= 0) da0.at(partner[i], j) += da.at(i, j);
      da0.at(i, j) = 0.0;
    }
  }

  Tensor dv;
  affine_backward(v, model.enc_comp_w, da0, dv, g.g[4], g.g[5]);
  Tensor du_unused;
  affine_backward(u, model.enc_embed_w, dv, du_unused, g.g[0], g.g[1]);

  return loss;
}

void adam_update(CodecModel& model, const CodecGrads& grads, const std::vector<int>& which,
                 double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  model.adam_step += 1;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(model.adam_step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(model.adam_step));
  auto ps = model.params();
  for (int idx : which) {
    Tensor& p = *ps[idx];
    Tensor& m = model.adam_m[idx];
    Tensor& v = model.adam_v[idx];
    const Tensor& g = grads.g[idx];
    for (std::size_t i = 0; i < p.v.size(); ++i) {
      m.v[i] = b1 * m.v[i] + (1.0 - b1) * g.v[i];
      v.v[i] = b2 * v.v[i] + (1.0 - b2) * g.v[i] * g.v[i];
      double mhat = m.v[i] / bc1;
      double vhat = v.v[i] / bc2;
      p.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

namespace {

MaskMatrix random_mask(int n_patches, double mr, CounterRng& rng) {
  MaskMatrix m;
  m.mask_ratio = mr;
  m.patch_mask.assign(n_patches, 1);
  int zeros = static_cast<int>(std::floor(mr * n_patches));
  std::vector<int> idx(n_patches);
  for (int i = 0; i < n_patches; ++i) idx[i] = i;
  for (int i = n_patches - 1; i > 0; --i) {
    int j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
    std::swap(idx[i], idx[j]);
  }
  for (int i = 0; i < zeros; ++i) m.patch_mask[idx[i]] = 0;
  return m;
}

// Effective per-symbol noise z/h for one image through the given spec.
ChannelSample draw_channel_sample(const ChannelSpec& spec, double snr_db, int n_symbols,
                                  std::uint64_t seed, const OfdmConfig& cfg) {
  ChannelSpec s = spec;
  s.snr_db = snr_db;
  ChannelRealization ch = realize(s, seed, cfg);
  CounterRng noise(derive_seed(seed, 0x4E4F49));
  ChannelSample out;
  out.effective_noise.resize(n_symbols);
  const std::size_t kd = ch.data_response.size();
  for (int k = 0; k < n_symbols; ++k) {
    cplx z = noise.next_cgauss(ch.noise_variance);
    const cplx& h = ch.data_response[k % kd];
    out.effective_noise[k] = (std::abs(h) < 1e-12) ? cplx{0.0, 0.0} : z / h;
  }
  return out;
}

struct StageSetup {
  TrainStage stage;
  int steps;
  double lr;
  QuantMode qm;
  LossKind lk;
  bool masked;
  bool channel_from_spec;  // stage 3 uses the caller's spec; stage 2 AWGN
};

}  // namespace

double eval_unmasked_loss(const CodecModel& model, const std::vector<ImageTensor>& corpus,
                          const ChannelSpec& channel, std::uint64_t seed, int rounds) {
  // Deployment-path evaluation: hard quantization, channel noise, soft
  // dequantization, then the unmasked-MSE of the decoded 8-bit image.
  const int n = model.dims.n_patches();
  const int n_sym = model.dims.latent_count() / 2;
  PatchGrid grid{model.dims.patch_size, model.dims.patch_rows, model.dims.patch_cols};
  CounterRng rng(derive_seed(seed, 0xE7A1));
  double total = 0.0;
  long count = 0;
  for (int r = 0; r < rounds; ++r) {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      MaskMatrix mask = random_mask(n, rng.next_unit() * 0.7, rng);
      ImageTensor p = apply_mask(corpus[i], mask, grid);
      ChannelSample cs = draw_channel_sample(channel, channel.snr_db, n_sym, rng.next_u64(),
                                             OfdmConfig::simulation());
      LatentBlock t = encode(p, mask, model);
      QuantizedBlock qb = quantize(t);
      LatentBlock rx;
      rx.n_patches = t.n_patches;
      rx.q = t.q;
      rx.values.resize(t.values.size());
      for (std::size_t j = 0; j < qb.levels.size(); j += 2) {
        cplx x(qb.levels[j] / kSqrt10, qb.levels[j + 1] / kSqrt10);
        x += cs.effective_noise[j / 2];
        rx.values[j] = dequantize_soft(x.real() * kSqrt10);
        rx.values[j + 1] = dequantize_soft(x.imag() * kSqrt10);
      }
      ImageTensor decoded = decode(combine_redundant(rx, mask), model);
      total += loss_mse_unmasked(p, decoded, mask, grid);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

CodecModel train_staged(const std::vector<ImageTensor>& corpus, const ChannelSpec& channel,
                        const TrainConfig& cfg, TrainReport* report) {
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  const ImageTensor& first = corpus.front();
  for (const ImageTensor& img : corpus)
    if (img.height != first.height || img.width != first.width ||
        img.channels != first.channels)
      throw std::invalid_argument("train: corpus images must share one shape");

  CodecDims dims = CodecDims::for_image(first.height, first.width, first.channels);
  CodecModel model = (cfg.init == InitKind::random)
                         ? CodecModel::init_random(dims, derive_seed(cfg.seed, 0x1417), cfg.init_scale)
                         : CodecModel::init_dct(dims, &corpus, cfg.init_gain);
  PatchGrid grid{dims.patch_size, dims.patch_rows, dims.patch_cols};
  const int n = dims.n_patches();
  const int n_sym = dims.latent_count() / 2;
  const OfdmConfig ofdm = OfdmConfig::simulation();

  if (report) report->eq7_before = eval_unmasked_loss(model, corpus, channel,
                                                      derive_seed(cfg.seed, 0xBEF0));

  CounterRng rng(derive_seed(cfg.seed, 0x57A6E5));
  MaskMatrix all_ones;
  all_ones.patch_mask.assign(n, 1);
  all_ones.mask_ratio = 0.0;

  const StageSetup stages[3] = {
      {TrainStage::stage1, cfg.stage1_steps, cfg.lr, QuantMode::off, LossKind::mse, false, false},
      {TrainStage::stage2, cfg.stage2_steps, cfg.lr, QuantMode::hard, LossKind::mse_unmasked,
       true, false},
      {TrainStage::stage3, cfg.stage3_steps, cfg.lr_finetune, QuantMode::hard,
       LossKind::mse_unmasked, true, true},
  };

  long global_item = 0;
  for (const StageSetup& st : stages) {
    if (st.steps <= 0) continue;
    model.reset_optimizer();
    std::vector<int> which = trainable_param_indices(st.stage);
    double last_loss = 0.0;
    for (int step = 0; step < st.steps; ++step) {
      CodecGrads grads;
      auto ps = model.params();
      for (const Tensor* p : ps) grads.g.emplace_back(p->rows, p->cols);
      double batch_loss = 0.0;
      for (int item = 0; item < cfg.batch; ++item, ++global_item) {
        const ImageTensor& img = corpus[global_item % corpus.size()];
        MaskMatrix mask = st.masked ? random_mask(n, rng.next_unit() * 0.7, rng) : all_ones;
        ImageTensor p = st.masked ? apply_mask(img, mask, grid) : img;

        ChannelSample cs;
        if (st.qm != QuantMode::off) {
          double snr = cfg.random_snr ? (-5.0 + 20.0 * rng.next_unit()) : channel.snr_db;
          ChannelSpec spec = st.channel_from_spec ? channel : ChannelSpec::awgn(snr);
          cs = draw_channel_sample(spec, snr, n_sym, rng.next_u64(), ofdm);
        }
        batch_loss += codec_pass(model, p, mask, st.qm, st.lk, cs, &grads);
      }
      batch_loss /= cfg.batch;
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "train: loss diverged (stage " << static_cast<int>(st.stage) + 1 << ", step "
            << step << ", loss " << batch_loss << ")";
        throw std::runtime_error(msg.str());
      }
      for (auto& t : grads.g)
        for (double& x : t.v) x /= cfg.batch;
      adam_update(model, grads, which, st.lr);
      last_loss = batch_loss;
    }
    if (report) report->stage_final_loss.push_back(last_loss);
  }

  if (report) report->eq7_after = eval_unmasked_loss(model, corpus, channel,
                                                     derive_seed(cfg.seed, 0xBEF0));
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& out, double d) {
  std::uint64_t v = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void save_checkpoint(const CodecModel& model, const std::string& path,
                     const AllocatorSection* alloc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write("SJCC", 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(model.dims.patch_size));
  put_u32(out, static_cast<std::uint32_t>(model.dims.channels));
  put_u32(out, static_cast<std::uint32_t>(model.dims.patch_rows));
  put_u32(out, static_cast<std::uint32_t>(model.dims.patch_cols));
  put_u32(out, static_cast<std::uint32_t>(model.dims.d));
  put_u32(out, static_cast<std::uint32_t>(model.dims.q));
  for (const Tensor* t : model.params())
    for (double v : t->v) put_f64(out, v);
  if (alloc) {
    out.write("PALC", 4);
    out.put(static_cast<char>(alloc->mode));
    put_u32(out, static_cast<std::uint32_t>(alloc->gains.size()));
    for (double g : alloc->gains) put_f64(out, g);
  }
}

CodecModel load_checkpoint(const std::string& path, std::optional<AllocatorSection>* alloc) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SJCC", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  if (get_u32(in) != 1) throw std::runtime_error("checkpoint: unsupported version");
  CodecDims dims;
  dims.patch_size = static_cast<int>(get_u32(in));
  dims.channels = static_cast<int>(get_u32(in));
  dims.patch_rows = static_cast<int>(get_u32(in));
  dims.patch_cols = static_cast<int>(get_u32(in));
  dims.d = static_cast<int>(get_u32(in));
  dims.q = static_cast<int>(get_u32(in));
  CodecModel model = make_shell(dims);
  for (Tensor* t : model.params())
    for (double& v : t->v) v = get_f64(in);
  if (alloc) {
    alloc->reset();
    char m2[4];
    in.read(m2, 4);
    if (in && std::memcmp(m2, "PALC", 4) == 0) {
      AllocatorSection a;
      a.mode = static_cast<std::uint8_t>(in.get());
      std::uint32_t k = get_u32(in);
      a.gains.resize(k);
      for (double& g : a.gains) g = get_f64(in);
      *alloc = std::move(a);
    }
  }
  return model;
}

}  // namespace semlink
