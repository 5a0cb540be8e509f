#include "semlink/power.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "semlink/preprocess.hpp"
#include "semlink/rng.hpp"

namespace semlink {

std::vector<int> SubchannelOrder::rank_of_bin() const {
  std::vector<int> inv(ranks.size());
  for (std::size_t r = 0; r < ranks.size(); ++r) inv[ranks[r]] = static_cast<int>(r);
  return inv;
}

SubchannelOrder order_subchannels(std::span<const cplx> data_bin_response) {
  if (data_bin_response.empty()) throw std::invalid_argument("order: empty CSI");
  SubchannelOrder o;
  o.ranks.resize(data_bin_response.size());
  std::iota(o.ranks.begin(), o.ranks.end(), 0);
  std::stable_sort(o.ranks.begin(), o.ranks.end(), [&](int a, int b) {
    return std::norm(data_bin_response[a]) > std::norm(data_bin_response[b]);
  });
  return o;
}

SubchannelOrder order_subchannels(const CsiReport& csi, const OfdmConfig& cfg) {
  SymbolBlock hd;
  for (int b = 0; b < cfg.band(); ++b)
    if (!cfg.is_pilot_bin(b)) hd.push_back(csi.h[b]);
  return order_subchannels(hd);
}

PowerAllocator PowerAllocator::uniform(int k) {
  PowerAllocator a;
  a.mode = AllocatorMode::uniform;
  a.gains_by_rank.assign(k, 1.0);
  return a;
}

PowerAllocator PowerAllocator::matched(std::span<const cplx> data_bin_response) {
  SubchannelOrder order = order_subchannels(data_bin_response);
  PowerAllocator a;
  a.mode = AllocatorMode::matched;
  a.gains_by_rank.resize(order.ranks.size());
  for (std::size_t r = 0; r < order.ranks.size(); ++r)
    a.gains_by_rank[r] = std::sqrt(std::abs(data_bin_response[order.ranks[r]]));
  a.normalize_power();
  return a;
}

double PowerAllocator::power_sum() const {
  double s = 0.0;
  for (double g : gains_by_rank) s += g * g;
  return s / static_cast<double>(gains_by_rank.size());
}

void PowerAllocator::normalize_power() {
  double p = power_sum();
  if (p <= 0.0) throw std::runtime_error("allocator: zero total power");
  double c = 1.0 / std::sqrt(p);
  for (double& g : gains_by_rank) g *= c;
}

AllocatorSection PowerAllocator::to_section() const {
  AllocatorSection s;
  s.mode = static_cast<std::uint8_t>(mode);
  s.gains = gains_by_rank;
  return s;
}

PowerAllocator PowerAllocator::from_section(const AllocatorSection& s) {
  PowerAllocator a;
  a.mode = static_cast<AllocatorMode>(s.mode);
  a.gains_by_rank = s.gains;
  return a;
}

namespace {

void check_alloc(const SubchannelOrder& order, const PowerAllocator& alloc) {
  if (order.ranks.size() != alloc.gains_by_rank.size())
    throw std::invalid_argument("allocate: order/gains size mismatch");
  if (std::abs(alloc.power_sum() - 1.0) > 1e-9)
    throw std::invalid_argument("allocate: power constraint violated");
}

}  // namespace

SymbolBlock allocate(std::span<const cplx> x, const SubchannelOrder& order,
                     const PowerAllocator& alloc) {
  check_alloc(order, alloc);
  std::vector<int> rank_of = order.rank_of_bin();
  const std::size_t k = order.ranks.size();
  SymbolBlock out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = x[i] * alloc.gains_by_rank[rank_of[i % k]];
  return out;
}

SymbolBlock invert_allocate(std::span<const cplx> y, const SubchannelOrder& order,
                            const PowerAllocator& alloc) {
  check_alloc(order, alloc);
  std::vector<int> rank_of = order.rank_of_bin();
  const std::size_t k = order.ranks.size();
  SymbolBlock out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    out[i] = y[i] / alloc.gains_by_rank[rank_of[i % k]];
  return out;
}

std::vector<int> build_placement(int n_stream, int k_data, int q_reals_per_patch,
                                 const SubchannelOrder& order, int n_real) {
  if (n_stream % k_data != 0)
    throw std::invalid_argument("placement: stream must fill whole OFDM symbols");
  if (n_real < 0) n_real = n_stream;
  const int q_complex = q_reals_per_patch / 2;
  std::vector<int> placement(n_stream, 0);
  std::vector<int> block(k_data);
  auto key = [&](int s) { return s < n_real ? s % q_complex : q_complex; };
  for (int b = 0; b < n_stream / k_data; ++b) {
    std::iota(block.begin(), block.end(), b * k_data);
    // Significance = complex-symbol index within the patch; lower is coarser.
    std::stable_sort(block.begin(), block.end(),
                     [&](int a, int c) { return key(a) < key(c); });
    for (int r = 0; r < k_data; ++r)
      placement[static_cast<std::size_t>(b) * k_data + order.ranks[r]] = block[r];
  }
  return placement;
}

std::vector<int> natural_placement(int n_stream) {
  std::vector<int> placement(n_stream);
  std::iota(placement.begin(), placement.end(), 0);
  return placement;
}

bool flat_response(std::span<const cplx> data_bin_response, double rel_tol) {
  double lo = 1e300, hi = 0.0;
  for (const cplx& h : data_bin_response) {
    double e = std::norm(h);
    lo = std::min(lo, e);
    hi = std::max(hi, e);
  }
  return hi <= lo * (1.0 + rel_tol);
}

SymbolBlock place_stream(std::span<const cplx> x, std::span<const int> placement) {
  if (x.size() != placement.size()) throw std::invalid_argument("placement size mismatch");
  SymbolBlock out(x.size());
  for (std::size_t slot = 0; slot < x.size(); ++slot) out[slot] = x[placement[slot]];
  return out;
}

SymbolBlock unplace_stream(std::span<const cplx> y, std::span<const int> placement) {
  if (y.size() != placement.size()) throw std::invalid_argument("placement size mismatch");
  SymbolBlock out(y.size());
  for (std::size_t slot = 0; slot < y.size(); ++slot) out[placement[slot]] = y[slot];
  return out;
}

namespace {

// Isotonic (non-increasing) projection via pool adjacent violators.
void project_non_increasing(std::vector<double>& g) {
  const std::size_t n = g.size();
  std::vector<double> value;
  std::vector<std::size_t> weight;
  for (std::size_t i = 0; i < n; ++i) {
    value.push_back(g[i]);
    weight.push_back(1);
    while (value.size() > 1 && value[value.size() - 2] < value.back()) {
      double merged = (value[value.size() - 2] * weight[weight.size() - 2] +
                       value.back() * weight.back()) /
                      static_cast<double>(weight[weight.size() - 2] + weight.back());
      weight[weight.size() - 2] += weight.back();
      value[value.size() - 2] = merged;
      value.pop_back();
      weight.pop_back();
    }
  }
  std::size_t idx = 0;
  for (std::size_t b = 0; b < value.size(); ++b)
    for (std::size_t w = 0; w < weight[b]; ++w) g[idx++] = std::max(value[b], 1e-6);
}

}  // namespace

PowerAllocator train_allocator(const CodecModel& model, const ChannelSpec& spec,
                               const std::vector<ImageTensor>& corpus,
                               const AllocatorTrainConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("train_allocator: empty corpus");
  const CodecDims& dims = model.dims;
  const OfdmConfig ofdm = OfdmConfig::simulation();
  const int k = ofdm.n_data;
  const int n_latent_sym = dims.latent_count() / 2;
  // Whole OFDM symbols; the tail slots carry zero padding.
  const int n_sym = ((n_latent_sym + k - 1) / k) * k;
  PatchGrid grid{dims.patch_size, dims.patch_rows, dims.patch_cols};

  PowerAllocator alloc = PowerAllocator::uniform(k);
  alloc.mode = AllocatorMode::learned;

  CounterRng rng(derive_seed(cfg.seed, 0xA110C));

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<double> dgains(k, 0.0);
    double batch_loss = 0.0;
    for (int item = 0; item < cfg.batch; ++item) {
      const ImageTensor& img = corpus[(static_cast<std::size_t>(step) * cfg.batch + item) %
                                      corpus.size()];
      MaskMatrix mask;
      mask.mask_ratio = rng.next_unit() * 0.7;
      {
        // Random mask, same scheme as codec stage 2.
        const int n = dims.n_patches();
        mask.patch_mask.assign(n, 1);
        int zeros = static_cast<int>(std::floor(mask.mask_ratio * n));
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = n - 1; i > 0; --i) {
          int j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
          std::swap(idx[i], idx[j]);
        }
        for (int i = 0; i < zeros; ++i) mask.patch_mask[idx[i]] = 0;
      }
      ImageTensor p = apply_mask(img, mask, grid);

      ChannelRealization ch = realize(spec, rng.next_u64(), ofdm);
      SubchannelOrder order = order_subchannels(ch.data_response);
      std::vector<int> rank_of = order.rank_of_bin();

      // Priorities apply only when subchannel energies differ; on a flat
      // response the slot loading is rotated per item so expectation stays
      // symmetric across ranks.
      std::vector<int> placement;
      if (flat_response(ch.data_response)) {
        placement = natural_placement(n_sym);
        int rot = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(k));
        for (int slot = 0; slot < n_sym; ++slot) {
          int block = slot / k;
          placement[slot] = block * k + (slot % k + rot) % k;
        }
      } else {
        placement = build_placement(n_sym, k, dims.q, order, n_latent_sym);
      }

      // Frozen draw of effective noise per latent symbol, including the
      // placement and the current gains.
      CounterRng noise(rng.next_u64());
      ChannelSample cs;
      cs.effective_noise.assign(n_latent_sym, cplx{0.0, 0.0});
      cs.rank_of_symbol.assign(n_latent_sym, 0);
      for (int slot = 0; slot < n_sym; ++slot) {
        cplx z = noise.next_cgauss(ch.noise_variance);
        int stream = placement[slot];
        if (stream >= n_latent_sym) continue;  // padding slot
        const cplx& h = ch.data_response[slot % k];
        int r = rank_of[slot % k];
        cs.rank_of_symbol[stream] = r;
        double g = alloc.gains_by_rank[r];
        cs.effective_noise[stream] =
            (std::abs(h) < 1e-12) ? cplx{0.0, 0.0} : z / (h * g);
      }

      batch_loss += codec_pass(model, p, mask, QuantMode::hard, LossKind::mse_unmasked, cs,
                               nullptr, alloc.gains_by_rank, &dgains);
    }
    batch_loss /= cfg.batch;
    if (!std::isfinite(batch_loss))
      throw std::runtime_error("train_allocator: loss diverged");

    // Decayed gradient descent; the normalized direction keeps the step
    // budget fixed while the decay stops late-stage random walking.
    double norm = 0.0;
    for (int r = 0; r < k; ++r) norm += (dgains[r] / cfg.batch) * (dgains[r] / cfg.batch);
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      double lr_t = cfg.lr / std::sqrt(1.0 + step / 50.0);
      for (int r = 0; r < k; ++r)
        alloc.gains_by_rank[r] -= lr_t * (dgains[r] / cfg.batch) / norm;
    }
    // Projection back onto the constraint set after every update.
    project_non_increasing(alloc.gains_by_rank);
    alloc.normalize_power();
  }
  return alloc;
}

}  // namespace semlink
