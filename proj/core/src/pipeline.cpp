#include "semlink/pipeline.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "semlink/emulator.hpp"
#include "semlink/frame.hpp"

namespace semlink {

namespace {

// Channel realization seed shared by the transmitter-side rank feedback and
// the impairment path; group 0 is the (single) image of this run.
constexpr std::uint16_t kImageGroup = 0;

std::vector<double> levels_as_reals(const QuantizedBlock& qb) {
  std::vector<double> reals(qb.levels.size());
  for (std::size_t i = 0; i < reals.size(); ++i) reals[i] = qb.levels[i];
  return reals;
}

LatentBlock soft_latent_from_reals(std::span<const double> reals, int n_patches, int q) {
  LatentBlock l;
  l.n_patches = n_patches;
  l.q = q;
  l.values.resize(reals.size());
  for (std::size_t i = 0; i < reals.size(); ++i) l.values[i] = dequantize_soft(reals[i]);
  return l;
}

// Variance of the bin centers around 0.5 with equally likely levels; the
// prior for the linear-MMSE dequantizer below.
constexpr double kLatentPriorVar = (0.375 * 0.375 + 0.125 * 0.125) / 2.0;

// Post-equalization symbol noise variance -> latent (t-axis) units.
constexpr double kSymToLatentVar = 5.0 / 64.0;

// Receiver-side linear MMSE on the soft latents: each value shrinks toward
// the 0.5 midpoint by rho = var_prior / (var_prior + var_noise). Deep fades
// collapse to the prior mean instead of blowing up the logit.
void wiener_shrink(LatentBlock* latent, std::span<const double> latent_noise_var) {
  for (std::size_t i = 0; i < latent->values.size(); ++i) {
    double rho = kLatentPriorVar / (kLatentPriorVar + latent_noise_var[i]);
    latent->values[i] = 0.5 + rho * (latent->values[i] - 0.5);
  }
}

// Full mask-aware receive: soft dequantization, inverse-variance combining
// of redundant copies, then the MMSE shrink with the combined variances.
LatentBlock receive_latent(std::span<const double> rx_reals,
                           std::span<const double> per_real_var, const MaskMatrix& mask,
                           const CodecDims& dims) {
  LatentBlock soft = soft_latent_from_reals(rx_reals, dims.n_patches(), dims.q);
  LatentBlock combined = combine_redundant(soft, mask, per_real_var);

  std::vector<int> partner = redundancy_partner(mask);
  std::vector<double> var_comb(per_real_var.size(), kLatentPriorVar * 1e6);
  const int q = dims.q;
  std::vector<double> wsum(combined.values.size(), 0.0);
  for (int i = 0; i < dims.n_patches(); ++i) {
    int dst = mask.patch_mask[i] ? i : partner[i];
    if (dst < 0) continue;
    for (int j = 0; j < q; ++j)
      wsum[static_cast<std::size_t>(dst) * q + j] +=
          1.0 / std::max(per_real_var[static_cast<std::size_t>(i) * q + j], 1e-12);
  }
  for (std::size_t i = 0; i < var_comb.size(); ++i)
    if (wsum[i] > 0.0) var_comb[i] = 1.0 / wsum[i];

  wiener_shrink(&combined, var_comb);
  return combined;
}

// Simulation flavor: 64-FFT, optional power allocation, in-process channel.
E2eResult run_sim_flavor(const ImageTensor& img, const ImageTensor& p, const MaskMatrix& mask,
                         const CodecModel& model, const E2eOptions& opts) {
  const OfdmConfig cfg = OfdmConfig::simulation();
  const CodecDims& dims = model.dims;
  const int k = cfg.n_data;

  LatentBlock latent = encode(p, mask, model);
  QuantizedBlock qb = quantize(latent);
  std::vector<double> reals = levels_as_reals(qb);
  SymbolBlock stream = pair_symbols(reals);
  const int n_real = static_cast<int>(stream.size());
  const int n_slots = ((n_real + k - 1) / k) * k;
  stream.resize(n_slots, cplx{0.0, 0.0});

  ChannelRealization ch =
      realize(opts.channel, derive_seed(opts.seed, 0x6B0C, kImageGroup), cfg);

  // Rank-order feedback (shared table both ends); gains per allocator mode.
  SubchannelOrder order = order_subchannels(ch.data_response);
  PowerAllocator alloc;
  switch (opts.allocator_mode) {
    case AllocatorMode::uniform: alloc = PowerAllocator::uniform(k); break;
    case AllocatorMode::matched: alloc = PowerAllocator::matched(ch.data_response); break;
    case AllocatorMode::learned:
      if (!opts.learned_allocator || opts.learned_allocator->gains_by_rank.size() !=
                                         static_cast<std::size_t>(k))
        throw std::invalid_argument("e2e: learned allocator missing or wrong size");
      alloc = *opts.learned_allocator;
      break;
  }

  std::vector<int> placement = build_placement(n_slots, k, dims.q, order, n_real);
  SymbolBlock placed = place_stream(stream, placement);
  SymbolBlock scaled = allocate(placed, order, alloc);

  auto tx_samples = ofdm_modulate(scaled, cfg);
  CounterRng noise(derive_seed(opts.seed, 0x401E, 0));
  auto rx_samples = apply_time_domain(tx_samples, ch, noise, cfg.cp_len);

  OfdmRx rx = ofdm_demodulate(rx_samples.samples, cfg);
  CsiReport csi = ls_estimate(rx.pilots, cfg, ch.noise_variance);
  ZfResult zf = zf_detect(rx.data, csi, cfg);

  SymbolBlock descaled = invert_allocate(zf.symbols, order, alloc);
  SymbolBlock destream = unplace_stream(descaled, placement);
  destream.resize(n_real);
  std::vector<double> rx_reals = unpair_symbols(destream);

  // Post-ZF noise variance per slot from the receiver's own estimates,
  // carried through de-allocation and un-placement alongside the symbols.
  std::vector<double> per_real_var;
  {
    std::vector<double> slot_var(n_slots);
    SymbolBlock hd;
    for (int b = 0; b < cfg.band(); ++b)
      if (!cfg.is_pilot_bin(b)) hd.push_back(csi.h[b]);
    std::vector<int> rank_of = order.rank_of_bin();
    for (int i = 0; i < n_slots; ++i) {
      double hg = std::norm(hd[i % k]) * alloc.gains_by_rank[rank_of[i % k]] *
                  alloc.gains_by_rank[rank_of[i % k]];
      slot_var[i] = hg < 1e-18 ? 1e18 : ch.noise_variance / hg;
    }
    std::vector<double> unplaced(n_slots);
    for (int slot = 0; slot < n_slots; ++slot) unplaced[placement[slot]] = slot_var[slot];
    per_real_var.resize(static_cast<std::size_t>(n_real) * 2);
    for (int s = 0; s < n_real; ++s) {
      double v = unplaced[s] * kSymToLatentVar;
      per_real_var[2 * s] = v;
      per_real_var[2 * s + 1] = v;
    }
  }

  LatentBlock rx_latent = receive_latent(rx_reals, per_real_var, mask, dims);
  E2eResult res;
  res.mask = mask;
  res.mask_ratio = mask.mask_ratio;
  ImageTensor decoded = decode(rx_latent, model);

  PatchGrid grid{dims.patch_size, dims.patch_rows, dims.patch_cols};
  res.unmasked_mse = loss_mse_unmasked(p, decoded, mask, grid);
  res.reconstructed = infill_masked(decoded, mask, grid);
  (void)img;
  return res;
}

// Prototype flavor: ICP frames through the shared impairment path, either
// in-process or via the UDP emulator. Uniform allocation.
E2eResult run_frames_flavor(const ImageTensor& img, const ImageTensor& p,
                            const MaskMatrix& mask, const CodecModel& model,
                            const E2eOptions& opts) {
  const OfdmConfig cfg = OfdmConfig::prototype();
  const CodecDims& dims = model.dims;

  LatentBlock latent = encode(p, mask, model);
  QuantizedBlock qb = quantize(latent);
  std::vector<double> reals = levels_as_reals(qb);
  SymbolBlock stream = pair_symbols(reals);
  const std::size_t n_real = stream.size();

  E2eResult res;
  res.mask = mask;
  res.mask_ratio = mask.mask_ratio;

  std::unique_ptr<EmulatorClient> client;
  if (!opts.emulator_host.empty()) {
    client = std::make_unique<EmulatorClient>(opts.emulator_host,
                                              static_cast<std::uint16_t>(opts.emulator_port));
    client->configure(opts.channel, opts.seed,
                      static_cast<std::uint32_t>(derive_seed(opts.seed, 0x5E55) & 0xFFFFFFFF));
  }

  SymbolBlock rx_stream;
  std::vector<double> rx_var;
  std::uint32_t seq = 0;
  for (std::size_t off = 0; off < n_real; off += kFrameSymbolCapacity, ++seq) {
    std::size_t chunk = std::min<std::size_t>(kFrameSymbolCapacity, n_real - off);
    FrameMeta meta;
    meta.payload_type = 1;
    meta.mr_index = static_cast<std::uint8_t>(std::lround(mask.mask_ratio * 10.0));
    meta.frame_seq = static_cast<std::uint8_t>(seq);
    auto tx = build_frame(std::span<const cplx>(stream.data() + off, chunk), meta);

    std::vector<cplx> rx;
    if (client)
      rx = client->roundtrip(tx, kImageGroup, seq);
    else
      rx = impair_samples(tx, opts.channel, opts.seed, kImageGroup, seq);
    ++res.frames_sent;

    auto start = synchronize(rx, 0);
    if (!start) throw std::runtime_error("e2e: frame synchronization failed");
    ParsedFrame frame = parse_frame(std::span<const cplx>(rx).subspan(*start));
    if (frame.meta.frame_seq != meta.frame_seq)
      throw std::runtime_error("e2e: header frame_seq mismatch");

    ChannelRealization ref =
        realize(opts.channel, derive_seed(opts.seed, 0x6B0C, kImageGroup), cfg);
    CsiReport csi = ls_estimate(frame.pilots, cfg, ref.noise_variance);
    ZfResult zf = zf_detect(frame.data, csi, cfg);
    rx_stream.insert(rx_stream.end(), zf.symbols.begin(), zf.symbols.begin() + chunk);

    SymbolBlock hd;
    for (int b = 0; b < cfg.band(); ++b)
      if (!cfg.is_pilot_bin(b)) hd.push_back(csi.h[b]);
    for (std::size_t i = 0; i < chunk; ++i) {
      double h2 = std::norm(hd[i % hd.size()]);
      double v = (h2 < 1e-18 ? 1e18 : ref.noise_variance / h2) * kSymToLatentVar;
      rx_var.push_back(v);
      rx_var.push_back(v);
    }
  }

  std::vector<double> rx_reals = unpair_symbols(rx_stream);
  LatentBlock rx_latent = receive_latent(rx_reals, rx_var, mask, dims);
  ImageTensor decoded = decode(rx_latent, model);

  PatchGrid grid{dims.patch_size, dims.patch_rows, dims.patch_cols};
  res.unmasked_mse = loss_mse_unmasked(p, decoded, mask, grid);
  res.reconstructed = infill_masked(decoded, mask, grid);
  (void)img;
  return res;
}

}  // namespace

E2eResult run_e2e(const ImageTensor& img, const RegionAnnotation& ann, const CodecModel& model,
                  const E2eOptions& opts) {
  PatchGrid grid = partition_patches(img, model.dims.patch_size);
  std::vector<int> counts = detect_keypoints(img, model.dims.patch_size);
  ImportanceOrder order = build_importance_order(counts, ann, grid);

  double mr = opts.mr_override >= 0.0
                  ? opts.mr_override
                  : decide_mask_ratio(opts.channel.snr_db,
                                      ann.area_fraction(img.height, img.width));
  MaskMatrix mask = generate_mask_unchecked(order, mr);
  ImageTensor p = apply_mask(img, mask, grid);

  E2eResult res = opts.use_frames ? run_frames_flavor(img, p, mask, model, opts)
                                  : run_sim_flavor(img, p, mask, model, opts);
  res.metrics = evaluate_metrics(img, res.reconstructed, ann);
  return res;
}

BaselineE2eResult run_baseline_e2e(const ImageTensor& img, const RegionAnnotation& ann,
                                   const ChannelSpec& channel, std::uint64_t seed) {
  BaselineResult tx = transmit_baseline(img, channel, OfdmConfig::simulation(), seed);
  BaselineE2eResult res;
  res.ok = tx.ok;
  res.reconstructed = tx.image;
  res.raw_metrics = evaluate_metrics(img, tx.image, ann);
  if (tx.ok) {
    res.metrics = res.raw_metrics;
  } else {
    // Failed decodes report zero, matching how hard failures are tabulated;
    // the raw values stay available in raw_metrics.
    res.metrics = MetricsReport{};
  }
  return res;
}

}  // namespace semlink
