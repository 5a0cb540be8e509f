// Scratch probe for empirical calibration while the test suite is built.
#include <cstdio>
#include <cstring>
#include <numeric>

#include "semlink/baseline.hpp"
#include "semlink/codec.hpp"
#include "semlink/corpus.hpp"
#include "semlink/metrics.hpp"
#include "semlink/pipeline.hpp"
#include "semlink/power.hpp"
#include "semlink/preprocess.hpp"

using namespace semlink;

static void probe_dog() {
  std::printf("== DoG ==\n");
  ImageTensor flat = ImageTensor::filled(64, 64, 1, 128);
  auto counts = detect_keypoints(flat, 16);
  int total = std::accumulate(counts.begin(), counts.end(), 0);
  std::printf("flat total=%d\n", total);

  ImageTensor dot = ImageTensor::filled(80, 80, 1, 0);
  for (int y = 39; y <= 41; ++y)
    for (int x = 39; x <= 41; ++x) dot.at(y, x, 0) = 255;
  counts = detect_keypoints(dot, 16);
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 5; ++c) std::printf("%3d ", counts[r * 5 + c]);
    std::printf("\n");
  }

  // 180 rotation multiset check on a corpus image
  auto corpus = make_corpus(2, 64, 3, 77);
  auto c0 = detect_keypoints(corpus[0].image, 16);
  ImageTensor rot = corpus[0].image;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      for (int c = 0; c < 3; ++c) rot.at(y, x, c) = corpus[0].image.at(63 - y, 63 - x, c);
  auto c1 = detect_keypoints(rot, 16);
  auto s0 = c0, s1 = c1;
  std::sort(s0.begin(), s0.end());
  std::sort(s1.begin(), s1.end());
  std::printf("rot180 multiset equal: %d (sum %d)\n", int(s0 == s1),
              std::accumulate(c0.begin(), c0.end(), 0));
}

static void probe_gradcheck() {
  std::printf("== gradcheck ==\n");
  CodecDims dims;
  dims.patch_size = 4;
  dims.channels = 1;
  dims.patch_rows = 2;
  dims.patch_cols = 2;
  dims.d = 8;
  dims.q = 4;
  CodecModel model = CodecModel::init_random(dims, 11, 0.2);
  // make biases nonzero too
  CounterRng rng(5);
  for (Tensor* t : model.params())
    if (t->rows == 1)
      for (double& v : t->v) v = 0.1 * rng.next_gauss();

  auto corpus = make_corpus(1, 8, 1, 3);
  ImageTensor img = corpus[0].image;
  MaskMatrix mask;
  mask.patch_mask = {1, 0, 1, 1};
  mask.mask_ratio = 0.25;
  PatchGrid grid{4, 2, 2};
  ImageTensor p = apply_mask(img, mask, grid);

  ChannelSample cs;
  cs.effective_noise.resize(dims.latent_count() / 2);
  CounterRng nrng(99);
  for (auto& z : cs.effective_noise) z = nrng.next_cgauss(0.02);

  for (int mode = 0; mode < 2; ++mode) {
    QuantMode qm = mode == 0 ? QuantMode::off : QuantMode::bypass;
    LossKind lk = mode == 0 ? LossKind::mse : LossKind::mse_unmasked;
    CodecGrads grads;
    codec_pass(model, p, mask, qm, lk, cs, &grads);
    double max_rel = 0.0;
    auto params = model.params();
    for (std::size_t ti = 0; ti < params.size(); ++ti) {
      Tensor* t = params[ti];
      for (std::size_t i = 0; i < t->v.size(); i += std::max<std::size_t>(1, t->v.size() / 7)) {
        double keep = t->v[i];
        double h = 1e-6;
        t->v[i] = keep + h;
        double lp = codec_pass(model, p, mask, qm, lk, cs, nullptr);
        t->v[i] = keep - h;
        double lm = codec_pass(model, p, mask, qm, lk, cs, nullptr);
        t->v[i] = keep;
        double fd = (lp - lm) / (2 * h);
        double an = grads.g[ti].v[i];
        double rel = std::abs(fd - an) / std::max({1e-8, std::abs(fd), std::abs(an)});
        max_rel = std::max(max_rel, rel);
      }
    }
    std::printf("mode %d max_rel %.3e\n", mode, max_rel);
  }
}

static void probe_training() {
  std::printf("== training ==\n");
  auto corpus = make_corpus(16, 64, 3, 42);
  auto images = corpus_images(corpus);
  TrainConfig tc;
  tc.seed = 1;
  TrainReport rep;
  ChannelSpec ch = ChannelSpec::awgn(10.0);

  {
    TrainConfig smoke = tc;
    smoke.init = InitKind::random;
    smoke.stage1_steps = 100; smoke.stage2_steps = 50; smoke.stage3_steps = 50;
    TrainReport srep;
    train_staged(images, ch, smoke, &srep);
    std::printf("[smoke] eq7 %.5f -> %.5f drop %.1f%%\n", srep.eq7_before, srep.eq7_after,
                100.0 * (1.0 - srep.eq7_after / srep.eq7_before));
  }

  CodecModel model = train_staged(images, ch, tc, &rep);
  std::printf("eq7 before %.5f after %.5f drop %.1f%%\n", rep.eq7_before, rep.eq7_after,
              100.0 * (1.0 - rep.eq7_after / rep.eq7_before));
  for (double l : rep.stage_final_loss) std::printf("stage loss %.5f\n", l);

  // clean-channel quality of trained model
  PatchGrid grid{16, 4, 4};
  MaskMatrix ones;
  ones.patch_mask.assign(16, 1);
  ChannelSample clean;
  double mse0 = 0;
  for (auto& img : images) {
    LatentBlock l = encode(img, ones, model);
    QuantizedBlock qb = quantize(l);
    LatentBlock dq = dequantize(qb);
    ImageTensor rec = decode(dq, model);
    mse0 += loss_mse(img, rec);
  }
  std::printf("clean quant mse %.5f psnr %.2f\n", mse0 / 16,
              10 * std::log10(1.0 / (mse0 / 16)));
  save_checkpoint(model, "/tmp/probe_model.sjcc");
}

static void probe_allocator() {
  std::printf("== allocator ==\n");
  std::optional<AllocatorSection> sec;
  CodecModel model = load_checkpoint("/tmp/probe_model.sjcc", &sec);
  auto corpus = make_corpus(16, 64, 3, 42);
  auto images = corpus_images(corpus);

  AllocatorTrainConfig ac;
  ac.steps = 400;
  ac.seed = 7;
  ChannelSpec mp = ChannelSpec::multipath(5, 5.0);
  PowerAllocator alloc = train_allocator(model, mp, images, ac);
  std::printf("gains (first 10): ");
  for (int i = 0; i < 10; ++i) std::printf("%.3f ", alloc.gains_by_rank[i]);
  std::printf("\n... last 10: ");
  for (int i = 45; i < 55; ++i) std::printf("%.3f ", alloc.gains_by_rank[i]);
  std::printf("\ntop %.4f bottom %.4f power %.9f\n", alloc.gains_by_rank.front(),
              alloc.gains_by_rank.back(), alloc.power_sum());

  {
    AllocatorSection section = alloc.to_section();
    save_checkpoint(model, "/tmp/probe_model.sjcc", &section);
  }
  ChannelSpec awgn = ChannelSpec::awgn(10.0);
  PowerAllocator alloc2 = train_allocator(model, awgn, images, ac);
  double mn = 1e9, mx = 0;
  for (double g : alloc2.gains_by_rank) {
    mn = std::min(mn, g);
    mx = std::max(mx, g);
  }
  std::printf("awgn spread %.4f%% (min %.4f max %.4f)\n", 100 * (mx - mn), mn, mx);
}

static void probe_cliff() {
  std::printf("== cliff ==\n");
  auto corpus = make_corpus(8, 64, 3, 42);
  for (double snr = -4; snr <= 16; snr += 2) {
    int ok = 0;
    double ssim_sum = 0;
    for (int i = 0; i < 8; ++i) {
      auto r = run_baseline_e2e(corpus[i].image, corpus[i].annotation,
                                ChannelSpec::awgn(snr), derive_seed(9, i));
      ok += r.ok;
      ssim_sum += r.metrics.ssim;
    }
    std::printf("snr %+5.1f ok %d/8 ssim %.3f\n", snr, ok, ssim_sum / 8);
  }
}

static void probe_e2e() {
  std::printf("== e2e ==\n");
  std::optional<AllocatorSection> sec;
  CodecModel model = load_checkpoint("/tmp/probe_model.sjcc", &sec);
  auto corpus = make_corpus(8, 64, 3, 42);

  std::printf("-- JSCC adaptive, AWGN --\n");
  for (double snr : {-5.0, 0.0, 5.0, 8.0, 10.0, 15.0}) {
    double ssim_sum = 0, pcs = 0;
    int n = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        E2eOptions o;
        o.channel = ChannelSpec::awgn(snr);
        o.seed = derive_seed(100 + s, i);
        E2eResult r = run_e2e(corpus[i].image, corpus[i].annotation, model, o);
        ssim_sum += r.metrics.ssim;
        pcs += r.metrics.psnr_cs;
        ++n;
      }
    std::printf("snr %+5.1f ssim %.3f psnr_cs %.3f\n", snr, ssim_sum / n, pcs / n);
  }

  if (sec) {
    PowerAllocator alloc = PowerAllocator::from_section(*sec);
    std::printf("-- multipath5: uniform vs learned --\n");
    for (double snr : {5.0, 10.0, 15.0, 20.0, 25.0}) {
      double pcs_u = 0, pcs_l = 0;
      int n = 0;
      for (int s = 0; s < 5; ++s)
        for (std::size_t i = 0; i < corpus.size(); ++i) {
          E2eOptions o;
          o.channel = ChannelSpec::multipath(5, snr);
          o.seed = derive_seed(200 + s, i);
          E2eResult ru = run_e2e(corpus[i].image, corpus[i].annotation, model, o);
          o.allocator_mode = AllocatorMode::learned;
          o.learned_allocator = &alloc;
          E2eResult rl = run_e2e(corpus[i].image, corpus[i].annotation, model, o);
          pcs_u += ru.metrics.psnr_cs;
          pcs_l += rl.metrics.psnr_cs;
          ++n;
        }
      std::printf("snr %+5.1f psnr_cs uniform %.4f learned %.4f margin %+.4f\n", snr,
                  pcs_u / n, pcs_l / n, (pcs_l - pcs_u) / n);
    }
  }
}

int main(int argc, char** argv) {
  if (argc < 2) {
    probe_dog();
    return 0;
  }
  if (!std::strcmp(argv[1], "dog")) probe_dog();
  if (!std::strcmp(argv[1], "grad")) probe_gradcheck();
  if (!std::strcmp(argv[1], "train")) probe_training();
  if (!std::strcmp(argv[1], "alloc")) probe_allocator();
  if (!std::strcmp(argv[1], "cliff")) probe_cliff();
  if (!std::strcmp(argv[1], "e2e")) probe_e2e();
  if (!std::strcmp(argv[1], "all")) {
    probe_dog();
    probe_gradcheck();
    probe_training();
    probe_allocator();
    probe_cliff();
  }
  return 0;
}
