// Command-line driver: training, experiment sweeps, end-to-end transmission,
// the UDP channel emulator, and frame packing utilities.

#include <CLI11.hpp>
#include <csignal>
#include <iostream>

#include "semlink/corpus.hpp"
#include "semlink/emulator.hpp"
#include "semlink/frame.hpp"
#include "semlink/harness.hpp"
#include "semlink/pipeline.hpp"
#include "semlink/power.hpp"

using namespace semlink;

namespace {

ChannelSpec make_channel(const std::string& kind, int paths, double tau, double snr) {
  ChannelSpec spec;
  spec.kind = channel_kind_from_string(kind);
  spec.num_paths = paths;
  spec.decay = tau;
  spec.snr_db = snr;
  return spec;
}

void add_spec_options(CLI::App* cmd, ExperimentSpec* spec, std::string* config_path,
                      std::string* channel_kind, std::string* snr_list,
                      std::string* seed_list) {
  cmd->add_option("--config", *config_path, "key=value config file (flags override)");
  cmd->add_option("--corpus", spec->corpus_dir, "corpus directory (image_*.ppm + .txt)");
  cmd->add_option("--checkpoint", spec->checkpoint, "codec checkpoint path");
  cmd->add_option("--out", spec->output_path, "output CSV path");
  cmd->add_option("--scheme", spec->scheme, "jscc | jscc_random_snr | baseline");
  cmd->add_option("--channel", *channel_kind, "awgn | rayleigh | multipath");
  cmd->add_option("--paths", spec->channel.num_paths, "multipath path count");
  cmd->add_option("--tau", spec->channel.decay, "exponential PDP decay constant");
  cmd->add_option("--snr-grid", *snr_list, "comma-separated SNR grid in dB");
  cmd->add_option("--seeds", *seed_list, "comma-separated trial seeds");
  cmd->add_option("--mr", spec->mr_override, "mask-ratio override (default adaptive)");
  cmd->add_flag("--allocator", spec->use_allocator, "use the learned power allocator");
  cmd->add_flag("--frames", spec->use_frames, "prototype framing instead of bare OFDM");
  cmd->add_option("--emulator-host", spec->emulator_host, "UDP emulator host");
  cmd->add_option("--emulator-port", spec->emulator_port, "UDP emulator port");
  cmd->add_option("--workers", spec->workers, "parallel grid workers");
}

ExperimentSpec finish_spec(const std::string& config_path, ExperimentSpec cli_spec,
                           const std::string& channel_kind, const std::string& snr_list,
                           const std::string& seed_list) {
  ExperimentSpec spec;
  if (!config_path.empty()) spec = spec_from_config(load_config(config_path));
  // Non-default CLI values override the file.
  ExperimentSpec defaults;
  auto pick_str = [](const std::string& cli, const std::string& def, std::string& dst) {
    if (cli != def) dst = cli;
  };
  pick_str(cli_spec.corpus_dir, defaults.corpus_dir, spec.corpus_dir);
  pick_str(cli_spec.checkpoint, defaults.checkpoint, spec.checkpoint);
  pick_str(cli_spec.output_path, defaults.output_path, spec.output_path);
  pick_str(cli_spec.scheme, defaults.scheme, spec.scheme);
  pick_str(cli_spec.emulator_host, defaults.emulator_host, spec.emulator_host);
  if (cli_spec.emulator_port != defaults.emulator_port)
    spec.emulator_port = cli_spec.emulator_port;
  if (cli_spec.channel.num_paths != defaults.channel.num_paths)
    spec.channel.num_paths = cli_spec.channel.num_paths;
  if (cli_spec.channel.decay != defaults.channel.decay)
    spec.channel.decay = cli_spec.channel.decay;
  if (cli_spec.mr_override != defaults.mr_override) spec.mr_override = cli_spec.mr_override;
  if (cli_spec.use_allocator) spec.use_allocator = true;
  if (cli_spec.use_frames) spec.use_frames = true;
  if (cli_spec.workers != defaults.workers) spec.workers = cli_spec.workers;
  if (!channel_kind.empty()) spec.channel.kind = channel_kind_from_string(channel_kind);
  if (!snr_list.empty()) {
    spec.snr_grid.clear();
    std::istringstream ss(snr_list);
    std::string tok;
    while (std::getline(ss, tok, ',')) spec.snr_grid.push_back(std::stod(tok));
  }
  if (!seed_list.empty()) {
    spec.seeds.clear();
    std::istringstream ss(seed_list);
    std::string tok;
    while (std::getline(ss, tok, ',')) spec.seeds.push_back(std::stoull(tok));
  }
  return spec;
}

volatile std::sig_atomic_t g_interrupted = 0;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semlink: adaptive semantic image transmission testbench"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "staged codec training (+ power allocator)");
  std::string train_corpus, train_out = "codec.sjcc", train_channel = "awgn";
  std::uint64_t train_seed = 1;
  double train_snr = 10.0;
  bool random_snr = false, with_allocator = false;
  TrainConfig tc;
  int alloc_steps = 400, alloc_paths = 5;
  double alloc_snr = 10.0;
  train_cmd->add_option("--corpus", train_corpus, "corpus directory")->required();
  train_cmd->add_option("--out", train_out, "checkpoint output path");
  train_cmd->add_option("--seed", train_seed, "training seed");
  train_cmd->add_option("--snr", train_snr, "training SNR in dB");
  train_cmd->add_flag("--random-snr", random_snr, "sample SNR uniformly from [-5,15] dB");
  train_cmd->add_option("--channel", train_channel, "stage-3 channel kind");
  train_cmd->add_option("--stage1-steps", tc.stage1_steps, "stage 1 steps");
  train_cmd->add_option("--stage2-steps", tc.stage2_steps, "stage 2 steps");
  train_cmd->add_option("--stage3-steps", tc.stage3_steps, "stage 3 steps");
  train_cmd->add_option("--batch", tc.batch, "batch size");
  train_cmd->add_option("--lr", tc.lr, "Adam learning rate");
  train_cmd->add_option("--lr-finetune", tc.lr_finetune, "stage-3 learning rate");
  train_cmd->add_option("--init-gain", tc.init_gain, "latent standardization gain");
  train_cmd->add_flag("--train-allocator", with_allocator, "also train CSI power gains");
  train_cmd->add_option("--alloc-steps", alloc_steps, "allocator training steps");
  train_cmd->add_option("--alloc-paths", alloc_paths, "allocator channel path count");
  train_cmd->add_option("--alloc-snr", alloc_snr, "allocator training SNR in dB");

  // ---- sweeps ----
  ExperimentSpec mr_spec, snr_spec, pp_spec;
  std::string mr_cfg, snr_cfg, pp_cfg;
  std::string mr_ch, snr_ch, pp_ch, mr_snrs, snr_snrs, pp_snrs, mr_seeds, snr_seeds, pp_seeds;
  auto* mr_cmd = app.add_subcommand("sweep-mr", "metrics versus mask ratio");
  add_spec_options(mr_cmd, &mr_spec, &mr_cfg, &mr_ch, &mr_snrs, &mr_seeds);
  auto* snr_cmd = app.add_subcommand("sweep-snr", "metrics versus SNR");
  add_spec_options(snr_cmd, &snr_spec, &snr_cfg, &snr_ch, &snr_snrs, &snr_seeds);
  auto* pp_cmd = app.add_subcommand("power-profile", "per-subchannel transmit power");
  add_spec_options(pp_cmd, &pp_spec, &pp_cfg, &pp_ch, &pp_snrs, &pp_seeds);

  // ---- e2e ----
  auto* e2e_cmd = app.add_subcommand("e2e", "single-image end-to-end transmission");
  std::string e2e_image, e2e_ann, e2e_ckpt, e2e_out = "reconstructed.ppm";
  std::string e2e_channel = "awgn", e2e_emu_host;
  int e2e_paths = 1, e2e_emu_port = 0;
  double e2e_tau = 1.0, e2e_snr = 10.0, e2e_mr = -1.0;
  std::uint64_t e2e_seed = 1;
  bool e2e_frames = false, e2e_alloc = false;
  e2e_cmd->add_option("--image", e2e_image, "input PPM/PGM image")->required();
  e2e_cmd->add_option("--annotation", e2e_ann, "box annotation file");
  e2e_cmd->add_option("--checkpoint", e2e_ckpt, "codec checkpoint")->required();
  e2e_cmd->add_option("--out", e2e_out, "reconstructed image path");
  e2e_cmd->add_option("--channel", e2e_channel, "awgn | rayleigh | multipath");
  e2e_cmd->add_option("--paths", e2e_paths, "multipath path count");
  e2e_cmd->add_option("--tau", e2e_tau, "PDP decay");
  e2e_cmd->add_option("--snr", e2e_snr, "channel SNR in dB");
  e2e_cmd->add_option("--mr", e2e_mr, "mask-ratio override");
  e2e_cmd->add_option("--seed", e2e_seed, "run seed");
  e2e_cmd->add_flag("--frames", e2e_frames, "prototype framing");
  e2e_cmd->add_flag("--allocator", e2e_alloc, "use learned power allocation");
  e2e_cmd->add_option("--emulator-host", e2e_emu_host, "send through this UDP emulator");
  e2e_cmd->add_option("--emulator-port", e2e_emu_port, "emulator port");

  // ---- emulator ----
  auto* serve_cmd = app.add_subcommand("emulate-serve", "run the UDP channel emulator");
  std::string serve_bind = "0.0.0.0", serve_channel = "awgn";
  int serve_port = 9750, serve_paths = 1;
  double serve_tau = 1.0, serve_snr = 10.0;
  std::uint64_t serve_seed = 1;
  serve_cmd->add_option("--bind", serve_bind, "bind address");
  serve_cmd->add_option("--port", serve_port, "UDP port");
  serve_cmd->add_option("--channel", serve_channel, "default channel kind");
  serve_cmd->add_option("--paths", serve_paths, "default path count");
  serve_cmd->add_option("--tau", serve_tau, "default PDP decay");
  serve_cmd->add_option("--snr", serve_snr, "default SNR in dB");
  serve_cmd->add_option("--seed", serve_seed, "default session seed");

  auto* client_cmd = app.add_subcommand("emulate-client", "send an .iq file through the emulator");
  std::string cl_host = "127.0.0.1", cl_in, cl_out, cl_channel = "awgn";
  int cl_port = 9750, cl_paths = 1;
  double cl_tau = 1.0, cl_snr = 10.0;
  std::uint64_t cl_seed = 1;
  client_cmd->add_option("--host", cl_host, "emulator host");
  client_cmd->add_option("--port", cl_port, "emulator port");
  client_cmd->add_option("--in", cl_in, "input .iq file")->required();
  client_cmd->add_option("--out", cl_out, "output .iq file")->required();
  client_cmd->add_option("--channel", cl_channel, "channel kind for CONFIG");
  client_cmd->add_option("--paths", cl_paths, "path count");
  client_cmd->add_option("--tau", cl_tau, "PDP decay");
  client_cmd->add_option("--snr", cl_snr, "SNR in dB");
  client_cmd->add_option("--seed", cl_seed, "session seed");

  // ---- frame utilities ----
  auto* pack_cmd = app.add_subcommand("frame-pack", "pack modulation symbols into ICP frames");
  std::string pack_in, pack_out;
  int pack_type = 1, pack_mr = 0;
  pack_cmd->add_option("--in", pack_in, "input .iq symbol file")->required();
  pack_cmd->add_option("--out", pack_out, "output .iq sample file")->required();
  pack_cmd->add_option("--payload-type", pack_type, "header payload type (4 bits)");
  pack_cmd->add_option("--mr-index", pack_mr, "header MR index (tenths)");

  auto* parse_cmd = app.add_subcommand("frame-parse", "synchronize and unpack ICP frames");
  std::string parse_in, parse_out;
  parse_cmd->add_option("--in", parse_in, "input .iq sample file")->required();
  parse_cmd->add_option("--out", parse_out, "output .iq symbol file")->required();

  // ---- corpus generator ----
  auto* gen_cmd = app.add_subcommand("gen-corpus", "write a synthetic test corpus");
  std::string gen_dir = "corpus";
  int gen_count = 16, gen_size = 64;
  std::uint64_t gen_seed = 42;
  gen_cmd->add_option("--out", gen_dir, "output directory");
  gen_cmd->add_option("--count", gen_count, "number of images");
  gen_cmd->add_option("--size", gen_size, "image side length (multiple of 16)");
  gen_cmd->add_option("--seed", gen_seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      auto corpus = load_corpus(train_corpus);
      auto images = corpus_images(corpus);
      tc.seed = train_seed;
      tc.random_snr = random_snr;
      ChannelSpec ch = make_channel(train_channel, 3, 1.0, train_snr);
      TrainReport report;
      CodecModel model = train_staged(images, ch, tc, &report);
      std::cout << "eq7 before " << report.eq7_before << " after " << report.eq7_after << "\n";
      if (with_allocator) {
        AllocatorTrainConfig ac;
        ac.steps = alloc_steps;
        ac.seed = derive_seed(train_seed, 0xA110C);
        ChannelSpec mp = ChannelSpec::multipath(alloc_paths, alloc_snr);
        PowerAllocator alloc = train_allocator(model, mp, images, ac);
        AllocatorSection section = alloc.to_section();
        save_checkpoint(model, train_out, &section);
        std::cout << "checkpoint with allocator -> " << train_out << "\n";
      } else {
        save_checkpoint(model, train_out);
        std::cout << "checkpoint -> " << train_out << "\n";
      }
    } else if (*mr_cmd) {
      auto spec = finish_spec(mr_cfg, mr_spec, mr_ch, mr_snrs, mr_seeds);
      auto rows = run_mr_sweep(spec);
      std::cout << rows.size() << " rows -> " << spec.output_path << "\n";
    } else if (*snr_cmd) {
      auto spec = finish_spec(snr_cfg, snr_spec, snr_ch, snr_snrs, snr_seeds);
      auto rows = run_snr_sweep(spec);
      std::cout << rows.size() << " rows -> " << spec.output_path << "\n";
    } else if (*pp_cmd) {
      auto spec = finish_spec(pp_cfg, pp_spec, pp_ch, pp_snrs, pp_seeds);
      auto rows = run_power_profile(spec);
      std::cout << rows.size() << " rows -> " << spec.output_path << "\n";
    } else if (*e2e_cmd) {
      ImageTensor img = read_pnm(e2e_image);
      RegionAnnotation ann;
      if (!e2e_ann.empty()) {
        ann = read_annotation(e2e_ann);
        validate_annotation(ann, img);
      }
      std::optional<AllocatorSection> section;
      CodecModel model = load_checkpoint(e2e_ckpt, &section);
      PowerAllocator alloc;
      E2eOptions opts;
      opts.channel = make_channel(e2e_channel, e2e_paths, e2e_tau, e2e_snr);
      opts.seed = e2e_seed;
      opts.mr_override = e2e_mr;
      opts.use_frames = e2e_frames;
      opts.emulator_host = e2e_emu_host;
      opts.emulator_port = e2e_emu_port;
      if (e2e_alloc) {
        if (!section) throw std::runtime_error("checkpoint has no allocator section");
        alloc = PowerAllocator::from_section(*section);
        opts.allocator_mode = AllocatorMode::learned;
        opts.learned_allocator = &alloc;
      }
      E2eResult res = run_e2e(img, ann, model, opts);
      write_pnm(res.reconstructed, e2e_out);
      std::cout << "mr " << res.mask_ratio << " psnr " << res.metrics.psnr_db << " ssim "
                << res.metrics.ssim << " cs " << res.metrics.cs_proxy << " psnr_cs "
                << res.metrics.psnr_cs << " ssim_cs " << res.metrics.ssim_cs << "\n";
      std::cout << "reconstruction -> " << e2e_out << "\n";
    } else if (*serve_cmd) {
      ChannelSpec ch = make_channel(serve_channel, serve_paths, serve_tau, serve_snr);
      ChannelEmulator emu(ch, serve_seed);
      std::cout << "emulator listening on " << serve_bind << ":" << serve_port << "\n";
      emu.run(serve_bind, static_cast<std::uint16_t>(serve_port));
    } else if (*client_cmd) {
      auto samples = read_iq_file(cl_in);
      EmulatorClient client(cl_host, static_cast<std::uint16_t>(cl_port));
      ChannelSpec ch = make_channel(cl_channel, cl_paths, cl_tau, cl_snr);
      client.configure(ch, cl_seed, 1);
      auto rx = client.roundtrip(samples, 0, 1);
      write_iq_file(cl_out, rx);
      std::cout << rx.size() << " samples -> " << cl_out << "\n";
    } else if (*pack_cmd) {
      auto symbols = read_iq_file(pack_in);
      std::vector<cplx> out;
      std::uint8_t seq = 0;
      for (std::size_t off = 0; off < symbols.size(); off += kFrameSymbolCapacity, ++seq) {
        std::size_t chunk = std::min<std::size_t>(kFrameSymbolCapacity, symbols.size() - off);
        FrameMeta meta;
        meta.payload_type = static_cast<std::uint8_t>(pack_type);
        meta.mr_index = static_cast<std::uint8_t>(pack_mr);
        meta.frame_seq = seq;
        auto frame = build_frame({symbols.data() + off, chunk}, meta);
        out.insert(out.end(), frame.begin(), frame.end());
      }
      write_iq_file(pack_out, out);
      std::cout << static_cast<int>(seq) << " frames, " << out.size() << " samples -> "
                << pack_out << "\n";
    } else if (*parse_cmd) {
      auto samples = read_iq_file(parse_in);
      std::vector<cplx> symbols;
      std::span<const cplx> rest(samples);
      int n = 0;
      while (rest.size() >= kFrameSamples) {
        auto start = synchronize(rest, rest.size() - kFrameSamples);
        if (!start) break;
        ParsedFrame f = parse_frame(rest.subspan(*start));
        std::cout << "frame " << n++ << ": payload_type " << int(f.meta.payload_type)
                  << " mr_index " << int(f.meta.mr_index) << " frame_seq "
                  << int(f.meta.frame_seq) << "\n";
        symbols.insert(symbols.end(), f.data.begin(), f.data.end());
        rest = rest.subspan(*start + kFrameSamples);
      }
      write_iq_file(parse_out, symbols);
      std::cout << n << " frames, " << symbols.size() << " symbols -> " << parse_out << "\n";
    } else if (*gen_cmd) {
      auto corpus = make_corpus(gen_count, gen_size, 3, gen_seed);
      write_corpus(corpus, gen_dir);
      std::cout << gen_count << " images -> " << gen_dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
