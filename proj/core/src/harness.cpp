#include "semlink/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>
#include <stdexcept>

#include "semlink/corpus.hpp"

namespace semlink {

void ExperimentSpec::validate() const {
  if (snr_grid.empty()) throw std::invalid_argument("spec: empty SNR grid");
  if (seeds.empty()) throw std::invalid_argument("spec: empty seed list");
  for (std::size_t i = 0; i < seeds.size(); ++i)
    for (std::size_t j = i + 1; j < seeds.size(); ++j)
      if (seeds[i] == seeds[j]) throw std::invalid_argument("spec: seeds must be distinct");
  if (scheme != "jscc" && scheme != "jscc_random_snr" && scheme != "baseline")
    throw std::invalid_argument("spec: unknown scheme " + scheme);
}

std::string result_csv_header() {
  return "scheme,channel_kind,snr_db,mr,seed,psnr_db,ssim,cs_proxy,psnr_cs,ssim_cs,status,"
         "raw_psnr_db";
}

std::string to_csv(const ResultRow& r) {
  std::ostringstream out;
  out.precision(12);
  out << r.scheme << "," << r.channel_kind << "," << r.snr_db << "," << r.mr << "," << r.seed
      << "," << r.psnr_db << "," << r.ssim << "," << r.cs_proxy << "," << r.psnr_cs << ","
      << r.ssim_cs << "," << r.status << "," << r.raw_psnr_db;
  return out.str();
}

void write_csv(const std::vector<ResultRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot write " + path);
  out << result_csv_header() << "\n";
  for (const ResultRow& r : rows) out << to_csv(r) << "\n";
}

std::map<std::string, std::string> load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: expected key=value, got '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto strip = [](std::string& s) {
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(0, 1);
      while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    };
    strip(key);
    strip(val);
    kv[key] = val;
  }
  return kv;
}

namespace {

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::istringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::istringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoull(tok));
  return out;
}

}  // namespace

ExperimentSpec spec_from_config(const std::map<std::string, std::string>& kv) {
  ExperimentSpec spec;
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto* v = get("scheme")) spec.scheme = *v;
  if (auto* v = get("channel")) spec.channel.kind = channel_kind_from_string(*v);
  if (auto* v = get("paths")) spec.channel.num_paths = std::stoi(*v);
  if (auto* v = get("tau")) spec.channel.decay = std::stod(*v);
  if (auto* v = get("snr_grid")) spec.snr_grid = parse_double_list(*v);
  if (auto* v = get("mr")) spec.mr_override = std::stod(*v);
  if (auto* v = get("seeds")) spec.seeds = parse_seed_list(*v);
  if (auto* v = get("corpus")) spec.corpus_dir = *v;
  if (auto* v = get("checkpoint")) spec.checkpoint = *v;
  if (auto* v = get("out")) spec.output_path = *v;
  if (auto* v = get("emulator_host")) spec.emulator_host = *v;
  if (auto* v = get("emulator_port")) spec.emulator_port = std::stoi(*v);
  if (auto* v = get("allocator")) spec.use_allocator = (*v == "1" || *v == "true");
  if (auto* v = get("frames")) spec.use_frames = (*v == "1" || *v == "true");
  if (auto* v = get("workers")) spec.workers = std::stoi(*v);
  return spec;
}

std::uint64_t run_seed(std::uint64_t trial_seed, std::size_t image_index) {
  return derive_seed(trial_seed, 0x1343E, image_index);
}

namespace {

struct LoadedArtifacts {
  std::vector<CorpusItem> corpus;
  CodecModel model;
  PowerAllocator allocator;
  bool has_allocator = false;
};

LoadedArtifacts load_artifacts(const ExperimentSpec& spec, bool need_model) {
  LoadedArtifacts art;
  if (spec.corpus_dir.empty()) throw std::invalid_argument("spec: corpus directory required");
  art.corpus = load_corpus(spec.corpus_dir);
  if (need_model) {
    if (spec.checkpoint.empty()) throw std::invalid_argument("spec: checkpoint required");
    std::optional<AllocatorSection> section;
    art.model = load_checkpoint(spec.checkpoint, &section);
    if (section) {
      art.allocator = PowerAllocator::from_section(*section);
      art.has_allocator = true;
    }
  }
  return art;
}

struct GridPoint {
  double snr_db;
  double mr;  // < 0 adaptive
};

// One grid point evaluated over corpus x seeds; rows in deterministic order.
std::vector<ResultRow> eval_point(const ExperimentSpec& spec, const LoadedArtifacts& art,
                                  const GridPoint& gp) {
  std::vector<ResultRow> rows;
  ChannelSpec ch = spec.channel;
  ch.snr_db = gp.snr_db;
  for (std::uint64_t trial_seed : spec.seeds) {
    for (std::size_t i = 0; i < art.corpus.size(); ++i) {
      const CorpusItem& item = art.corpus[i];
      ResultRow row;
      row.scheme = spec.scheme;
      row.channel_kind = to_string(ch.kind);
      row.snr_db = gp.snr_db;
      row.seed = trial_seed;

      if (spec.scheme == "baseline") {
        BaselineE2eResult r = run_baseline_e2e(item.image, item.annotation, ch,
                                               run_seed(trial_seed, i));
        row.mr = 0.0;
        row.status = r.ok ? "ok" : "failed";
        row.psnr_db = r.metrics.psnr_db;
        row.ssim = r.metrics.ssim;
        row.cs_proxy = r.metrics.cs_proxy;
        row.psnr_cs = r.metrics.psnr_cs;
        row.ssim_cs = r.metrics.ssim_cs;
        row.raw_psnr_db = r.raw_metrics.psnr_db;
      } else {
        E2eOptions opts;
        opts.channel = ch;
        opts.seed = run_seed(trial_seed, i);
        opts.mr_override = gp.mr;
        opts.use_frames = spec.use_frames;
        opts.emulator_host = spec.emulator_host;
        opts.emulator_port = spec.emulator_port;
        if (spec.use_allocator) {
          if (!art.has_allocator)
            throw std::runtime_error("harness: checkpoint has no allocator section");
          opts.allocator_mode = AllocatorMode::learned;
          opts.learned_allocator = &art.allocator;
        }
        E2eResult r = run_e2e(item.image, item.annotation, art.model, opts);
        row.mr = r.mask_ratio;
        row.status = "ok";
        row.psnr_db = r.metrics.psnr_db;
        row.ssim = r.metrics.ssim;
        row.cs_proxy = r.metrics.cs_proxy;
        row.psnr_cs = r.metrics.psnr_cs;
        row.ssim_cs = r.metrics.ssim_cs;
        row.raw_psnr_db = r.metrics.psnr_db;
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<ResultRow> run_grid(const ExperimentSpec& spec, const LoadedArtifacts& art,
                                const std::vector<GridPoint>& grid) {
  // Grid points fan out across async workers; every worker derives its own
  // seeds, so scheduling cannot change any value. Rows are gathered in grid
  // order, which keeps the CSV deterministic.
  std::vector<std::future<std::vector<ResultRow>>> futures;
  futures.reserve(grid.size());
  for (const GridPoint& gp : grid)
    futures.push_back(std::async(std::launch::async | std::launch::deferred,
                                 [&spec, &art, gp] { return eval_point(spec, art, gp); }));
  std::vector<ResultRow> rows;
  for (auto& f : futures) {
    auto part = f.get();
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

}  // namespace

std::vector<ResultRow> run_mr_sweep(const ExperimentSpec& spec) {
  spec.validate();
  LoadedArtifacts art = load_artifacts(spec, true);
  std::vector<GridPoint> grid;
  for (double snr : spec.snr_grid)
    for (int m = 0; m <= 8; ++m) grid.push_back({snr, m / 10.0});
  auto rows = run_grid(spec, art, grid);
  write_csv(rows, spec.output_path);
  return rows;
}

std::vector<ResultRow> run_snr_sweep(const ExperimentSpec& spec) {
  spec.validate();
  LoadedArtifacts art = load_artifacts(spec, spec.scheme != "baseline");
  std::vector<GridPoint> grid;
  for (double snr : spec.snr_grid) grid.push_back({snr, spec.mr_override});
  auto rows = run_grid(spec, art, grid);
  write_csv(rows, spec.output_path);
  return rows;
}

std::vector<PowerProfileRow> run_power_profile(const ExperimentSpec& spec) {
  spec.validate();
  LoadedArtifacts art = load_artifacts(spec, true);
  const OfdmConfig cfg = OfdmConfig::simulation();
  const int k = cfg.n_data;
  const CodecDims& dims = art.model.dims;

  // Representative realization from the first trial seed.
  ChannelSpec ch = spec.channel;
  ch.snr_db = spec.snr_grid.front();
  ChannelRealization real = realize(ch, derive_seed(spec.seeds.front(), 0x6B0C, 0), cfg);
  SubchannelOrder order = order_subchannels(real.data_response);
  std::vector<int> rank_of = order.rank_of_bin();

  std::vector<PowerProfileRow> rows;
  PatchGrid grid{dims.patch_size, dims.patch_rows, dims.patch_cols};

  for (AllocatorMode mode :
       {AllocatorMode::uniform, AllocatorMode::matched, AllocatorMode::learned}) {
    PowerAllocator alloc;
    const char* name = "uniform";
    if (mode == AllocatorMode::uniform) {
      alloc = PowerAllocator::uniform(k);
    } else if (mode == AllocatorMode::matched) {
      alloc = PowerAllocator::matched(real.data_response);
      name = "matched";
    } else {
      if (!art.has_allocator)
        throw std::runtime_error("harness: checkpoint has no allocator section");
      alloc = art.allocator;
      name = "learned";
    }

    std::vector<double> acc(k, 0.0);
    long blocks = 0;
    MaskMatrix all_ones;
    all_ones.patch_mask.assign(dims.n_patches(), 1);
    for (const CorpusItem& item : art.corpus) {
      LatentBlock latent = encode(apply_mask(item.image, all_ones, grid), all_ones, art.model);
      QuantizedBlock qb = quantize(latent);
      std::vector<double> reals(qb.levels.size());
      for (std::size_t i = 0; i < reals.size(); ++i) reals[i] = qb.levels[i];
      SymbolBlock stream = pair_symbols(reals);
      const int n_real = static_cast<int>(stream.size());
      const int n_slots = ((n_real + k - 1) / k) * k;
      stream.resize(n_slots, cplx{0.0, 0.0});
      std::vector<int> placement = build_placement(n_slots, k, dims.q, order, n_real);
      SymbolBlock tx = allocate(place_stream(stream, placement), order, alloc);
      for (int i = 0; i < n_slots; ++i) acc[i % k] += std::norm(tx[i]);
      blocks += n_slots / k;
    }
    for (int bin = 0; bin < k; ++bin)
      rows.push_back({name, bin, rank_of[bin], acc[bin] / static_cast<double>(blocks)});
  }
  write_power_profile_csv(rows, spec.output_path);
  return rows;
}

void write_power_profile_csv(const std::vector<PowerProfileRow>& rows,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot write " + path);
  out << "mode,subcarrier_index,rank,mean_power\n";
  out.precision(12);
  for (const auto& r : rows)
    out << r.mode << "," << r.subcarrier_index << "," << r.rank << "," << r.mean_power << "\n";
}

double mean_metric(const std::vector<ResultRow>& rows, double snr_db, double mr,
                   double ResultRow::*field) {
  double total = 0.0;
  long n = 0;
  for (const ResultRow& r : rows) {
    if (std::abs(r.snr_db - snr_db) > 1e-9) continue;
    if (mr >= 0.0 && std::abs(r.mr - mr) > 1e-9) continue;
    total += r.*field;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mean_metric: no rows match");
  return total / static_cast<double>(n);
}

}  // namespace semlink
