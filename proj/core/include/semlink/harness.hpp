#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "semlink/pipeline.hpp"

namespace semlink {

struct ExperimentSpec {
  std::string scheme = "jscc";  // jscc | jscc_random_snr | baseline
  ChannelSpec channel = ChannelSpec::awgn(10.0);
  std::vector<double> snr_grid = {-5, 0, 5, 10, 15};
  double mr_override = -1.0;  // adaptive when negative
  std::vector<std::uint64_t> seeds = {1};
  std::string corpus_dir;
  std::string checkpoint;
  std::string emulator_host;
  int emulator_port = 0;
  std::string output_path = "results.csv";
  bool use_allocator = false;
  bool use_frames = false;
  int workers = 4;

  void validate() const;
};

struct ResultRow {
  std::string scheme;
  std::string channel_kind;
  double snr_db = 0.0;
  double mr = 0.0;
  std::uint64_t seed = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double cs_proxy = 0.0;
  double psnr_cs = 0.0;
  double ssim_cs = 0.0;
  std::string status = "ok";
  double raw_psnr_db = 0.0;
};

// Fixed CSV column order:
// scheme,channel_kind,snr_db,mr,seed,psnr_db,ssim,cs_proxy,psnr_cs,ssim_cs,status,raw_psnr_db
std::string result_csv_header();
std::string to_csv(const ResultRow& row);
void write_csv(const std::vector<ResultRow>& rows, const std::string& path);

// Key=value config file (one pair per line, '#' comments). Recognized keys
// match the CLI flags; see the tool's --help.
std::map<std::string, std::string> load_config(const std::string& path);
ExperimentSpec spec_from_config(const std::map<std::string, std::string>& kv);

// Per-trial sub-seed rule shared by every sweep: mix the trial seed with the
// image index. Grid points reuse the same sub-seed so curves are paired.
std::uint64_t run_seed(std::uint64_t trial_seed, std::size_t image_index);

// MR sweep: SNR grid x MR in {0.0 .. 0.8}, mean metrics per grid point come
// from the per-image rows in the CSV.
std::vector<ResultRow> run_mr_sweep(const ExperimentSpec& spec);

// SNR sweep for the configured scheme.
std::vector<ResultRow> run_snr_sweep(const ExperimentSpec& spec);

// Per-subchannel mean transmit power for uniform/matched/learned modes on a
// fixed representative realization. Columns: mode,subcarrier_index,rank,mean_power.
struct PowerProfileRow {
  std::string mode;
  int subcarrier_index = 0;
  int rank = 0;
  double mean_power = 0.0;
};
std::vector<PowerProfileRow> run_power_profile(const ExperimentSpec& spec);
void write_power_profile_csv(const std::vector<PowerProfileRow>& rows, const std::string& path);

// Mean of a metric column over rows matching (snr, mr) within 1e-9.
double mean_metric(const std::vector<ResultRow>& rows, double snr_db, double mr,
                   double ResultRow::*field);

}  // namespace semlink
