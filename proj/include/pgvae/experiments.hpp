#pragma once

// Ratio sweep harness and report rendering.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pgvae/config.hpp"
#include "pgvae/image_io.hpp"
#include "pgvae/metrics.hpp"
#include "pgvae/training.hpp"

namespace pgvae {

struct RatioRun {
  double ratio = 0.0;
  metrics::MetricReport report;
  std::vector<PanelSample> samples;
  std::vector<LossRecord> log;
  std::uint64_t synthetic_calls = 0;
};

struct SweepResult {
  RunConfig base;
  std::vector<RatioRun> runs;  // in requested order
  std::uint64_t config_hash = 0;
  double wall_seconds = 0.0;
};

struct SweepOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  std::size_t keep_samples = 4;
};

/// "ratio-<%g>", the per-ratio subdirectory name.
std::string ratio_dir_name(double ratio);

/// Parses "0,0.25,0.5". Throws std::invalid_argument on malformed or
/// out-of-range entries or an empty list.
std::vector<double> parse_ratios(const std::string& text);

/// One training run per ratio from identical seeds; only `ratio` differs.
/// Every run is scored on the same `eval` set. With out_dir set, each run
/// writes into out_dir/ratio-*/ and sweep.json is saved at the end.
SweepResult ratio_sweep(const RunConfig& base, std::span<const double> ratios, std::span<const PatchPair> train_set,
                        std::span<const PatchPair> eval, const FeatureExtractor<float>& extractor,
                        const SweepOptions& opts = {});

/// sweep.json (config, hash, per-patch rows) plus PGPP sample pairs per ratio.
void save_sweep(const SweepResult& s, const std::filesystem::path& dir);
/// Throws FormatError if the stored hash does not match the stored config.
SweepResult load_sweep(const std::filesystem::path& dir);

inline constexpr const char* kReconstructionHeader = "Ratio,MSE,MAE,RMSE,PSNR (dB),SSIM";
inline constexpr const char* kSegmentationHeader = "Ratio,Dice,IoU,Precision,Recall,Hausdorff (px)";

std::string reconstruction_table_csv(const SweepResult& s);
std::string segmentation_table_csv(const SweepResult& s);
/// Space-aligned rendering of a CSV table.
std::string text_table(const std::string& csv);

/// Input, reconstruction, error heatmap, predicted mask, ground-truth mask,
/// left to right with a 2 px black gap.
RgbImage render_panel(const PanelSample& sample);

/// Writes reconstruction.{csv,txt}, segmentation.{csv,txt} and
/// panels/ratio-*/sample-NN-*.{pgm,ppm}.
void render_report(const SweepResult& s, const std::filesystem::path& out_dir);

}  // namespace pgvae
