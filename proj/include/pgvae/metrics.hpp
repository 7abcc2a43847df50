#pragma once

#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

namespace pgvae::metrics {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::uint64_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Pixelwise counts of two binary masks. Throws on shape mismatch or values
/// outside {0,1}.
ConfusionCounts confusion_counts(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

// Zero denominators yield 1.0 when both masks are empty, 0.0 otherwise.
double dice(const ConfusionCounts& c);
double iou(const ConfusionCounts& c);
double precision(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);

/// Symmetric Hausdorff distance in pixels between the foreground sets of two
/// height x width masks. One empty set gives the patch diagonal, both empty 0.
double hausdorff(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, int height,
                 int width);

double mse(std::span<const float> a, std::span<const float> b);
double mae(std::span<const float> a, std::span<const float> b);
double rmse(std::span<const float> a, std::span<const float> b);

inline constexpr double kDefaultPsnrPeak = 2.0;

/// 10 log10(peak^2 / mse); +inf for mse == 0. Throws for mse < 0.
double psnr(double mse, double peak = kDefaultPsnrPeak);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 2.0;
};

/// Mean SSIM over every fully contained Gaussian window (no padding).
double ssim(std::span<const float> a, std::span<const float> b, int height, int width,
            const SsimParams& p = {});

struct MetricRow {
  double mse = 0, mae = 0, rmse = 0, psnr = 0, ssim = 0;
  double dice = 0, iou = 0, precision = 0, recall = 0, hausdorff = 0;
};

/// Per-patch rows plus their means. PSNR rows equal to +inf (exact
/// reconstructions) are left out of the PSNR mean and counted instead.
struct MetricReport {
  double ratio = 0.0;
  std::vector<MetricRow> rows;
  MetricRow mean;
  std::size_t psnr_excluded = 0;

  std::size_t patch_count() const { return rows.size(); }
};

/// Recomputes `mean` and `psnr_excluded` from `rows` in row order.
void aggregate(MetricReport& report);

/// Reconstruction and segmentation scores for one patch.
MetricRow score_patch(std::span<const float> input, std::span<const float> recon,
                      std::span<const std::uint8_t> pred_mask, std::span<const std::uint8_t> truth_mask,
                      int size, double psnr_peak = kDefaultPsnrPeak);

inline constexpr const char* kMetricCsvHeader =
    "row,Ratio,MSE,MAE,RMSE,PSNR (dB),SSIM,Dice,IoU,Precision,Recall,Hausdorff (px)";

/// Per-patch rows then a final "mean" row.
void write_metric_csv(std::ostream& os, const MetricReport& report);

}  // namespace pgvae::metrics
