#include "pgvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace pgvae::metrics {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": size mismatch");
}

double ratio_or_convention(double num, double den, bool both_empty) {
  if (den == 0.0) return both_empty ? 1.0 : 0.0;
  return num / den;
}

bool both_empty(const ConfusionCounts& c) { return c.tp == 0 && c.fp == 0 && c.fn == 0; }

constexpr double kInf = std::numeric_limits<double>::infinity();

// Squared Euclidean distance transform of a 1D sampled function
// (Felzenszwalb & Huttenlocher lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (f[v[k]] == kInf) {
      v[k] = q;
      continue;
    }
    double s;
    while (true) {
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = f[v[k]] == kInf ? kInf : dq * dq + f[v[k]];
  }
}

// Squared distance from each pixel to the nearest foreground pixel of `mask`.
std::vector<double> squared_distance_to(std::span<const std::uint8_t> mask, int h, int w) {
  std::vector<double> grid(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = mask[i] ? 0.0 : kInf;
  const int n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  f.resize(h);
  d.resize(h);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = grid[static_cast<std::size_t>(y) * w + x];
    edt_1d(f, d, v, z);
    for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = d[y];
  }
  f.resize(w);
  d.resize(w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = grid[static_cast<std::size_t>(y) * w + x];
    edt_1d(f, d, v, z);
    for (int x = 0; x < w; ++x) grid[static_cast<std::size_t>(y) * w + x] = d[x];
  }
  return grid;
}

double directed_hausdorff(std::span<const std::uint8_t> from, const std::vector<double>& dist_to) {
  double worst = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i)
    if (from[i]) worst = std::max(worst, dist_to[i]);
  return std::sqrt(worst);
}

std::vector<double> gaussian_kernel(int window, double sigma) {
  std::vector<double> k(window);
  const double c = (window - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    k[i] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Valid-mode separable filtering of an h x w image.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& k) {
  const int win = static_cast<int>(k.size());
  const int oh = h - win + 1, ow = w - win + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < win; ++i) acc += k[i] * img[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < win; ++i) acc += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace

ConfusionCounts confusion_counts(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  require_same_size(pred.size(), truth.size(), "confusion_counts");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] > 1 || truth[i] > 1) throw std::invalid_argument("confusion_counts: non-binary mask");
    if (pred[i] && truth[i]) ++c.tp;
    else if (pred[i]) ++c.fp;
    else if (truth[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double dice(const ConfusionCounts& c) {
  return ratio_or_convention(2.0 * c.tp, 2.0 * c.tp + c.fp + c.fn, both_empty(c));
}
double iou(const ConfusionCounts& c) {
  return ratio_or_convention(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp + c.fn), both_empty(c));
}
double precision(const ConfusionCounts& c) {
  return ratio_or_convention(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp), both_empty(c));
}
double recall(const ConfusionCounts& c) {
  return ratio_or_convention(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn), both_empty(c));
}

double hausdorff(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, int height, int width) {
  require_same_size(pred.size(), truth.size(), "hausdorff");
  require_same_size(pred.size(), static_cast<std::size_t>(height) * width, "hausdorff");
  const bool pred_any = std::any_of(pred.begin(), pred.end(), [](auto v) { return v != 0; });
  const bool truth_any = std::any_of(truth.begin(), truth.end(), [](auto v) { return v != 0; });
  if (!pred_any && !truth_any) return 0.0;
  if (!pred_any || !truth_any) return std::hypot(static_cast<double>(height), static_cast<double>(width));
  const auto to_truth = squared_distance_to(truth, height, width);
  const auto to_pred = squared_distance_to(pred, height, width);
  return std::max(directed_hausdorff(pred, to_truth), directed_hausdorff(truth, to_pred));
}

double mse(std::span<const float> a, std::span<const float> b) {
  require_same_size(a.size(), b.size(), "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double mae(std::span<const float> a, std::span<const float> b) {
  require_same_size(a.size(), b.size(), "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i]) - b[i]);
  return acc / static_cast<double>(a.size());
}

double rmse(std::span<const float> a, std::span<const float> b) { return std::sqrt(mse(a, b)); }

double psnr(double mse_value, double peak) {
  if (mse_value < 0.0) throw std::invalid_argument("psnr: negative mse");
  if (mse_value == 0.0) return kInf;
  return 10.0 * std::log10(peak * peak / mse_value);
}

double ssim(std::span<const float> a, std::span<const float> b, int height, int width, const SsimParams& p) {
  require_same_size(a.size(), b.size(), "ssim");
  require_same_size(a.size(), static_cast<std::size_t>(height) * width, "ssim");
  if (height < p.window || width < p.window) throw std::invalid_argument("ssim: patch smaller than window");
  const auto k = gaussian_kernel(p.window, p.sigma);
  const std::size_t n = a.size();
  std::vector<double> va(n), vb(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    va[i] = a[i];
    vb[i] = b[i];
    aa[i] = va[i] * va[i];
    bb[i] = vb[i] * vb[i];
    ab[i] = va[i] * vb[i];
  }
  const auto mu_a = filter_valid(va, height, width, k);
  const auto mu_b = filter_valid(vb, height, width, k);
  const auto e_aa = filter_valid(aa, height, width, k);
  const auto e_bb = filter_valid(bb, height, width, k);
  const auto e_ab = filter_valid(ab, height, width, k);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double acc = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double sa = e_aa[i] - ma * ma;
    const double sb = e_bb[i] - mb * mb;
    const double sab = e_ab[i] - ma * mb;
    acc += ((2 * ma * mb + c1) * (2 * sab + c2)) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
  }
  return acc / static_cast<double>(mu_a.size());
}

MetricRow score_patch(std::span<const float> input, std::span<const float> recon,
                      std::span<const std::uint8_t> pred_mask, std::span<const std::uint8_t> truth_mask,
                      int size, double psnr_peak) {
  MetricRow r;
  r.mse = mse(recon, input);
  r.mae = mae(recon, input);
  r.rmse = std::sqrt(r.mse);
  r.psnr = psnr(r.mse, psnr_peak);
  r.ssim = ssim(recon, input, size, size);
  const auto c = confusion_counts(pred_mask, truth_mask);
  r.dice = dice(c);
  r.iou = iou(c);
  r.precision = precision(c);
  r.recall = recall(c);
  r.hausdorff = hausdorff(pred_mask, truth_mask, size, size);
  return r;
}

void aggregate(MetricReport& report) {
  MetricRow m;
  report.psnr_excluded = 0;
  std::size_t psnr_n = 0;
  for (const auto& r : report.rows) {
    m.mse += r.mse;
    m.mae += r.mae;
    m.rmse += r.rmse;
    m.ssim += r.ssim;
    m.dice += r.dice;
    m.iou += r.iou;
    m.precision += r.precision;
    m.recall += r.recall;
    m.hausdorff += r.hausdorff;
    if (std::isfinite(r.psnr)) {
      m.psnr += r.psnr;
      ++psnr_n;
    } else {
      ++report.psnr_excluded;
    }
  }
  const double n = static_cast<double>(report.rows.size());
  if (n > 0) {
    for (double* v : {&m.mse, &m.mae, &m.rmse, &m.ssim, &m.dice, &m.iou, &m.precision, &m.recall, &m.hausdorff})
      *v /= n;
  }
  m.psnr = psnr_n > 0 ? m.psnr / static_cast<double>(psnr_n) : kInf;
  report.mean = m;
}

namespace {
void write_row(std::ostream& os, const std::string& label, double ratio, const MetricRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", label.c_str(), ratio,
                r.mse, r.mae, r.rmse, r.psnr, r.ssim, r.dice, r.iou, r.precision, r.recall, r.hausdorff);
  os << buf;
}
}  // namespace

void write_metric_csv(std::ostream& os, const MetricReport& report) {
  os << kMetricCsvHeader << '\n';
  for (std::size_t i = 0; i < report.rows.size(); ++i) write_row(os, std::to_string(i), report.ratio, report.rows[i]);
  write_row(os, "mean", report.ratio, report.mean);
}

}  // namespace pgvae::metrics
