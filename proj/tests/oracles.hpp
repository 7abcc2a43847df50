#pragma once

// Brute-force reference implementations used by unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace oracle {

struct Scores {
  double dice, iou, precision, recall, hausdorff;
};

/// Set-based overlap scores and O(n^2) Hausdorff over explicit point lists.
inline Scores mask_scores(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, int h, int w) {
  std::vector<std::pair<int, int>> p, t;
  double inter = 0, np = 0, nt = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (pred[i]) p.push_back({y, x});
      if (truth[i]) t.push_back({y, x});
      inter += pred[i] && truth[i];
      np += pred[i];
      nt += truth[i];
    }
  const double uni = np + nt - inter;
  Scores s{};
  const bool empty = np == 0 && nt == 0;
  s.dice = empty ? 1.0 : 2 * inter / (np + nt);
  s.iou = empty ? 1.0 : inter / uni;
  s.precision = empty ? 1.0 : (np == 0 ? 0.0 : inter / np);
  s.recall = empty ? 1.0 : (nt == 0 ? 0.0 : inter / nt);

  auto directed = [](const auto& from, const auto& to) {
    double worst = 0.0;
    for (const auto& a : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& b : to) best = std::min(best, std::sqrt(static_cast<double>((a.first - b.first) * (a.first - b.first) + (a.second - b.second) * (a.second - b.second))));
      worst = std::max(worst, best);
    }
    return worst;
  };
  if (p.empty() && t.empty()) s.hausdorff = 0.0;
  else if (p.empty() || t.empty()) s.hausdorff = std::hypot(h, w);
  else s.hausdorff = std::max(directed(p, t), directed(t, p));
  return s;
}

/// SSIM from explicit 2D Gaussian windows (no separability), valid positions only.
inline double ssim(std::span<const float> a, std::span<const float> b, int h, int w, int win = 11, double sigma = 1.5,
                   double k1 = 0.01, double k2 = 0.03, double range = 2.0) {
  std::vector<double> g(static_cast<std::size_t>(win) * win);
  const double c = (win - 1) / 2.0;
  double total = 0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double v = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2 * sigma * sigma));
      g[static_cast<std::size_t>(i) * win + j] = v;
      total += v;
    }
  for (auto& v : g) v /= total;
  const double c1 = (k1 * range) * (k1 * range), c2 = (k2 * range) * (k2 * range);
  double acc = 0;
  int count = 0;
  for (int y = 0; y + win <= h; ++y)
    for (int x = 0; x + win <= w; ++x) {
      double ma = 0, mb = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double wt = g[static_cast<std::size_t>(i) * win + j];
          const std::size_t k = static_cast<std::size_t>(y + i) * w + x + j;
          ma += wt * a[k];
          mb += wt * b[k];
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double wt = g[static_cast<std::size_t>(i) * win + j];
          const std::size_t k = static_cast<std::size_t>(y + i) * w + x + j;
          va += wt * (a[k] - ma) * (a[k] - ma);
          vb += wt * (b[k] - mb) * (b[k] - mb);
          cov += wt * (a[k] - ma) * (b[k] - mb);
        }
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return acc / count;
}

}  // namespace oracle
