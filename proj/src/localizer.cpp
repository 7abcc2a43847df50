#include "pgvae/localizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace pgvae {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_bytes(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ mix64(seed);
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

void accumulate_hashed(std::vector<double>& acc, std::uint64_t h, double weight) {
  const std::size_t bucket = h % acc.size();
  const double sign = (h >> 63) ? -1.0 : 1.0;
  acc[bucket] += sign * weight;
}

EmbeddingVector normalized(const std::vector<double>& acc) {
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  EmbeddingVector out;
  out.values.resize(acc.size());
  if (norm == 0.0) {
    // Fully cancelled hash collisions; fall back to a fixed unit axis.
    out.values[0] = 1.0f;
    return out;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = static_cast<float>(acc[i] / norm);
  return out;
}

}  // namespace

TrigramTextEmbedder::TrigramTextEmbedder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 1) throw std::invalid_argument("embedding dim must be >= 1");
}

EmbeddingVector TrigramTextEmbedder::embed(std::string_view prompt) const {
  if (prompt.empty()) throw std::invalid_argument("empty prompt");
  std::string padded = " ";
  for (char c : prompt) padded.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  padded.push_back(' ');
  std::vector<double> acc(dim_, 0.0);
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i)
    accumulate_hashed(acc, hash_bytes(std::string_view(padded).substr(i, 3), seed_), 1.0);
  return normalized(acc);
}

DescriptorImageEmbedder::DescriptorImageEmbedder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 1) throw std::invalid_argument("embedding dim must be >= 1");
}

EmbeddingVector DescriptorImageEmbedder::embed(const ImageSlice& slice, int y0, int x0, int cell) const {
  std::array<double, kIntensityBins + kOrientationBins> desc{};
  const double n = static_cast<double>(cell) * cell;
  for (int y = y0; y < y0 + cell; ++y) {
    for (int x = x0; x < x0 + cell; ++x) {
      const double v = std::clamp(static_cast<double>(slice.at(y, x)), -1.0, 1.0);
      const int bin = std::min(kIntensityBins - 1, static_cast<int>((v + 1.0) / 2.0 * kIntensityBins));
      desc[bin] += 1.0 / n;
      // Central differences clamped to the cell so the descriptor only sees its window.
      const double gx = slice.at(y, std::min(x + 1, x0 + cell - 1)) - slice.at(y, std::max(x - 1, x0));
      const double gy = slice.at(std::min(y + 1, y0 + cell - 1), x) - slice.at(std::max(y - 1, y0), x);
      const double mag = std::hypot(gx, gy);
      if (mag > 0.0) {
        const double angle = std::atan2(gy, gx) + std::numbers::pi;  // [0, 2pi]
        const int ob = std::min(kOrientationBins - 1,
                                static_cast<int>(angle / (2.0 * std::numbers::pi) * kOrientationBins));
        desc[kIntensityBins + ob] += mag / n;
      }
    }
  }
  std::vector<double> acc(dim_, 0.0);
  for (std::size_t j = 0; j < desc.size(); ++j) {
    if (desc[j] == 0.0) continue;
    const std::string key = "d" + std::to_string(j);
    accumulate_hashed(acc, hash_bytes(key, seed_), desc[j]);
  }
  return normalized(acc);
}

EmbeddingVector embed_text(std::string_view prompt, const TextEmbedder& embedder) {
  if (prompt.empty()) throw std::invalid_argument("empty prompt");
  return embedder.embed(prompt);
}

EmbeddingVector embed_text(std::string_view prompt) { return embed_text(prompt, TrigramTextEmbedder{}); }

EmbeddingGrid embed_image_grid(const ImageSlice& slice, int cell, int stride, const ImageEmbedder& embedder) {
  if (cell < 1 || cell > slice.height || cell > slice.width)
    throw std::invalid_argument("grid cell larger than slice");
  if (stride < 1) throw std::invalid_argument("grid stride must be >= 1");
  EmbeddingGrid g;
  g.cell = cell;
  g.stride = stride;
  g.rows = (slice.height - cell) / stride + 1;
  g.cols = (slice.width - cell) / stride + 1;
  g.cells.reserve(static_cast<std::size_t>(g.rows) * g.cols);
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) g.cells.push_back(embedder.embed(slice, r * stride, c * stride, cell));
  return g;
}

EmbeddingGrid embed_image_grid(const ImageSlice& slice, int cell, int stride) {
  return embed_image_grid(slice, cell, stride, DescriptorImageEmbedder{});
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_similarity: zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

SimilarityMap similarity_map(const EmbeddingVector& text, const EmbeddingGrid& grid) {
  SimilarityMap m{grid.rows, grid.cols, grid.cell, grid.stride, {}};
  m.scores.reserve(grid.cells.size());
  for (const auto& e : grid.cells) {
    if (e.dim() != text.dim()) throw std::invalid_argument("similarity_map: embedding dimension mismatch");
    m.scores.push_back(cosine_similarity(text, e));
  }
  return m;
}

std::vector<ROI> select_roi(const SimilarityMap& map, int k, double threshold, double nms_radius) {
  if (k < 1) throw std::invalid_argument("select_roi: k must be >= 1");
  if (nms_radius < 0.0) throw std::invalid_argument("select_roi: nms_radius must be >= 0");
  struct Candidate {
    double score;
    int row, col;
  };
  std::vector<Candidate> cands;
  for (int r = 0; r < map.rows; ++r)
    for (int c = 0; c < map.cols; ++c)
      if (map.at(r, c) >= threshold) cands.push_back({map.at(r, c), r, c});
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });
  std::vector<ROI> out;
  for (const auto& cand : cands) {
    if (static_cast<int>(out.size()) == k) break;
    const int cy = map.center_y(cand.row), cx = map.center_x(cand.col);
    const bool suppressed = std::any_of(out.begin(), out.end(), [&](const ROI& r) {
      return std::hypot(static_cast<double>(r.center_y - cy), static_cast<double>(r.center_x - cx)) <= nms_radius;
    });
    if (!suppressed) out.push_back({cy, cx, cand.score});
  }
  return out;
}

std::pair<int, int> crop_origin(int center_y, int center_x, int ps, int height, int width) {
  return {std::clamp(center_y - ps / 2, 0, height - ps), std::clamp(center_x - ps / 2, 0, width - ps)};
}

std::vector<PatchPair> extract_patches(const ImageSlice& image, const MaskSlice& mask, std::span<const ROI> rois,
                                       int ps, int volume_id, int z) {
  if (image.height != mask.height || image.width != mask.width)
    throw std::invalid_argument("extract_patches: image/mask slice shapes differ");
  if (ps < 2 || ps % 2 != 0) throw std::invalid_argument("extract_patches: patch size must be even");
  if (ps > image.height || ps > image.width) throw std::invalid_argument("extract_patches: patch exceeds slice");
  std::vector<PatchPair> out;
  out.reserve(rois.size());
  for (const auto& roi : rois) {
    const auto [y0, x0] = crop_origin(roi.center_y, roi.center_x, ps, image.height, image.width);
    PatchPair p;
    p.size = ps;
    p.provenance = Provenance::Real;
    p.source = {volume_id, z, y0 + ps / 2, x0 + ps / 2};
    p.image.resize(static_cast<std::size_t>(ps) * ps);
    p.mask.resize(static_cast<std::size_t>(ps) * ps);
    for (int y = 0; y < ps; ++y)
      for (int x = 0; x < ps; ++x) {
        const std::size_t dst = static_cast<std::size_t>(y) * ps + x;
        p.image[dst] = image.at(y0 + y, x0 + x);
        p.mask[dst] = mask.at(y0 + y, x0 + x);
      }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<PatchPair> localize_slice(const ImageSlice& image, const MaskSlice& mask, std::string_view prompt,
                                      const LocalizerOptions& opts, const TextEmbedder& text,
                                      const ImageEmbedder& vision, int volume_id, int z) {
  const auto t = embed_text(prompt, text);
  const auto grid = embed_image_grid(image, opts.cell, opts.stride, vision);
  const auto map = similarity_map(t, grid);
  const auto rois = select_roi(map, opts.k, opts.threshold, opts.nms_radius);
  return extract_patches(image, mask, rois, opts.patch_size, volume_id, z);
}

}  // namespace pgvae
