#pragma once

// Prompt-guided region localization: text and image-cell embeddings compared
// by cosine similarity, greedy ROI selection, and aligned patch cropping.
//
// The in-tree embedders are deterministic hashing models. Real pretrained
// encoders plug in through TextEmbedder / ImageEmbedder.

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "pgvae/patch.hpp"
#include "pgvae/phantom.hpp"

namespace pgvae {

/// Unit-norm embedding.
struct EmbeddingVector {
  std::vector<float> values;
  int dim() const { return static_cast<int>(values.size()); }
  bool operator==(const EmbeddingVector&) const = default;
};

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual int dim() const = 0;
  virtual EmbeddingVector embed(std::string_view prompt) const = 0;
};

class ImageEmbedder {
 public:
  virtual ~ImageEmbedder() = default;
  virtual int dim() const = 0;
  /// Embeds the cell x cell window with top-left corner (y0, x0).
  virtual EmbeddingVector embed(const ImageSlice& slice, int y0, int x0, int cell) const = 0;
};

/// Signed feature hashing of lower-cased character trigrams.
class TrigramTextEmbedder final : public TextEmbedder {
 public:
  explicit TrigramTextEmbedder(int dim = 64, std::uint64_t seed = 0x7e57ULL);
  int dim() const override { return dim_; }
  EmbeddingVector embed(std::string_view prompt) const override;

 private:
  int dim_;
  std::uint64_t seed_;
};

/// Per-cell intensity histogram plus magnitude-weighted gradient-orientation
/// histogram, signed-hashed into `dim` buckets.
class DescriptorImageEmbedder final : public ImageEmbedder {
 public:
  static constexpr int kIntensityBins = 8;
  static constexpr int kOrientationBins = 8;

  explicit DescriptorImageEmbedder(int dim = 64, std::uint64_t seed = 0x1a6eULL);
  int dim() const override { return dim_; }
  EmbeddingVector embed(const ImageSlice& slice, int y0, int x0, int cell) const override;

 private:
  int dim_;
  std::uint64_t seed_;
};

/// Throws std::invalid_argument on an empty prompt.
EmbeddingVector embed_text(std::string_view prompt, const TextEmbedder& embedder);
EmbeddingVector embed_text(std::string_view prompt);

struct EmbeddingGrid {
  int rows = 0, cols = 0, cell = 0, stride = 0;
  std::vector<EmbeddingVector> cells;  // row-major
  const EmbeddingVector& at(int r, int c) const { return cells[static_cast<std::size_t>(r) * cols + c]; }
};

EmbeddingGrid embed_image_grid(const ImageSlice& slice, int cell, int stride, const ImageEmbedder& embedder);
EmbeddingGrid embed_image_grid(const ImageSlice& slice, int cell, int stride);

/// Throws std::invalid_argument for a zero vector or a dimension mismatch.
double cosine_similarity(std::span<const float> a, std::span<const float> b);
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  return cosine_similarity(a.values, b.values);
}

struct SimilarityMap {
  int rows = 0, cols = 0, cell = 0, stride = 0;
  std::vector<double> scores;  // row-major, each in [-1, 1]
  double at(int r, int c) const { return scores[static_cast<std::size_t>(r) * cols + c]; }
  int center_y(int r) const { return r * stride + cell / 2; }
  int center_x(int c) const { return c * stride + cell / 2; }
};

SimilarityMap similarity_map(const EmbeddingVector& text, const EmbeddingGrid& grid);

struct ROI {
  int center_y = 0, center_x = 0;
  double score = 0.0;
  bool operator==(const ROI&) const = default;
};

/// Cells scoring >= threshold, taken greedily by descending score (ties by
/// row, then column); a candidate within nms_radius pixels of an accepted ROI
/// is suppressed. At most k results.
std::vector<ROI> select_roi(const SimilarityMap& map, int k, double threshold, double nms_radius);

/// ps x ps crops centred on each ROI, shifted inward at borders (no padding).
/// The recorded source centre is the centre of the window actually cropped.
std::vector<PatchPair> extract_patches(const ImageSlice& image, const MaskSlice& mask, std::span<const ROI> rois,
                                       int ps, int volume_id = -1, int z = -1);

/// Top-left corner of the in-bounds window for a requested centre.
std::pair<int, int> crop_origin(int center_y, int center_x, int ps, int height, int width);

struct LocalizerOptions {
  int k = 4;
  double threshold = -std::numeric_limits<double>::infinity();
  double nms_radius = 16.0;
  int cell = 32;
  int stride = 16;
  int patch_size = 64;
};

/// Prompt -> similarity map -> ROIs -> patch pairs, for one axial slice.
std::vector<PatchPair> localize_slice(const ImageSlice& image, const MaskSlice& mask, std::string_view prompt,
                                      const LocalizerOptions& opts, const TextEmbedder& text,
                                      const ImageEmbedder& vision, int volume_id = -1, int z = -1);

}  // namespace pgvae
