#include "pgvae/dataset.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace pgvae {

namespace {

struct Component {
  std::size_t pixels = 0;
  double sum_y = 0.0, sum_x = 0.0;
};

/// 4-connected components of a binary slice, in raster order of first pixel.
std::vector<Component> components(const MaskSlice& m) {
  std::vector<int> label(m.pixels.size(), -1);
  std::vector<Component> out;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * m.width + x;
      if (!m.pixels[i] || label[i] >= 0) continue;
      const int id = static_cast<int>(out.size());
      Component c;
      label[i] = id;
      stack.push_back({y, x});
      while (!stack.empty()) {
        const auto [cy, cx] = stack.back();
        stack.pop_back();
        ++c.pixels;
        c.sum_y += cy;
        c.sum_x += cx;
        const int ny[4] = {cy - 1, cy + 1, cy, cy};
        const int nx[4] = {cx, cx, cx - 1, cx + 1};
        for (int k = 0; k < 4; ++k) {
          if (ny[k] < 0 || ny[k] >= m.height || nx[k] < 0 || nx[k] >= m.width) continue;
          const std::size_t j = static_cast<std::size_t>(ny[k]) * m.width + nx[k];
          if (m.pixels[j] && label[j] < 0) {
            label[j] = id;
            stack.push_back({ny[k], nx[k]});
          }
        }
      }
      out.push_back(c);
    }
  }
  return out;
}

std::size_t count_set(const MaskSlice& m) {
  std::size_t n = 0;
  for (auto v : m.pixels) n += v != 0;
  return n;
}

}  // namespace

std::vector<PatchPair> patches_from_volume(const Volume& hu, const MaskVolume& mask, int volume_id,
                                           const DatasetOptions& opts) {
  if (!(hu.dims == mask.dims)) throw std::invalid_argument("volume and mask dimensions differ");
  if (opts.max_patches_per_volume < 1) throw std::invalid_argument("max_patches_per_volume must be >= 1");
  if (opts.jitter < 0) throw std::invalid_argument("jitter must be >= 0");
  const int ps = opts.localizer.patch_size;
  const Volume norm = normalize_intensity(hu, opts.window_min, opts.window_max);
  std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                    static_cast<std::uint32_t>(volume_id)};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<int> jitter(-opts.jitter, opts.jitter);

  const TrigramTextEmbedder text;
  const DescriptorImageEmbedder vision;
  std::vector<PatchPair> candidates;
  for (int z = 0; z < hu.dims.nz; ++z) {
    const MaskSlice m = slice_axial(mask, z);
    if (count_set(m) < static_cast<std::size_t>(std::max(1, opts.min_target_pixels))) continue;
    const ImageSlice img = slice_axial(norm, z);
    std::vector<PatchPair> found;
    if (opts.roi_source == RoiSource::Prompt) {
      found = localize_slice(img, m, opts.prompt, opts.localizer, text, vision, volume_id, z);
    } else {
      std::vector<ROI> rois;
      for (const auto& c : components(m)) {
        if (c.pixels < static_cast<std::size_t>(opts.min_target_pixels)) continue;
        const double n = static_cast<double>(c.pixels);
        const int cy = static_cast<int>(std::lround(c.sum_y / n)) + jitter(rng);
        const int cx = static_cast<int>(std::lround(c.sum_x / n)) + jitter(rng);
        rois.push_back({cy, cx, 1.0});
      }
      found = extract_patches(img, m, rois, ps, volume_id, z);
    }
    for (auto& p : found) candidates.push_back(std::move(p));
  }

  const std::size_t cap = static_cast<std::size_t>(opts.max_patches_per_volume);
  if (candidates.size() <= cap) return candidates;
  std::vector<PatchPair> kept;
  kept.reserve(cap);
  for (std::size_t i = 0; i < cap; ++i) kept.push_back(std::move(candidates[i * candidates.size() / cap]));
  return kept;
}

PatchDataset build_phantom_dataset(const PhantomDatasetSpec& spec) {
  if (spec.train_volumes < 1 || spec.eval_volumes < 0) throw std::invalid_argument("volume counts must be positive");
  PatchDataset ds;
  for (int i = 0; i < spec.train_volumes + spec.eval_volumes; ++i) {
    PhantomSpec ps = spec.phantom;
    ps.seed = spec.phantom.seed + static_cast<std::uint64_t>(i);
    const auto [vol, mask] = generate_phantom(ps);
    auto patches = patches_from_volume(vol, mask, i, spec.options);
    auto& dst = i < spec.train_volumes ? ds.train : ds.eval;
    for (auto& p : patches) dst.push_back(std::move(p));
  }
  return ds;
}

}  // namespace pgvae
