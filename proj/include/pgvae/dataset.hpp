#pragma once

// Patch datasets cut from labelled volumes.

#include <cstdint>
#include <string>
#include <vector>

#include "pgvae/localizer.hpp"
#include "pgvae/patch.hpp"
#include "pgvae/phantom.hpp"

namespace pgvae {

enum class RoiSource {
  Prompt,          // similarity-map ROIs from the prompt
  TargetCentroid,  // centroids of labelled target components, jittered
};

struct DatasetOptions {
  std::string prompt = "adrenal gland";
  RoiSource roi_source = RoiSource::TargetCentroid;
  LocalizerOptions localizer;  // patch_size is used by both sources
  int min_target_pixels = 12;  // smaller per-slice components are skipped
  int jitter = 6;              // max centroid offset in pixels
  int max_patches_per_volume = 10;
  double window_min = -200.0;
  double window_max = 300.0;
  std::uint64_t seed = 0;
};

/// Patches from the axial slices of one HU volume. Only slices holding at
/// least min_target_pixels labelled pixels are visited. When a volume yields
/// more candidates than max_patches_per_volume, an evenly spaced subset is kept.
std::vector<PatchPair> patches_from_volume(const Volume& hu, const MaskVolume& mask, int volume_id,
                                           const DatasetOptions& opts);

struct PhantomDatasetSpec {
  PhantomSpec phantom = default_phantom_spec();
  int train_volumes = 20;
  int eval_volumes = 5;
  DatasetOptions options;
};

struct PatchDataset {
  std::vector<PatchPair> train;
  std::vector<PatchPair> eval;  // drawn from volumes disjoint from train
};

/// Volume i uses phantom seed phantom.seed + i; eval volumes follow the
/// training volumes.
PatchDataset build_phantom_dataset(const PhantomDatasetSpec& spec);

}  // namespace pgvae
