#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pgvae/tensor.hpp"

namespace pgvae {

enum class Provenance : std::uint8_t { Real = 0, Synthetic = 1 };

struct PatchSource {
  int volume_id = -1;
  int z = -1;
  int center_y = -1;
  int center_x = -1;
  bool operator==(const PatchSource&) const = default;
};

/// Square image patch in [-1, 1] with an aligned binary mask.
struct PatchPair {
  int size = 0;
  std::vector<float> image;         // size*size, row-major
  std::vector<std::uint8_t> mask;   // size*size, values {0,1}
  PatchSource source;
  Provenance provenance = Provenance::Real;

  bool operator==(const PatchPair&) const = default;
};

/// Throws std::invalid_argument if the pair violates its shape/range invariants.
void validate_patch(const PatchPair& p);

/// Stacks the images (or masks as 0/1 floats) of a batch into (N,1,ps,ps).
template <typename T>
Tensor<T> stack_images(std::span<const PatchPair> batch);
template <typename T>
Tensor<T> stack_masks(std::span<const PatchPair> batch);

// PGPP patch file, little-endian:
//   "PGPP" | u32 version=1 | u32 ps | u8 provenance | f32[ps*ps] image | u8[ps*ps] mask
inline constexpr std::uint32_t kPatchFormatVersion = 1;

void save_patch(const PatchPair& p, const std::filesystem::path& path);
PatchPair load_patch(const std::filesystem::path& path);

/// Loads every *.pgpp file in a directory, sorted by filename.
std::vector<PatchPair> load_patch_dir(const std::filesystem::path& dir);

}  // namespace pgvae
