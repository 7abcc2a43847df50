#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace pgvae {

struct Dims {
  int nz = 0, ny = 0, nx = 0;
  std::size_t count() const { return static_cast<std::size_t>(nz) * ny * nx; }
  bool operator==(const Dims&) const = default;
};

struct Spacing {
  float sz = 1.0f, sy = 1.0f, sx = 1.0f;
  bool operator==(const Spacing&) const = default;
};

/// Scalar CT volume, C-order with z slowest.
struct Volume {
  Dims dims;
  Spacing spacing;
  std::vector<float> voxels;
};

/// Binary labels aligned with a Volume.
struct MaskVolume {
  Dims dims;
  Spacing spacing;
  std::vector<std::uint8_t> voxels;
};

template <typename T>
struct Slice2D {
  int height = 0, width = 0;
  std::vector<T> pixels;  // row-major
  T at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

using ImageSlice = Slice2D<float>;
using MaskSlice = Slice2D<std::uint8_t>;

struct Range {
  double lo = 0.0, hi = 0.0;
};

struct Range3 {
  Range z, y, x;
};

/// Ellipsoidal structure. Centers are fractions of the volume extent along
/// each axis; radii are in voxels; the offset is added to the background (HU).
struct OrganSpec {
  std::string name;
  Range3 center;
  Range3 radii;
  Range intensity_offset;
  bool target = false;
};

struct PhantomSpec {
  Dims dims{32, 128, 128};
  Spacing spacing{2.5f, 0.8f, 0.8f};
  Range background{-110.0, -90.0};
  std::vector<OrganSpec> organs;
  double max_target_fraction = 0.01;
  double noise_std = 10.0;
  std::uint64_t seed = 0;
};

/// Abdominal layout: liver, spleen, two kidneys and two adrenal-sized targets.
PhantomSpec default_phantom_spec(std::uint64_t seed = 0);

/// Deterministic in (spec, seed). Non-target organs are painted first, targets
/// last, so the mask is exactly the set of target voxels. Throws
/// std::invalid_argument for dims below (16,64,64) or when even the minimum
/// target radii exceed the target-fraction bound.
std::pair<Volume, MaskVolume> generate_phantom(const PhantomSpec& spec);

/// Clamp to [w_min, w_max] then map affinely onto [-1, 1].
Volume normalize_intensity(const Volume& v, double w_min = -200.0, double w_max = 300.0);

ImageSlice slice_axial(const Volume& v, int z);
MaskSlice slice_axial(const MaskVolume& m, int z);

// PGPV file, little-endian:
//   "PGPV" | u32 version=1 | u8 dtype (0=f32 image, 1=u8 mask) | u32 nz,ny,nx
//   | f32 sz,sy,sx | payload in C-order
inline constexpr std::uint32_t kVolumeFormatVersion = 1;

void save_volume(const Volume& v, const std::filesystem::path& path);
void save_volume(const MaskVolume& m, const std::filesystem::path& path);
std::variant<Volume, MaskVolume> load_any_volume(const std::filesystem::path& path);
/// Throws FormatError if the file holds a mask.
Volume load_volume(const std::filesystem::path& path);
/// Throws FormatError if the file holds an image.
MaskVolume load_mask(const std::filesystem::path& path);

}  // namespace pgvae
