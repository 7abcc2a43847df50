#include "pgvae/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "pgvae/binary_io.hpp"

namespace pgvae {

PhantomSpec default_phantom_spec(std::uint64_t seed) {
  PhantomSpec s;
  s.seed = seed;
  s.organs = {
      {"liver", {{0.40, 0.60}, {0.24, 0.30}, {0.22, 0.30}}, {{8, 11}, {18, 22}, {16, 20}}, {140, 160}, false},
      {"spleen", {{0.40, 0.60}, {0.32, 0.40}, {0.74, 0.80}}, {{5, 7}, {9, 12}, {8, 10}}, {125, 145}, false},
      {"kidney_r", {{0.45, 0.55}, {0.64, 0.70}, {0.30, 0.36}}, {{5, 7}, {8, 10}, {6, 8}}, {260, 290}, false},
      {"kidney_l", {{0.45, 0.55}, {0.64, 0.70}, {0.64, 0.70}}, {{5, 7}, {8, 10}, {6, 8}}, {260, 290}, false},
      {"adrenal_r", {{0.45, 0.55}, {0.47, 0.50}, {0.31, 0.37}}, {{2.5, 3.5}, {3.5, 5.0}, {3.5, 5.0}}, {195, 220}, true},
      {"adrenal_l", {{0.45, 0.55}, {0.47, 0.50}, {0.63, 0.69}}, {{2.5, 3.5}, {3.5, 5.0}, {3.5, 5.0}}, {195, 220}, true},
  };
  return s;
}

namespace {

struct Ellipsoid {
  double cz, cy, cx, rz, ry, rx, offset;
};

double sample(std::mt19937_64& rng, const Range& r) {
  if (r.hi <= r.lo) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

bool inside(const Ellipsoid& e, int z, int y, int x) {
  const double dz = (z - e.cz) / e.rz, dy = (y - e.cy) / e.ry, dx = (x - e.cx) / e.rx;
  return dz * dz + dy * dy + dx * dx <= 1.0;
}

Ellipsoid sample_ellipsoid(std::mt19937_64& rng, const OrganSpec& o, const Dims& d, bool min_radii) {
  Ellipsoid e;
  e.cz = std::clamp(sample(rng, o.center.z) * d.nz, 0.0, d.nz - 1.0);
  e.cy = std::clamp(sample(rng, o.center.y) * d.ny, 0.0, d.ny - 1.0);
  e.cx = std::clamp(sample(rng, o.center.x) * d.nx, 0.0, d.nx - 1.0);
  if (min_radii) {
    e.rz = o.radii.z.lo;
    e.ry = o.radii.y.lo;
    e.rx = o.radii.x.lo;
  } else {
    e.rz = sample(rng, o.radii.z);
    e.ry = sample(rng, o.radii.y);
    e.rx = sample(rng, o.radii.x);
  }
  e.offset = sample(rng, o.intensity_offset);
  return e;
}

template <typename Fn>
void for_each_voxel(const Ellipsoid& e, const Dims& d, Fn&& fn) {
  const int z0 = std::max(0, static_cast<int>(std::floor(e.cz - e.rz)));
  const int z1 = std::min(d.nz - 1, static_cast<int>(std::ceil(e.cz + e.rz)));
  const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)));
  const int y1 = std::min(d.ny - 1, static_cast<int>(std::ceil(e.cy + e.ry)));
  const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)));
  const int x1 = std::min(d.nx - 1, static_cast<int>(std::ceil(e.cx + e.rx)));
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (inside(e, z, y, x)) fn((static_cast<std::size_t>(z) * d.ny + y) * d.nx + x);
}

constexpr int kTargetAttempts = 64;

}  // namespace

std::pair<Volume, MaskVolume> generate_phantom(const PhantomSpec& spec) {
  const Dims& d = spec.dims;
  if (d.nz < 16 || d.ny < 64 || d.nx < 64) throw std::invalid_argument("phantom dims must be at least (16,64,64)");
  if (!(spec.max_target_fraction > 0.0) || spec.noise_std < 0.0)
    throw std::invalid_argument("phantom target fraction must be > 0 and noise >= 0");

  const double budget = spec.max_target_fraction * static_cast<double>(d.count());
  double min_target_volume = 0.0;
  bool has_target = false;
  for (const auto& o : spec.organs) {
    if (!o.target) continue;
    has_target = true;
    min_target_volume += 4.0 / 3.0 * std::numbers::pi * o.radii.z.lo * o.radii.y.lo * o.radii.x.lo;
  }
  if (min_target_volume > budget)
    throw std::invalid_argument("target fraction bound infeasible for the requested radii");

  std::mt19937_64 rng(spec.seed);
  Volume vol{d, spec.spacing, std::vector<float>(d.count())};
  MaskVolume mask{d, spec.spacing, std::vector<std::uint8_t>(d.count(), 0)};
  const double background = sample(rng, spec.background);

  std::vector<double> hu(d.count(), background);
  for (const auto& o : spec.organs) {
    if (o.target) continue;
    const Ellipsoid e = sample_ellipsoid(rng, o, d, false);
    for_each_voxel(e, d, [&](std::size_t i) { hu[i] = background + e.offset; });
  }

  if (has_target) {
    std::vector<Ellipsoid> chosen;
    bool ok = false;
    for (int attempt = 0; attempt <= kTargetAttempts && !ok; ++attempt) {
      const bool min_radii = attempt == kTargetAttempts;
      chosen.clear();
      std::fill(mask.voxels.begin(), mask.voxels.end(), 0);
      std::size_t count = 0;
      for (const auto& o : spec.organs) {
        if (!o.target) continue;
        chosen.push_back(sample_ellipsoid(rng, o, d, min_radii));
        for_each_voxel(chosen.back(), d, [&](std::size_t i) {
          if (!mask.voxels[i]) ++count;
          mask.voxels[i] = 1;
        });
      }
      ok = count > 0 && static_cast<double>(count) <= budget;
    }
    if (!ok) throw std::invalid_argument("could not place targets within the fraction bound");
    for (const auto& e : chosen) for_each_voxel(e, d, [&](std::size_t i) { hu[i] = background + e.offset; });
  }

  std::normal_distribution<double> noise(0.0, spec.noise_std > 0.0 ? spec.noise_std : 1.0);
  for (std::size_t i = 0; i < hu.size(); ++i) {
    const double n = spec.noise_std > 0.0 ? noise(rng) : 0.0;
    vol.voxels[i] = static_cast<float>(hu[i] + n);
  }
  return {std::move(vol), std::move(mask)};
}

Volume normalize_intensity(const Volume& v, double w_min, double w_max) {
  if (!(w_min < w_max)) throw std::invalid_argument("normalize_intensity: w_min must be < w_max");
  Volume out{v.dims, v.spacing, std::vector<float>(v.voxels.size())};
  const double scale = 2.0 / (w_max - w_min);
  for (std::size_t i = 0; i < v.voxels.size(); ++i) {
    const double c = std::clamp(static_cast<double>(v.voxels[i]), w_min, w_max);
    out.voxels[i] = static_cast<float>(std::clamp((c - w_min) * scale - 1.0, -1.0, 1.0));
  }
  return out;
}

namespace {

template <typename T>
Slice2D<T> take_slice(const Dims& d, const std::vector<T>& voxels, int z) {
  if (z < 0 || z >= d.nz)
    throw std::out_of_range("slice index " + std::to_string(z) + " outside [0," + std::to_string(d.nz) + ")");
  const std::size_t plane = static_cast<std::size_t>(d.ny) * d.nx;
  Slice2D<T> s{d.ny, d.nx, {}};
  const auto first = voxels.begin() + static_cast<std::ptrdiff_t>(plane * z);
  s.pixels.assign(first, first + static_cast<std::ptrdiff_t>(plane));
  return s;
}

template <typename T>
void write_volume(const Dims& d, const Spacing& sp, const std::vector<T>& voxels, std::uint8_t dtype,
                  const std::filesystem::path& path) {
  if (voxels.size() != d.count()) throw std::invalid_argument("voxel count does not match dims");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write("PGPV", 4);
  io::write_pod<std::uint32_t>(os, kVolumeFormatVersion);
  io::write_pod<std::uint8_t>(os, dtype);
  for (int v : {d.nz, d.ny, d.nx}) io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(v));
  for (float v : {sp.sz, sp.sy, sp.sx}) io::write_pod<float>(os, v);
  io::write_array<T>(os, voxels);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

ImageSlice slice_axial(const Volume& v, int z) { return take_slice(v.dims, v.voxels, z); }
MaskSlice slice_axial(const MaskVolume& m, int z) { return take_slice(m.dims, m.voxels, z); }

void save_volume(const Volume& v, const std::filesystem::path& path) {
  write_volume(v.dims, v.spacing, v.voxels, 0, path);
}

void save_volume(const MaskVolume& m, const std::filesystem::path& path) {
  for (auto b : m.voxels)
    if (b > 1) throw std::invalid_argument("mask volume not binary");
  write_volume(m.dims, m.spacing, m.voxels, 1, path);
}

std::variant<Volume, MaskVolume> load_any_volume(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  io::expect_magic(is, "PGPV");
  const auto version = io::read_pod<std::uint32_t>(is, "version");
  if (version != kVolumeFormatVersion) throw FormatError("unsupported PGPV version " + std::to_string(version));
  const auto dtype = io::read_pod<std::uint8_t>(is, "dtype");
  if (dtype > 1) throw FormatError("unknown PGPV dtype tag " + std::to_string(dtype));
  Dims d;
  d.nz = static_cast<int>(io::read_pod<std::uint32_t>(is, "nz"));
  d.ny = static_cast<int>(io::read_pod<std::uint32_t>(is, "ny"));
  d.nx = static_cast<int>(io::read_pod<std::uint32_t>(is, "nx"));
  if (d.nz <= 0 || d.ny <= 0 || d.nx <= 0 || d.count() > (std::size_t{1} << 31))
    throw FormatError("implausible PGPV dims");
  Spacing sp;
  sp.sz = io::read_pod<float>(is, "spacing");
  sp.sy = io::read_pod<float>(is, "spacing");
  sp.sx = io::read_pod<float>(is, "spacing");
  if (dtype == 0) {
    Volume v{d, sp, std::vector<float>(d.count())};
    io::read_array<float>(is, v.voxels, "PGPV payload");
    io::expect_eof(is, "PGPV payload");
    return v;
  }
  MaskVolume m{d, sp, std::vector<std::uint8_t>(d.count())};
  io::read_array<std::uint8_t>(is, m.voxels, "PGPV payload");
  io::expect_eof(is, "PGPV payload");
  for (auto b : m.voxels)
    if (b > 1) throw FormatError("mask payload not binary");
  return m;
}

Volume load_volume(const std::filesystem::path& path) {
  auto any = load_any_volume(path);
  if (!std::holds_alternative<Volume>(any)) throw FormatError(path.string() + " holds a mask, expected an image");
  return std::get<Volume>(std::move(any));
}

MaskVolume load_mask(const std::filesystem::path& path) {
  auto any = load_any_volume(path);
  if (!std::holds_alternative<MaskVolume>(any)) throw FormatError(path.string() + " holds an image, expected a mask");
  return std::get<MaskVolume>(std::move(any));
}

}  // namespace pgvae
