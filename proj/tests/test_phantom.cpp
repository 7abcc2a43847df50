#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "pgvae/binary_io.hpp"
#include "pgvae/dataset.hpp"
#include "pgvae/phantom.hpp"
#include "test_support.hpp"

using namespace pgvae;

namespace {

PhantomSpec single_target(double rz, double ry, double rx) {
  PhantomSpec s;
  s.noise_std = 0.0;
  s.background = {-100.0, -100.0};
  s.organs = {{"target", {{10.0 / 32, 10.0 / 32}, {0.5, 0.5}, {0.5, 0.5}}, {{rz, rz}, {ry, ry}, {rx, rx}},
               {200.0, 200.0}, true}};
  return s;
}

std::size_t count_ones(const std::vector<std::uint8_t>& v) {
  std::size_t n = 0;
  for (auto b : v) n += b;
  return n;
}

}  // namespace

TEST_CASE("no organs and no noise gives a constant volume and empty mask") {
  PhantomSpec s;
  s.noise_std = 0.0;
  s.background = {-100.0, -100.0};
  const auto [vol, mask] = generate_phantom(s);
  CHECK(vol.dims == Dims{32, 128, 128});
  for (float v : vol.voxels) REQUIRE(v == -100.0f);
  CHECK(count_ones(mask.voxels) == 0);
}

TEST_CASE("same spec and seed produce bit-identical phantoms") {
  const auto a = generate_phantom(default_phantom_spec(9));
  const auto b = generate_phantom(default_phantom_spec(9));
  CHECK(a.first.voxels == b.first.voxels);
  CHECK(a.second.voxels == b.second.voxels);
  const auto c = generate_phantom(default_phantom_spec(10));
  CHECK(a.first.voxels != c.first.voxels);
}

TEST_CASE("target voxel count follows the ellipsoid equation") {
  const auto spec = single_target(2, 4, 3);
  const auto [vol, mask] = generate_phantom(spec);
  // Brute-force lattice count for the same centre.
  const double cz = 10.0, cy = 64.0, cx = 64.0;
  std::size_t lattice = 0;
  for (int z = 0; z < 32; ++z)
    for (int y = 0; y < 128; ++y)
      for (int x = 0; x < 128; ++x) {
        const double dz = (z - cz) / 2, dy = (y - cy) / 4, dx = (x - cx) / 3;
        lattice += dz * dz + dy * dy + dx * dx <= 1.0;
      }
  CHECK(count_ones(mask.voxels) == lattice);
  const double analytic = 4.0 / 3.0 * std::numbers::pi * 2 * 4 * 3;
  CHECK(std::abs(static_cast<double>(lattice) - analytic) <= 0.2 * analytic);
  // Targets are painted last, so every mask voxel carries the target intensity.
  for (std::size_t i = 0; i < mask.voxels.size(); ++i)
    if (mask.voxels[i]) REQUIRE(vol.voxels[i] == 100.0f);
}

TEST_CASE("default phantoms respect the target fraction bound") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto spec = default_phantom_spec(seed);
    const auto [vol, mask] = generate_phantom(spec);
    const auto n = count_ones(mask.voxels);
    CHECK(n > 0);
    CHECK(static_cast<double>(n) <= spec.max_target_fraction * static_cast<double>(vol.dims.count()));
  }
}

TEST_CASE("phantom generation rejects small dims and infeasible bounds") {
  PhantomSpec small;
  small.dims = {8, 64, 64};
  CHECK_THROWS_AS(generate_phantom(small), std::invalid_argument);
  auto tight = single_target(6, 10, 10);
  tight.max_target_fraction = 1e-4;
  CHECK_THROWS_AS(generate_phantom(tight), std::invalid_argument);
}

TEST_CASE("intensity window maps endpoints, midpoint and clamps") {
  Volume v{{1, 1, 4}, {}, {-200.0f, 50.0f, 300.0f, 800.0f}};
  const auto n = normalize_intensity(v, -200.0, 300.0);
  CHECK(n.voxels[0] == -1.0f);
  CHECK(n.voxels[1] == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(n.voxels[2] == 1.0f);
  CHECK(n.voxels[3] == 1.0f);
  CHECK_THROWS_AS(normalize_intensity(v, 10.0, 10.0), std::invalid_argument);
}

TEST_CASE("axial slicing") {
  PhantomSpec s;
  s.noise_std = 0.0;
  s.background = {-50.0, -50.0};
  const auto [vol, mask] = generate_phantom(s);
  const auto sl = slice_axial(vol, 31);
  CHECK(sl.height == 128);
  CHECK(sl.width == 128);
  for (float p : sl.pixels) REQUIRE(p == -50.0f);
  CHECK_THROWS_AS(slice_axial(vol, 32), std::out_of_range);
  CHECK_THROWS_AS(slice_axial(mask, -1), std::out_of_range);

  const auto [tv, tm] = generate_phantom(single_target(2, 4, 3));
  CHECK(count_ones(slice_axial(tm, 10).pixels) > 0);
  CHECK(count_ones(slice_axial(tm, 20).pixels) == 0);
}

TEST_CASE("volume files round-trip byte-exactly") {
  testing::TempDir dir("pgpv");
  const auto [vol, mask] = generate_phantom(default_phantom_spec(3));
  save_volume(vol, dir / "v.pgpv");
  save_volume(mask, dir / "m.pgpv");
  const auto v2 = load_volume(dir / "v.pgpv");
  const auto m2 = load_mask(dir / "m.pgpv");
  CHECK(v2.dims == vol.dims);
  CHECK(v2.spacing == vol.spacing);
  CHECK(std::memcmp(v2.voxels.data(), vol.voxels.data(), vol.voxels.size() * sizeof(float)) == 0);
  CHECK(m2.voxels == mask.voxels);
  CHECK_THROWS_AS(load_mask(dir / "v.pgpv"), FormatError);
  CHECK_THROWS_AS(load_volume(dir / "m.pgpv"), FormatError);
}

TEST_CASE("malformed volume files are rejected") {
  testing::TempDir dir("pgpv-bad");
  {
    std::ofstream os(dir / "magic.pgpv", std::ios::binary);
    os << "XXXX" << std::string(64, '\0');
  }
  CHECK_THROWS_WITH_AS(load_any_volume(dir / "magic.pgpv"), doctest::Contains("magic"), FormatError);

  // 2x2x2 f32 needs 32 payload bytes; write 31.
  {
    std::ofstream os(dir / "short.pgpv", std::ios::binary);
    os.write("PGPV", 4);
    io::write_pod<std::uint32_t>(os, kVolumeFormatVersion);
    io::write_pod<std::uint8_t>(os, 0);
    for (int i = 0; i < 3; ++i) io::write_pod<std::uint32_t>(os, 2);
    for (int i = 0; i < 3; ++i) io::write_pod<float>(os, 1.0f);
    os << std::string(31, '\0');
  }
  CHECK_THROWS_WITH_AS(load_any_volume(dir / "short.pgpv"), doctest::Contains("truncated"), FormatError);
}

TEST_CASE("dataset patches come from target slices and hold target pixels") {
  const auto [vol, mask] = generate_phantom(default_phantom_spec(4));
  DatasetOptions opts;
  const auto patches = patches_from_volume(vol, mask, 7, opts);
  REQUIRE(!patches.empty());
  CHECK(patches.size() <= static_cast<std::size_t>(opts.max_patches_per_volume));
  for (const auto& p : patches) {
    CHECK(p.size == 64);
    CHECK(p.source.volume_id == 7);
    CHECK(count_ones(p.mask) > 0);
    for (float v : p.image) REQUIRE((v >= -1.0f && v <= 1.0f));
  }
  CHECK(patches_from_volume(vol, mask, 7, opts) == patches);
}

TEST_CASE("phantom dataset keeps train and eval volumes disjoint") {
  PhantomDatasetSpec spec;
  spec.train_volumes = 3;
  spec.eval_volumes = 2;
  const auto ds = build_phantom_dataset(spec);
  REQUIRE(!ds.train.empty());
  REQUIRE(!ds.eval.empty());
  for (const auto& p : ds.train) CHECK(p.source.volume_id < 3);
  for (const auto& p : ds.eval) CHECK(p.source.volume_id >= 3);
}
