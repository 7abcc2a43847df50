#include <doctest.h>

#include <cmath>
#include <fstream>

#include "pgvae/binary_io.hpp"
#include "pgvae/localizer.hpp"
#include "test_support.hpp"

using namespace pgvae;
using testing::Gen;

namespace {

ImageSlice constant_slice(int h, int w, float v) { return {h, w, std::vector<float>(static_cast<std::size_t>(h) * w, v)}; }

double norm(const EmbeddingVector& e) {
  double s = 0.0;
  for (float v : e.values) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

EmbeddingVector unit(std::vector<float> v) {
  double n = 0.0;
  for (float x : v) n += static_cast<double>(x) * x;
  for (float& x : v) x = static_cast<float>(x / std::sqrt(n));
  return {v};
}

SimilarityMap map_of(int rows, int cols, std::vector<double> scores) { return {rows, cols, 4, 4, std::move(scores)}; }

}  // namespace

TEST_CASE("text embeddings are deterministic and unit norm") {
  const auto a = embed_text("left adrenal gland");
  CHECK(a == embed_text("left adrenal gland"));
  CHECK(a.dim() == 64);
  Gen g(1);
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz -";
  for (int i = 0; i < 200; ++i) {
    std::string s;
    const int len = g.integer(1, 30);
    for (int k = 0; k < len; ++k) s.push_back(alphabet[static_cast<std::size_t>(g.integer(0, 27))]);
    CHECK(norm(embed_text(s)) == doctest::Approx(1.0).epsilon(1e-5));
  }
  CHECK(cosine_similarity(embed_text("left adrenal gland"), embed_text("liver")) < 0.99);
  CHECK_THROWS_AS(embed_text(""), std::invalid_argument);
}

TEST_CASE("image grid shape and translation invariance") {
  const auto flat = constant_slice(64, 64, 0.1f);
  const auto grid = embed_image_grid(flat, 32, 16);
  CHECK(grid.rows == 3);
  CHECK(grid.cols == 3);
  for (const auto& cell : grid.cells) CHECK(cell == grid.cells.front());

  auto blob = flat;
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) blob.pixels[static_cast<std::size_t>(y) * 64 + x] = 0.9f;
  const auto g2 = embed_image_grid(blob, 16, 16);
  CHECK(cosine_similarity(g2.at(0, 0), g2.at(3, 3)) < 1.0 - 1e-3);
  CHECK(norm(g2.at(0, 0)) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK_THROWS_AS(embed_image_grid(flat, 65, 16), std::invalid_argument);
}

TEST_CASE("cosine similarity hand cases") {
  const std::vector<float> v{0.3f, -1.2f, 2.0f};
  CHECK(cosine_similarity(v, v) == doctest::Approx(1.0));
  const std::vector<float> e1{1, 0, 0}, e2{0, 1, 0};
  CHECK(cosine_similarity(e1, e2) == 0.0);
  const std::vector<float> a{1, 2, 2}, b{2, 1, 2};
  CHECK(cosine_similarity(a, b) == doctest::Approx(8.0 / 9.0).epsilon(1e-7));
  const std::vector<float> zero{0, 0, 0};
  CHECK_THROWS_AS(cosine_similarity(a, zero), std::invalid_argument);
  const std::vector<float> short_v{1, 2};
  CHECK_THROWS_AS(cosine_similarity(a, short_v), std::invalid_argument);
}

TEST_CASE("cosine similarity is symmetric and bounded") {
  Gen g(2);
  for (int i = 0; i < 1000; ++i) {
    const int d = g.integer(1, 16);
    std::vector<float> a(d), b(d);
    for (auto& v : a) v = static_cast<float>(g.uniform(-5, 5));
    for (auto& v : b) v = static_cast<float>(g.uniform(-5, 5));
    a[0] += 0.5f;  // keep away from the zero vector
    b[0] += 0.5f;
    const double ab = cosine_similarity(a, b), ba = cosine_similarity(b, a);
    CHECK(ab == ba);
    CHECK(ab >= -1.0);
    CHECK(ab <= 1.0);
  }
}

TEST_CASE("similarity map matches the scalar operation per cell") {
  const auto t = unit({1, 2, 3, 4});
  EmbeddingGrid same{2, 2, 4, 4, {t, t, t, t}};
  for (double s : similarity_map(t, same).scores) CHECK(s == doctest::Approx(1.0));
  const auto o = unit({-2, 1, -4, 3});
  EmbeddingGrid ortho{1, 2, 4, 4, {o, o}};
  for (double s : similarity_map(t, ortho).scores) CHECK(s == doctest::Approx(0.0));

  Gen g(3);
  EmbeddingGrid mixed{3, 4, 8, 4, {}};
  for (int i = 0; i < 12; ++i) mixed.cells.push_back(unit({static_cast<float>(g.uniform(-1, 1)), 1.0f,
                                                            static_cast<float>(g.uniform(-1, 1)), 0.5f}));
  const auto m = similarity_map(t, mixed);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) CHECK(m.at(r, c) == doctest::Approx(cosine_similarity(t, mixed.at(r, c))).epsilon(1e-6));
  CHECK(m.center_y(2) == 2 * 4 + 4);
  EmbeddingGrid wrong{1, 1, 4, 4, {unit({1, 0})}};
  CHECK_THROWS_AS(similarity_map(t, wrong), std::invalid_argument);
}

TEST_CASE("ROI selection") {
  std::vector<double> s(25, 0.0);
  s[2 * 5 + 3] = 0.9;
  const auto m = map_of(5, 5, s);
  const auto one = select_roi(m, 1, -1.0, 0.0);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == ROI{2 * 4 + 2, 3 * 4 + 2, 0.9});
  CHECK(select_roi(m, 3, 0.95, 0.0).empty());

  // Two equal peaks five cells (20 px) apart, reported in (row, col) order.
  std::vector<double> t(8, 0.1);
  t[6] = 0.8;
  t[1] = 0.8;
  const auto peaks = select_roi(map_of(1, 8, t), 2, 0.5, 10.0);
  REQUIRE(peaks.size() == 2);
  CHECK(peaks[0].center_x == 1 * 4 + 2);
  CHECK(peaks[1].center_x == 6 * 4 + 2);
  // A radius reaching the spacing suppresses the second peak.
  CHECK(select_roi(map_of(1, 8, t), 2, 0.5, 20.0).size() == 1);
  CHECK_THROWS_AS(select_roi(m, 0, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("patch extraction is aligned and clamped inward") {
  ImageSlice img{128, 128, std::vector<float>(128 * 128)};
  MaskSlice mask{128, 128, std::vector<std::uint8_t>(128 * 128, 0)};
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x) img.pixels[static_cast<std::size_t>(y) * 128 + x] = static_cast<float>(y * 128 + x) / 16384.0f;
  for (int y = 60; y < 66; ++y)
    for (int x = 70; x < 75; ++x) mask.pixels[static_cast<std::size_t>(y) * 128 + x] = 1;

  const std::vector<ROI> centre{{64, 64, 1.0}};
  const auto p = extract_patches(img, mask, centre, 64, 3, 5);
  REQUIRE(p.size() == 1);
  CHECK(p[0].image[0] == img.at(32, 32));
  CHECK(p[0].image[63 * 64 + 63] == img.at(95, 95));
  CHECK(p[0].source == PatchSource{3, 5, 64, 64});
  std::size_t ones = 0;
  for (auto v : p[0].mask) ones += v;
  CHECK(ones == 30u);

  const std::vector<ROI> corner{{0, 0, 1.0}};
  const auto q = extract_patches(img, mask, corner, 64);
  CHECK(q[0].image[0] == img.at(0, 0));
  CHECK(q[0].image[63 * 64 + 63] == img.at(63, 63));
  CHECK(q[0].source.center_y == 32);
  CHECK(crop_origin(127, 127, 64, 128, 128) == std::pair{64, 64});
  CHECK_THROWS_AS(extract_patches(img, mask, corner, 256), std::invalid_argument);
}

TEST_CASE("localize_slice returns k patches for a phantom slice") {
  const auto [vol, mask] = generate_phantom(default_phantom_spec(1));
  const auto norm_vol = normalize_intensity(vol);
  const int z = 16;
  LocalizerOptions opts;
  const auto patches = localize_slice(slice_axial(norm_vol, z), slice_axial(mask, z), "adrenal gland", opts,
                                      TrigramTextEmbedder{}, DescriptorImageEmbedder{}, 0, z);
  CHECK(patches.size() == 4);
  for (const auto& p : patches) {
    CHECK(p.size == 64);
    CHECK(p.source.z == z);
  }
}

TEST_CASE("patch files round-trip and reject corruption") {
  testing::TempDir dir("pgpp");
  Gen g(4);
  PatchPair p = g.patch(16);
  p.provenance = Provenance::Synthetic;
  save_patch(p, dir / "a.pgpp");
  const auto back = load_patch(dir / "a.pgpp");
  CHECK(back.image == p.image);
  CHECK(back.mask == p.mask);
  CHECK(back.provenance == Provenance::Synthetic);

  {
    std::ofstream os(dir / "b.pgpp", std::ios::binary);
    std::ifstream is(dir / "a.pgpp", std::ios::binary);
    os << is.rdbuf() << 'x';
  }
  CHECK_THROWS_AS(load_patch(dir / "b.pgpp"), FormatError);
  std::filesystem::remove(dir / "b.pgpp");

  PatchPair bad = p;
  bad.image[0] = 2.0f;
  CHECK_THROWS_AS(save_patch(bad, dir / "c.pgpp"), std::invalid_argument);

  save_patch(g.patch(16), dir / "0.pgpp");
  const auto all = load_patch_dir(dir.path());
  REQUIRE(all.size() == 2u);
  CHECK(all[1].image == p.image);
}
