#include <algorithm>
#include <fstream>

#include "pgvae/binary_io.hpp"
#include "pgvae/patch.hpp"

namespace pgvae {

void validate_patch(const PatchPair& p) {
  const std::size_t n = static_cast<std::size_t>(p.size) * p.size;
  if (p.size <= 0 || p.image.size() != n || p.mask.size() != n)
    throw std::invalid_argument("patch image/mask shape mismatch");
  for (float v : p.image)
    if (!(v >= -1.0f && v <= 1.0f)) throw std::invalid_argument("patch image outside [-1,1]");
  for (auto m : p.mask)
    if (m > 1) throw std::invalid_argument("patch mask not binary");
}

template <typename T>
Tensor<T> stack_images(std::span<const PatchPair> batch) {
  if (batch.empty()) throw ShapeError("empty batch");
  const int ps = batch.front().size;
  Tensor<T> out({static_cast<int>(batch.size()), 1, ps, ps});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].size != ps) throw ShapeError("mixed patch sizes in batch");
    auto dst = out.sample(static_cast<int>(i));
    std::transform(batch[i].image.begin(), batch[i].image.end(), dst.begin(),
                   [](float v) { return static_cast<T>(v); });
  }
  return out;
}

template <typename T>
Tensor<T> stack_masks(std::span<const PatchPair> batch) {
  if (batch.empty()) throw ShapeError("empty batch");
  const int ps = batch.front().size;
  Tensor<T> out({static_cast<int>(batch.size()), 1, ps, ps});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].size != ps) throw ShapeError("mixed patch sizes in batch");
    auto dst = out.sample(static_cast<int>(i));
    std::transform(batch[i].mask.begin(), batch[i].mask.end(), dst.begin(),
                   [](std::uint8_t v) { return static_cast<T>(v); });
  }
  return out;
}

template Tensor<float> stack_images<float>(std::span<const PatchPair>);
template Tensor<double> stack_images<double>(std::span<const PatchPair>);
template Tensor<float> stack_masks<float>(std::span<const PatchPair>);
template Tensor<double> stack_masks<double>(std::span<const PatchPair>);

void save_patch(const PatchPair& p, const std::filesystem::path& path) {
  validate_patch(p);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write("PGPP", 4);
  io::write_pod<std::uint32_t>(os, kPatchFormatVersion);
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.size));
  io::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(p.provenance));
  io::write_array<float>(os, p.image);
  io::write_array<std::uint8_t>(os, p.mask);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

PatchPair load_patch(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  io::expect_magic(is, "PGPP");
  const auto version = io::read_pod<std::uint32_t>(is, "version");
  if (version != kPatchFormatVersion)
    throw FormatError("unsupported PGPP version " + std::to_string(version));
  const auto ps = io::read_pod<std::uint32_t>(is, "patch size");
  if (ps == 0 || ps > 4096) throw FormatError("implausible patch size");
  const auto prov = io::read_pod<std::uint8_t>(is, "provenance");
  if (prov > 1) throw FormatError("unknown provenance tag");
  PatchPair p;
  p.size = static_cast<int>(ps);
  p.provenance = static_cast<Provenance>(prov);
  p.image.resize(static_cast<std::size_t>(ps) * ps);
  p.mask.resize(static_cast<std::size_t>(ps) * ps);
  io::read_array<float>(is, p.image, "patch image");
  io::read_array<std::uint8_t>(is, p.mask, "patch mask");
  io::expect_eof(is, "patch payload");
  for (auto m : p.mask)
    if (m > 1) throw FormatError("patch mask not binary");
  return p;
}

std::vector<PatchPair> load_patch_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgpp") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<PatchPair> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_patch(f));
  return out;
}

}  // namespace pgvae
