#pragma once

// Binary PGM/PPM writers and the colour maps used by report panels.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace pgvae {

/// [-1, 1] -> [0, 255]: round((clamp(v, -1, 1) + 1) / 2 * 255).
std::uint8_t gray_level(float v);

/// Absolute error e mapped with t = clamp(|e| / 2, 0, 1) to
/// (clamp(3t), clamp(3t - 1), clamp(3t - 2)) * 255, rounded (black-red-yellow-white).
std::array<std::uint8_t, 3> heat_color(double abs_error);

struct RgbImage {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}
  void set(int y, int x, std::array<std::uint8_t, 3> c);
  std::array<std::uint8_t, 3> get(int y, int x) const;
};

void write_pgm(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> gray);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

}  // namespace pgvae
