#include "pgvae/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace pgvae {

std::uint8_t gray_level(float v) {
  const double c = std::clamp(static_cast<double>(v), -1.0, 1.0);
  return static_cast<std::uint8_t>(std::lround((c + 1.0) / 2.0 * 255.0));
}

std::array<std::uint8_t, 3> heat_color(double abs_error) {
  const double t = std::clamp(std::abs(abs_error) / 2.0, 0.0, 1.0);
  auto channel = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  return {channel(3.0 * t), channel(3.0 * t - 1.0), channel(3.0 * t - 2.0)};
}

void RgbImage::set(int y, int x, std::array<std::uint8_t, 3> c) {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  rgb[i] = c[0];
  rgb[i + 1] = c[1];
  rgb[i + 2] = c[2];
}

std::array<std::uint8_t, 3> RgbImage::get(int y, int x) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

namespace {

void write_netpbm(const std::filesystem::path& path, const char* magic, int width, int height,
                  std::span<const std::uint8_t> bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << magic << '\n' << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("error writing " + path.string());
}

}  // namespace

void write_pgm(const std::filesystem::path& path, int width, int height, std::span<const std::uint8_t> gray) {
  if (gray.size() != static_cast<std::size_t>(width) * height) throw std::invalid_argument("write_pgm: size mismatch");
  write_netpbm(path, "P5", width, height, gray);
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  if (image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3)
    throw std::invalid_argument("write_ppm: size mismatch");
  write_netpbm(path, "P6", image.width, image.height, image.rgb);
}

}  // namespace pgvae
