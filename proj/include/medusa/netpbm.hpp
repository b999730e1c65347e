#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace medusa {

/// 8-bit grayscale (P5) or RGB (P6) raster, row-major.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;
};

/// "P5\n<w> <h>\n255\n" followed by w*h bytes.
void write_pgm(const std::filesystem::path& path, const Image8& image);
/// "P6\n<w> <h>\n255\n" followed by 3*w*h bytes.
void write_ppm(const std::filesystem::path& path, const Image8& image);
/// Reads a binary P5 file with maxval 255. Throws IoError describing the
/// first malformed header field.
Image8 read_pgm(const std::filesystem::path& path);

}  // namespace medusa
