#include "medusa/netpbm.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "medusa/error.hpp"

namespace medusa {
namespace {

void write_netpbm(const std::filesystem::path& path, const Image8& image, const char* magic, int channels) {
  if (image.channels != channels ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * channels) {
    throw IoError("image buffer does not match its extents for " + path.string());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << magic << '\n' << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

class HeaderReader {
 public:
  HeaderReader(const std::vector<char>& bytes, const std::filesystem::path& path) : bytes_(bytes), path_(path) {}

  int read_int(const char* field) {
    skip_space_and_comments();
    std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) fail(field, "value too large");
      ++pos_;
    }
    if (pos_ == start) fail(field, "expected a decimal integer");
    return static_cast<int>(value);
  }

  void expect_magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P' || bytes_[1] != '5') fail("magic", "expected 'P5'");
    pos_ = 2;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail("maxval", "missing whitespace before raster");
    }
    return pos_ + 1;
  }

  [[noreturn]] void fail(const char* field, const std::string& what) const {
    throw IoError("malformed P5 header in " + path_.string() + " (" + field + "): " + what);
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char ch = bytes_[pos_];
      if (ch == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<char>& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_pgm(const std::filesystem::path& path, const Image8& image) { write_netpbm(path, image, "P5", 1); }

void write_ppm(const std::filesystem::path& path, const Image8& image) { write_netpbm(path, image, "P6", 3); }

Image8 read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  HeaderReader header(bytes, path);
  header.expect_magic();
  Image8 image;
  image.width = header.read_int("width");
  image.height = header.read_int("height");
  const int maxval = header.read_int("maxval");
  if (image.width < 1 || image.height < 1) header.fail("width", "extents must be positive");
  if (maxval != 255) header.fail("maxval", "only 8-bit (255) rasters are supported");
  const std::size_t offset = header.raster_offset();
  const std::size_t count = static_cast<std::size_t>(image.width) * image.height;
  if (bytes.size() - offset < count) {
    throw IoError("truncated P5 raster in " + path.string() + ": expected " + std::to_string(count) + " bytes, found " +
                  std::to_string(bytes.size() - offset));
  }
  image.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                      bytes.begin() + static_cast<std::ptrdiff_t>(offset + count));
  return image;
}

}  // namespace medusa
