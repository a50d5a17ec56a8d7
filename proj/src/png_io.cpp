#include "lfsr/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace lfsr::png {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void on_error(png_structp, png_const_charp msg) { throw std::runtime_error(msg); }
void on_warning(png_structp, png_const_charp) {}

void write_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}
void flush_bytes(png_structp) {}

// Emits rows through an already-configured write struct.
void write_rows(png_structp png, png_infop info, const Pixels& pixels, int bit_depth) {
  const int w = static_cast<int>(pixels.cols()), h = static_cast<int>(pixels.rows());
  png_set_IHDR(png, info, w, h, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const double hi = bit_depth == 16 ? 65535.0 : 255.0;
  const int bytes = bit_depth / 8;
  std::vector<png_byte> row(static_cast<std::size_t>(w) * bytes);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = pixels(y, x);
      const auto q = static_cast<unsigned>(std::lround(std::clamp(std::isfinite(v) ? v : 0.0, 0.0, hi)));
      if (bit_depth == 16) {
        row[2 * x] = static_cast<png_byte>(q >> 8);  // big-endian samples
        row[2 * x + 1] = static_cast<png_byte>(q & 0xff);
      } else {
        row[x] = static_cast<png_byte>(q);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
}

void write_file(const std::filesystem::path& path, const Pixels& pixels, int bit_depth) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, fp.get());
    write_rows(png, info, pixels, bit_depth);
  } catch (const std::exception& e) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Pixels read(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ParseError(path.string(), "cannot open image");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw ParseError(path.string(), "not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  png_infop info = png_create_info_struct(png);
  Pixels out;
  try {
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY) throw std::runtime_error("expected single-channel grayscale PNG");
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int eff_depth = png_get_bit_depth(png, info);
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    out.resize(h, w);
    for (int y = 0; y < h; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int x = 0; x < w; ++x)
        out(y, x) = eff_depth == 16 ? static_cast<double>((row[2 * x] << 8) | row[2 * x + 1])
                                    : static_cast<double>(row[x]);
    }
    png_read_end(png, nullptr);
  } catch (const std::exception& e) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(path.string(), e.what());
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write16(const std::filesystem::path& path, const Pixels& pixels) { write_file(path, pixels, 16); }
void write8(const std::filesystem::path& path, const Pixels& pixels) { write_file(path, pixels, 8); }

std::vector<unsigned char> encode8(const Pixels& pixels) {
  std::vector<unsigned char> bytes;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &bytes, write_bytes, flush_bytes);
    write_rows(png, info, pixels, 8);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return bytes;
}

}  // namespace lfsr::png
