#include "longscape/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace longscape {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

RawImage read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  check(fp != nullptr, "cannot open '", path, "' for reading");

  png_byte header[8];
  check(std::fread(header, 1, 8, fp.get()) == 8 && png_sig_cmp(header, 0, 8) == 0,
        "'", path, "' is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, "png reader allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail("png info allocation failed");
  }
  RawImage img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("failed to decode '", path, "'");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_byte depth = png_get_bit_depth(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (depth == 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail("'", path, "': unsupported bit depth 16, expected 8-bit RGB or grayscale");
  }

  // Normalize palette/gray/alpha variants onto plain 8-bit RGB.
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  img.width = static_cast<int64_t>(png_get_image_width(png, info));
  img.height = static_cast<int64_t>(png_get_image_height(png, info));
  check(img.width >= 1 && img.height >= 1, "'", path, "': empty image");
  check(png_get_channels(png, info) == 3, "'", path, "': unexpected channel count after decode");

  img.rgb.resize(static_cast<size_t>(3 * img.width * img.height));
  rows.resize(static_cast<size_t>(img.height));
  for (int64_t y = 0; y < img.height; ++y)
    rows[static_cast<size_t>(y)] = img.rgb.data() + y * img.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::string& path, const RawImage& img) {
  check(img.width >= 1 && img.height >= 1 &&
            img.rgb.size() == static_cast<size_t>(3 * img.width * img.height),
        "write_png: malformed image buffer");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  check(fp != nullptr, "cannot open '", path, "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, "png writer allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail("png info allocation failed");
  }
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail("failed to encode '", path, "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t y = 0; y < img.height; ++y)
    rows[static_cast<size_t>(y)] =
        const_cast<png_bytep>(img.rgb.data() + y * img.width * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace longscape
