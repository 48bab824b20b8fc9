#pragma once

// PNG read/write through libpng and JPEG read through libjpeg.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <jpeglib.h>

#include "aglnet/image.hpp"

namespace aglnet::io {

namespace fs = std::filesystem;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit raster as decoded from disk.
struct Raster8 {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

inline std::string lower_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

}  // namespace detail

inline Raster8 read_png(const fs::path& path) {
  auto file = detail::open_file(path, "rb");
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  Raster8 out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unreadable PNG " + path.string() + ": " + error);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  if (out.channels != 1 && out.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG channel count in " + path.string());
  }
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
  rows.resize(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + static_cast<std::size_t>(y) * out.width * out.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline void write_png(const fs::path& path, const Raster8& r) {
  if (r.channels != 1 && r.channels != 3) throw IoError("write_png: 1 or 3 channels expected");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto file = detail::open_file(path, "wb");
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(r.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot write PNG " + path.string() + ": " + error);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, r.width, r.height, 8, r.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < r.height; ++y) {
    rows[y] = const_cast<png_bytep>(r.pixels.data() + static_cast<std::size_t>(y) * r.width * r.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace detail {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace detail

inline Raster8 read_jpeg(const fs::path& path) {
  auto file = detail::open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  detail::JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = detail::jpeg_error_exit;
  Raster8 out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("unreadable JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = static_cast<int>(cinfo.output_width);
  out.height = static_cast<int>(cinfo.output_height);
  out.channels = cinfo.output_components;
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * out.channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

inline bool is_image_file(const fs::path& p) {
  const std::string ext = detail::lower_extension(p);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

inline Raster8 read_raster(const fs::path& path) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
  throw IoError("unsupported image format: " + path.string());
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline RgbImage to_rgb(const Raster8& r) {
  RgbImage img(r.height, r.width);
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * r.width + x) * r.channels;
      for (int c = 0; c < 3; ++c) img.channels[c](y, x) = r.pixels[base + (r.channels == 3 ? c : 0)] / 255.0;
    }
  }
  return img;
}

/// Single channel (luma for colour input) as a plane in [0,1].
inline Plane to_plane(const Raster8& r) {
  if (r.channels == 1) {
    Plane p(r.height, r.width);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r.pixels[i] / 255.0;
    return p;
  }
  return to_gray(to_rgb(r));
}

inline Grid<std::uint8_t> to_gray8(const Raster8& r) {
  Grid<std::uint8_t> g(r.height, r.width);
  if (r.channels == 1) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = r.pixels[i];
    return g;
  }
  const Plane p = to_plane(r);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = to_byte(p[i]);
  return g;
}

inline RgbImage read_rgb(const fs::path& path) { return to_rgb(read_raster(path)); }
inline Plane read_plane(const fs::path& path) { return to_plane(read_raster(path)); }
inline BinaryMask read_mask(const fs::path& path) { return BinaryMask::from_gray8(to_gray8(read_raster(path))); }

inline void write_plane(const fs::path& path, const Plane& p) {
  Raster8 r{p.height(), p.width(), 1, std::vector<std::uint8_t>(p.size())};
  for (std::size_t i = 0; i < p.size(); ++i) r.pixels[i] = to_byte(p[i]);
  write_png(path, r);
}

inline void write_rgb(const fs::path& path, const RgbImage& img) {
  Raster8 r{img.height(), img.width(), 3, std::vector<std::uint8_t>(static_cast<std::size_t>(img.height()) * img.width() * 3)};
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        r.pixels[(static_cast<std::size_t>(y) * img.width() + x) * 3 + c] = to_byte(img.channels[c](y, x));
      }
    }
  }
  write_png(path, r);
}

inline void write_mask(const fs::path& path, const BinaryMask& m) {
  Plane p = m.to_plane();
  write_plane(path, p);
}

}  // namespace aglnet::io
