#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sketchstress/image.hpp"

namespace sketchstress {

enum class PngDepth { k8 = 8, k16 = 16 };

namespace detail {

struct PngBuffer {
  std::vector<unsigned char>* bytes = nullptr;
  std::size_t offset = 0;
  const unsigned char* input = nullptr;
  std::size_t input_size = 0;
};

inline void png_write_callback(png_structp png, png_bytep data, png_size_t length) {
  auto* buf = static_cast<PngBuffer*>(png_get_io_ptr(png));
  buf->bytes->insert(buf->bytes->end(), data, data + length);
}

inline void png_flush_callback(png_structp) {}

inline void png_read_callback(png_structp png, png_bytep out, png_size_t length) {
  auto* buf = static_cast<PngBuffer*>(png_get_io_ptr(png));
  if (buf->offset + length > buf->input_size) png_error(png, "truncated PNG");
  std::memcpy(out, buf->input + buf->offset, length);
  buf->offset += length;
}

// libpng reports errors by longjmp back to the setjmp in the calling
// function; the message is stashed here for the exception thrown there.
inline thread_local std::string png_last_error;

inline void png_error_callback(png_structp png, png_const_charp message) {
  png_last_error = message ? message : "unknown error";
  png_longjmp(png, 1);
}
inline void png_warning_callback(png_structp, png_const_charp) {}

inline unsigned to_level(float v, unsigned max_level) {
  const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<unsigned>(std::lround(clamped * max_level));
}

}  // namespace detail

/// Encodes a 1- or 3-channel [0,1] image as 8- or 16-bit PNG.
inline std::vector<unsigned char> encode_png(const ImageF& img, PngDepth depth) {
  require(img.channels == 1 || img.channels == 3, ErrorCode::kInvalidArgument, "PNG encoder expects 1 or 3 channels");
  require(img.width > 0 && img.height > 0, ErrorCode::kInvalidArgument, "PNG encoder: empty image");
  std::vector<unsigned char> bytes;
  detail::PngBuffer buf{&bytes};
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_callback,
                                            detail::png_warning_callback);
  png_infop info = png_create_info_struct(png);
  const int bits = static_cast<int>(depth);
  const unsigned max_level = depth == PngDepth::k8 ? 255u : 65535u;
  const std::size_t bpp = static_cast<std::size_t>(img.channels) * (bits / 8);
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * bpp);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "PNG encode: " + detail::png_last_error);
  }
  {
    png_set_write_fn(png, &buf, detail::png_write_callback, detail::png_flush_callback);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), bits,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (int r = 0; r < img.height; ++r) {
      for (int c = 0; c < img.width; ++c) {
        for (int k = 0; k < img.channels; ++k) {
          const unsigned level = detail::to_level(img.at(c, r, k), max_level);
          const std::size_t off = (static_cast<std::size_t>(c) * img.channels + k) * (bits / 8);
          if (bits == 8) {
            row[off] = static_cast<unsigned char>(level);
          } else {
            row[off] = static_cast<unsigned char>(level >> 8);  // PNG is big-endian
            row[off + 1] = static_cast<unsigned char>(level & 0xff);
          }
        }
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  return bytes;
}

struct DecodedPng {
  ImageF image;
  int bit_depth = 8;
};

/// Decodes gray/RGB(A) PNGs into [0,1] floats; alpha is dropped.
inline DecodedPng decode_png(const unsigned char* data, std::size_t size) {
  require(size >= 8 && png_sig_cmp(data, 0, 8) == 0, ErrorCode::kIo, "not a PNG stream");
  detail::PngBuffer buf;
  buf.input = data;
  buf.input_size = size;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_error_callback,
                                           detail::png_warning_callback);
  png_infop info = png_create_info_struct(png);
  DecodedPng out;
  std::vector<unsigned char> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kIo, "PNG decode: " + detail::png_last_error);
  }
  {
    png_set_read_fn(png, &buf, detail::png_read_callback);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    int bits = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && bits < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    bits = png_get_bit_depth(png, info);
    const int channels = png_get_channels(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    out.bit_depth = bits;
    out.image = ImageF(w, h, channels);
    row.resize(png_get_rowbytes(png, info));
    const float scale = bits == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
    for (int r = 0; r < h; ++r) {
      png_read_row(png, row.data(), nullptr);
      for (int c = 0; c < w; ++c) {
        for (int k = 0; k < channels; ++k) {
          const std::size_t off = static_cast<std::size_t>(c) * channels + k;
          const unsigned level = bits == 16 ? (static_cast<unsigned>(row[2 * off]) << 8) | row[2 * off + 1] : row[off];
          out.image.at(c, r, k) = static_cast<float>(level) * scale;
        }
      }
    }
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

inline void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + tmp);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    require(static_cast<bool>(out), ErrorCode::kIo, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_png(const std::filesystem::path& path, const ImageF& img, PngDepth depth) {
  const auto bytes = encode_png(img, depth);
  write_file_atomic(path, bytes.data(), bytes.size());
}

inline DecodedPng read_png(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_png(bytes.data(), bytes.size());
}

}  // namespace sketchstress
