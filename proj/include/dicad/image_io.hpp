#pragma once

// 8-bit image files: PNG (libpng), JPEG read (libjpeg) and binary PGM/PPM.
// Images load as CHW float tensors in [0,1] with three channels; masks load
// as HW tensors thresholded at >127.

#include <png.h>
#include <stdio.h>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <setjmp.h>
#include <stdexcept>
#include <string>
#include <vector>

#include "dicad/checkpoint.hpp"
#include "dicad/tensor.hpp"

namespace dicad {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RawImage {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;  // interleaved
};

namespace detail {

inline std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return e;
}

inline RawImage read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw ImageError(path.string() + ": not a readable PNG (" + img.message + ")");
  const bool gray = !(img.format & PNG_FORMAT_FLAG_COLOR);
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  RawImage out{img.width, img.height, gray ? 1u : 3u, {}};
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ImageError(path.string() + ": PNG decode failed (" + msg + ")");
  }
  return out;
}

struct JpegErr {
  jpeg_error_mgr mgr;
  jmp_buf jump;
};

inline RawImage read_jpeg(const std::filesystem::path& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw ImageError("cannot open " + path.string());
  jpeg_decompress_struct cinfo;
  JpegErr err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = [](j_common_ptr c) { longjmp(reinterpret_cast<JpegErr*>(c->err)->jump, 1); };
  RawImage out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);
    throw ImageError(path.string() + ": not a readable JPEG");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.channels = std::size_t(cinfo.output_components);
  out.pixels.resize(out.width * out.height * out.channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + std::size_t(cinfo.output_scanline) * out.width * out.channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(f);
  return out;
}

inline RawImage read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::string magic;
  is >> magic;
  if (!is || (magic != "P5" && magic != "P6")) throw ImageError(path.string() + ": not a binary PGM/PPM file");
  auto next_int = [&]() {
    long v = -1;
    while (is >> std::ws && is.peek() == '#') is.ignore(1 << 20, '\n');
    is >> v;
    if (!is || v < 0) throw ImageError(path.string() + ": malformed PNM header");
    return std::size_t(v);
  };
  RawImage out;
  out.width = next_int();
  out.height = next_int();
  if (next_int() != 255) throw ImageError(path.string() + ": only 8-bit PNM is supported");
  is.get();
  out.channels = magic == "P5" ? 1 : 3;
  out.pixels.resize(out.width * out.height * out.channels);
  if (!is.read(reinterpret_cast<char*>(out.pixels.data()), std::streamsize(out.pixels.size())))
    throw ImageError(path.string() + ": truncated PNM data");
  return out;
}

}  // namespace detail

inline RawImage read_raw_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ImageError("image not found: " + path.string());
  const std::string ext = detail::lower_ext(path);
  if (ext == ".png") return detail::read_png(path);
  if (ext == ".jpg" || ext == ".jpeg") return detail::read_jpeg(path);
  if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return detail::read_pnm(path);
  throw ImageError(path.string() + ": unsupported image format '" + ext + "'");
}

// CHW, three channels, values k/255.
inline Tensor read_image(const std::filesystem::path& path) {
  const RawImage raw = read_raw_image(path);
  Tensor t(Shape{3, raw.height, raw.width});
  for (std::size_t y = 0; y < raw.height; ++y)
    for (std::size_t x = 0; x < raw.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t sc = raw.channels == 1 ? 0 : c;
        t.at(c, y, x) = float(raw.pixels[(y * raw.width + x) * raw.channels + sc]) / 255.0f;
      }
  return t;
}

// HW binary mask: 1 where the (first channel) value exceeds 127.
inline Tensor read_mask(const std::filesystem::path& path) {
  const RawImage raw = read_raw_image(path);
  Tensor t(Shape{raw.height, raw.width});
  for (std::size_t i = 0; i < raw.height * raw.width; ++i) t[i] = raw.pixels[i * raw.channels] > 127 ? 1.0f : 0.0f;
  return t;
}

inline std::uint8_t to_byte(float v) { return std::uint8_t(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

// Writes a CHW (1 or 3 channels) or HW tensor in [0,1] as 8-bit PNG or PNM.
inline void write_image(const std::filesystem::path& path, const Tensor& t) {
  std::size_t C = 1, H, W;
  if (t.rank() == 3) {
    C = t.dim(0);
    H = t.dim(1);
    W = t.dim(2);
  } else if (t.rank() == 2) {
    H = t.dim(0);
    W = t.dim(1);
  } else {
    throw ImageError("write_image expects CHW or HW, got " + shape_str(t.shape()));
  }
  if (C != 1 && C != 3) throw ImageError("write_image supports 1 or 3 channels");
  std::vector<std::uint8_t> px(H * W * C);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) px[(y * W + x) * C + c] = to_byte(t[(c * H + y) * W + x]);
  const std::string ext = detail::lower_ext(path);
  if (ext == ".png") {
    io::write_atomic(path, [&](std::ostream& os) {
      png_image img;
      std::memset(&img, 0, sizeof img);
      img.version = PNG_IMAGE_VERSION;
      img.width = png_uint_32(W);
      img.height = png_uint_32(H);
      img.format = C == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
      png_alloc_size_t size = 0;
      if (!png_image_write_to_memory(&img, nullptr, &size, 0, px.data(), 0, nullptr))
        throw ImageError(path.string() + ": PNG encode failed");
      std::vector<char> buf(size);
      if (!png_image_write_to_memory(&img, buf.data(), &size, 0, px.data(), 0, nullptr))
        throw ImageError(path.string() + ": PNG encode failed");
      os.write(buf.data(), std::streamsize(size));
    });
  } else if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
    io::write_atomic(path, [&](std::ostream& os) {
      os << (C == 1 ? "P5" : "P6") << "\n" << W << " " << H << "\n255\n";
      os.write(reinterpret_cast<const char*>(px.data()), std::streamsize(px.size()));
    });
  } else {
    throw ImageError(path.string() + ": unsupported output format");
  }
}

// Raw float map: "DICMAP01" | u32 rows | u32 cols | f32 data (row-major).
inline void write_float_map(const std::filesystem::path& path, const Tensor& map) {
  const std::size_t H = map.dim(map.rank() - 2), W = map.dim(map.rank() - 1);
  if (map.size() != H * W) throw std::invalid_argument("write_float_map expects a single-channel map");
  io::write_atomic(path, [&](std::ostream& os) {
    os.write("DICMAP01", 8);
    io::put<std::uint32_t>(os, std::uint32_t(H));
    io::put<std::uint32_t>(os, std::uint32_t(W));
    os.write(reinterpret_cast<const char*>(map.data()), std::streamsize(map.size() * sizeof(float)));
  });
}

inline Tensor read_float_map(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  char magic[8];
  std::uint32_t H = 0, W = 0;
  if (!is.read(magic, 8) || std::string(magic, 8) != "DICMAP01" || !io::get(is, H) || !io::get(is, W))
    throw FormatError(path.string() + ": not a float map file");
  Tensor t(Shape{H, W});
  if (!is.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(float))))
    throw FormatError(path.string() + ": truncated float map");
  return t;
}

}  // namespace dicad
