#include "core/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "core/error.hpp"

namespace nvlm {

Image::Image(int w, int h, int c) : width(w), height(h), channels(c) {
  if (w < 1 || h < 1 || c < 1)
    fail(ErrorCode::InvalidArgument, "image dimensions must be positive, got ", w, "x", h, "x", c);
  pixels.assign(static_cast<std::size_t>(w) * h * c, 0.0);
}

Image resize_bilinear(const Image& src, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1)
    fail(ErrorCode::InvalidArgument, "resize target must be positive, got ", out_w, "x", out_h);
  Image dst(out_w, out_h, src.channels);
  double sx = static_cast<double>(src.width) / out_w;
  double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int ya = std::clamp(y0, 0, src.height - 1);
    int yb = std::clamp(y0 + 1, 0, src.height - 1);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int xa = std::clamp(x0, 0, src.width - 1);
      int xb = std::clamp(x0 + 1, 0, src.width - 1);
      for (int c = 0; c < src.channels; ++c) {
        double top = src.at(xa, ya, c) + wx * (src.at(xb, ya, c) - src.at(xa, ya, c));
        double bot = src.at(xa, yb, c) + wx * (src.at(xb, yb, c) - src.at(xa, yb, c));
        dst.at(x, y, c) = top + wy * (bot - top);
      }
    }
  }
  return dst;
}

Image crop(const Image& src, int left, int top, int right, int bottom) {
  if (left < 0 || top < 0 || right > src.width || bottom > src.height || left >= right ||
      top >= bottom)
    fail(ErrorCode::InvalidArgument, "crop box (", left, ",", top, ")-(", right, ",", bottom,
         ") outside image ", src.width, "x", src.height);
  Image dst(right - left, bottom - top, src.channels);
  for (int y = top; y < bottom; ++y)
    for (int x = left; x < right; ++x)
      for (int c = 0; c < src.channels; ++c) dst.at(x - left, y - top, c) = src.at(x, y, c);
  return dst;
}

// --- NVRAW -----------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little,
              "NVRAW io assumes a little-endian host");

}  // namespace

Image load_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open ", path);
  std::string magic;
  int w = 0, h = 0, c = 0;
  in >> magic >> w >> h >> c;
  if (magic != "NVRAW" || !in) fail(ErrorCode::Io, path, ": not an NVRAW file");
  in.get();  // newline after the header
  if (w < 1 || h < 1 || c < 1) fail(ErrorCode::Io, path, ": bad NVRAW dimensions");
  Image img(w, h, c);
  std::vector<double> plane(static_cast<std::size_t>(w) * h);
  for (int ch = 0; ch < c; ++ch) {
    in.read(reinterpret_cast<char*>(plane.data()),
            static_cast<std::streamsize>(plane.size() * sizeof(double)));
    if (!in) fail(ErrorCode::Io, path, ": truncated NVRAW payload");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) img.at(x, y, ch) = plane[static_cast<std::size_t>(y) * w + x];
  }
  return img;
}

void save_raw(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write ", path);
  out << "NVRAW " << img.width << " " << img.height << " " << img.channels << "\n";
  std::vector<double> plane(static_cast<std::size_t>(img.width) * img.height);
  for (int ch = 0; ch < img.channels; ++ch) {
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        plane[static_cast<std::size_t>(y) * img.width + x] = img.at(x, y, ch);
    out.write(reinterpret_cast<const char*>(plane.data()),
              static_cast<std::streamsize>(plane.size() * sizeof(double)));
  }
  if (!out) fail(ErrorCode::Io, "failed writing ", path);
}

// --- PNG -------------------------------------------------------------------

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image load_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(ErrorCode::Io, "cannot open ", path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::Internal, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::Io, path, ": PNG decode failed");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  int color_type = png_get_color_type(png, info);

  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);

  int channels = png_get_channels(png, info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * channels);
  Image img(static_cast<int>(w), static_cast<int>(h), channels);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(static_cast<int>(x), static_cast<int>(y), c) =
            row[static_cast<std::size_t>(x) * channels + c];
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void save_png(const Image& img, const std::string& path) {
  int color_type;
  switch (img.channels) {
    case 1: color_type = PNG_COLOR_TYPE_GRAY; break;
    case 2: color_type = PNG_COLOR_TYPE_GRAY_ALPHA; break;
    case 3: color_type = PNG_COLOR_TYPE_RGB; break;
    case 4: color_type = PNG_COLOR_TYPE_RGBA; break;
    default:
      fail(ErrorCode::InvalidArgument, "cannot write ", img.channels, "-channel image as PNG");
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(ErrorCode::Io, "cannot write ", path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::Internal, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::Io, path, ": PNG encode failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double v = std::clamp(img.at(x, y, c), 0.0, 255.0);
        row[static_cast<std::size_t>(x) * img.channels + c] =
            static_cast<std::uint8_t>(std::lround(v));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Image load_image(const std::string& path) {
  if (ends_with(path, ".png")) return load_png(path);
  if (ends_with(path, ".raw") || ends_with(path, ".nvraw")) return load_raw(path);
  fail(ErrorCode::InvalidArgument, path, ": unsupported image extension (want .png or .raw)");
}

void save_image(const Image& img, const std::string& path) {
  if (ends_with(path, ".png")) return save_png(img, path);
  if (ends_with(path, ".raw") || ends_with(path, ".nvraw")) return save_raw(img, path);
  fail(ErrorCode::InvalidArgument, path, ": unsupported image extension (want .png or .raw)");
}

}  // namespace nvlm
