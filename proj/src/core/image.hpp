#pragma once

#include <string>
#include <vector>

namespace nvlm {

// Row-major, channel-interleaved pixel raster. Values are f64; 8-bit sources
// load as 0..255.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int w, int h, int c);

  double& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

// Bilinear resample with half-pixel centers. Interpolation uses
// a + f*(b-a), so uniform inputs come out bitwise uniform.
Image resize_bilinear(const Image& src, int out_w, int out_h);

// Exact rectangle copy; [left, right) x [top, bottom) must lie inside src.
Image crop(const Image& src, int left, int top, int right, int bottom);

// Raw planar container ("NVRAW"): one ASCII header line
//   NVRAW <width> <height> <channels>\n
// followed by channel planes of little-endian f64, each plane row-major.
Image load_raw(const std::string& path);
void save_raw(const Image& img, const std::string& path);

// 8-bit PNG (gray, gray+alpha, RGB, RGBA).
Image load_png(const std::string& path);
void save_png(const Image& img, const std::string& path);

// Dispatch on extension: .png or .raw/.nvraw.
Image load_image(const std::string& path);
void save_image(const Image& img, const std::string& path);

}  // namespace nvlm
