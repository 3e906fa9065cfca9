#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace nerfpose {

/// Planar float image, channels-first, values in [0,1].
struct Image {
  int channels = 0, height = 0, width = 0;
  std::vector<float> data;  // [c][y][x]

  Image() = default;
  Image(int c, int h, int w) : channels(c), height(h), width(w),
        data(static_cast<size_t>(c) * h * w, 0.f) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  size_t pixel_count() const { return static_cast<size_t>(height) * width; }
  bool same_size(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool all_finite() const;
};

/// 8-bit RGB(A) PNG output; alpha carried as a 4th channel when present.
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// Single-channel 8-bit mask.
void write_mask_png(const std::filesystem::path& path, const Image& mask);

/// Area-averaged downsample by an integer factor (anti-aliased).
Image downsample(const Image& img, int factor);

/// Composite onto a constant background using a single-channel mask.
Image composite(const Image& rgb, const Image& mask, const float background[3]);

double mse(const Image& a, const Image& b);

}  // namespace nerfpose
