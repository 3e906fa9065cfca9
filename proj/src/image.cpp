#include "nerfpose/image.hpp"

#include "nerfpose/io_util.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace nerfpose {

namespace {

uint8_t to_byte(float v) {
  const float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
  return static_cast<uint8_t>(std::lround(c * 255.f));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png_internal(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3 && img.channels != 4)
    throw std::invalid_argument("write_png: expected 1, 3 or 4 channels");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for writing: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng error while writing " + path.string());
  }
  png_init_io(png, fp.get());
  const int color = img.channels == 1   ? PNG_COLOR_TYPE_GRAY
                    : img.channels == 3 ? PNG_COLOR_TYPE_RGB
                                        : PNG_COLOR_TYPE_RGBA;
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<uint8_t> row(static_cast<size_t>(img.width) * img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        row[static_cast<size_t>(x) * img.channels + c] = to_byte(img.at(c, y, x));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

bool Image::all_finite() const {
  for (float v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  // temp + rename keeps interrupted runs from leaving corrupt images
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  write_png_internal(tmp, img);
  fs::rename(tmp, path);
}

void write_mask_png(const std::filesystem::path& path, const Image& mask) {
  if (mask.channels != 1) throw std::invalid_argument("write_mask_png: expected 1 channel");
  write_png(path, mask);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open: " + path.string());
  uint8_t sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw std::runtime_error("not a PNG file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng error while reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // normalize everything to 8-bit with the native channel count
  png_set_expand(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = static_cast<int>(png_get_channels(png, info));

  std::vector<uint8_t> raw(static_cast<size_t>(width) * height * channels);
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[static_cast<size_t>(y)] = raw.data() + static_cast<size_t>(y) * width * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(channels, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) =
            raw[(static_cast<size_t>(y) * width + x) * channels + c] / 255.f;
  return img;
}

Image downsample(const Image& img, int factor) {
  if (factor < 1 || img.height % factor || img.width % factor)
    throw std::invalid_argument("downsample: factor must evenly divide the resolution");
  Image out(img.channels, img.height / factor, img.width / factor);
  const float inv = 1.f / static_cast<float>(factor * factor);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        float acc = 0.f;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) acc += img.at(c, y * factor + dy, x * factor + dx);
        out.at(c, y, x) = acc * inv;
      }
  return out;
}

Image composite(const Image& rgb, const Image& mask, const float background[3]) {
  if (mask.height != rgb.height || mask.width != rgb.width || mask.channels != 1)
    throw std::invalid_argument("composite: mask must be single-channel at image size");
  Image out(3, rgb.height, rgb.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < rgb.height; ++y)
      for (int x = 0; x < rgb.width; ++x) {
        const float a = mask.at(0, y, x);
        out.at(c, y, x) = a * rgb.at(c, y, x) + (1.f - a) * background[c];
      }
  return out;
}

double mse(const Image& a, const Image& b) {
  if (!a.same_size(b)) throw std::invalid_argument("mse: resolution mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.data.size());
}

}  // namespace nerfpose
