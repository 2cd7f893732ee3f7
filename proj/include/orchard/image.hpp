#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace orchard {

// Interleaved 8-bit RGB image.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // size = width*height*3, row-major RGB

  ImageU8() = default;
  ImageU8(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t* px(int x, int y) { return &data[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* px(int x, int y) const {
    return &data[(static_cast<std::size_t>(y) * width + x) * 3];
  }
  bool empty() const { return width <= 0 || height <= 0; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

// Single channel 0/255 mask.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool test(int x, int y) const { return at(x, y) != 0; }
  std::size_t count_true() const;
};

// Interleaved float LAB image. L in [0,100], a/b in [-128,127].
struct LabImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // size = width*height*3

  LabImage() = default;
  LabImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0.f) {}

  float* px(int x, int y) { return &data[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const float* px(int x, int y) const {
    return &data[(static_cast<std::size_t>(y) * width + x) * 3];
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

struct Box {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  bool operator==(const Box&) const = default;
  long long area() const { return static_cast<long long>(width) * height; }
  bool contains(int px, int py) const {
    return px >= x && px < x + width && py >= y && py < y + height;
  }
};

// Tight box expanded by `margin` (fraction of each dimension, applied per
// side), grown to min_side if needed, then clipped to [0,w)x[0,h).
Box expand_and_clip(const Box& tight, double margin, int min_side, int image_w, int image_h);

// --- pixel ops ---------------------------------------------------------

ImageU8 crop(const ImageU8& src, const Box& box);
ImageU8 resize_bilinear(const ImageU8& src, int out_w, int out_h);
ImageU8 flip_horizontal(const ImageU8& src);
// Rotation about the image center, bilinear sampling, replicated border.
ImageU8 rotate_degrees(const ImageU8& src, double degrees);

Mask close_3x3(const Mask& m);  // one dilate + one erode, 3x3 structuring element

// --- I/O (PNG via OpenCV) ----------------------------------------------

void write_png(const std::string& path, const ImageU8& image);
void write_png(const std::string& path, const Mask& mask);
ImageU8 read_png(const std::string& path);
Mask read_mask_png(const std::string& path);

}  // namespace orchard
