#include "orchard/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>

#include "orchard/errors.hpp"

namespace orchard {

std::size_t Mask::count_true() const {
  std::size_t n = 0;
  for (auto v : data) n += (v != 0);
  return n;
}

Box expand_and_clip(const Box& tight, double margin, int min_side, int image_w, int image_h) {
  double mx = margin * tight.width;
  double my = margin * tight.height;
  double x0 = tight.x - mx;
  double y0 = tight.y - my;
  double x1 = tight.x + tight.width + mx;
  double y1 = tight.y + tight.height + my;
  if (x1 - x0 < min_side) {
    double c = 0.5 * (x0 + x1);
    x0 = c - 0.5 * min_side;
    x1 = c + 0.5 * min_side;
  }
  if (y1 - y0 < min_side) {
    double c = 0.5 * (y0 + y1);
    y0 = c - 0.5 * min_side;
    y1 = c + 0.5 * min_side;
  }
  int ix0 = std::max(0, static_cast<int>(std::floor(x0)));
  int iy0 = std::max(0, static_cast<int>(std::floor(y0)));
  int ix1 = std::min(image_w, static_cast<int>(std::ceil(x1)));
  int iy1 = std::min(image_h, static_cast<int>(std::ceil(y1)));
  return Box{ix0, iy0, std::max(0, ix1 - ix0), std::max(0, iy1 - iy0)};
}

ImageU8 crop(const ImageU8& src, const Box& box) {
  if (box.width <= 0 || box.height <= 0)
    throw InvalidInput("crop: zero-area box");
  if (box.x < 0 || box.y < 0 || box.x + box.width > src.width || box.y + box.height > src.height)
    throw InvalidInput("crop: box outside image bounds");
  ImageU8 out(box.width, box.height);
  for (int y = 0; y < box.height; ++y) {
    const std::uint8_t* s = src.px(box.x, box.y + y);
    std::copy(s, s + static_cast<std::size_t>(box.width) * 3, out.px(0, y));
  }
  return out;
}

ImageU8 resize_bilinear(const ImageU8& src, int out_w, int out_h) {
  if (src.empty()) throw InvalidInput("resize: empty source");
  if (out_w <= 0 || out_h <= 0) throw InvalidInput("resize: non-positive output size");
  ImageU8 out(out_w, out_h);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y1 = std::min(y0 + 1, src.height - 1);
    y0 = std::clamp(y0, 0, src.height - 1);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x1 = std::min(x0 + 1, src.width - 1);
      x0 = std::clamp(x0, 0, src.width - 1);
      const std::uint8_t* p00 = src.px(x0, y0);
      const std::uint8_t* p10 = src.px(x1, y0);
      const std::uint8_t* p01 = src.px(x0, y1);
      const std::uint8_t* p11 = src.px(x1, y1);
      std::uint8_t* o = out.px(x, y);
      for (int c = 0; c < 3; ++c) {
        double top = p00[c] + (p10[c] - p00[c]) * wx;
        double bot = p01[c] + (p11[c] - p01[c]) * wx;
        double v = top + (bot - top) * wy;
        o[c] = static_cast<std::uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
      }
    }
  }
  return out;
}

ImageU8 flip_horizontal(const ImageU8& src) {
  ImageU8 out(src.width, src.height);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      const std::uint8_t* s = src.px(src.width - 1 - x, y);
      std::uint8_t* o = out.px(x, y);
      o[0] = s[0];
      o[1] = s[1];
      o[2] = s[2];
    }
  return out;
}

ImageU8 rotate_degrees(const ImageU8& src, double degrees) {
  const double rad = degrees * M_PI / 180.0;
  const double ca = std::cos(rad), sa = std::sin(rad);
  const double cx = 0.5 * (src.width - 1), cy = 0.5 * (src.height - 1);
  ImageU8 out(src.width, src.height);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      // inverse map: rotate output coords by -angle
      double dx = x - cx, dy = y - cy;
      double fx = ca * dx + sa * dy + cx;
      double fy = -sa * dx + ca * dy + cy;
      int x0 = static_cast<int>(std::floor(fx));
      int y0 = static_cast<int>(std::floor(fy));
      double wx = fx - x0, wy = fy - y0;
      int xc0 = std::clamp(x0, 0, src.width - 1);
      int xc1 = std::clamp(x0 + 1, 0, src.width - 1);
      int yc0 = std::clamp(y0, 0, src.height - 1);
      int yc1 = std::clamp(y0 + 1, 0, src.height - 1);
      const std::uint8_t* p00 = src.px(xc0, yc0);
      const std::uint8_t* p10 = src.px(xc1, yc0);
      const std::uint8_t* p01 = src.px(xc0, yc1);
      const std::uint8_t* p11 = src.px(xc1, yc1);
      std::uint8_t* o = out.px(x, y);
      for (int c = 0; c < 3; ++c) {
        double top = p00[c] + (p10[c] - p00[c]) * wx;
        double bot = p01[c] + (p11[c] - p01[c]) * wx;
        double v = top + (bot - top) * wy;
        o[c] = static_cast<std::uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
      }
    }
  }
  return out;
}

Mask close_3x3(const Mask& m) {
  auto pass = [](const Mask& in, bool dilate) {
    Mask out(in.width, in.height);
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x) {
        bool hit = dilate ? false : true;
        for (int dy = -1; dy <= 1 && (dilate ? !hit : hit); ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int nx = x + dx, ny = y + dy;
            bool v = (nx >= 0 && ny >= 0 && nx < in.width && ny < in.height)
                         ? in.test(nx, ny)
                         : false;
            if (dilate)
              hit = hit || v;
            else
              hit = hit && v;
          }
        out.at(x, y) = hit ? 255 : 0;
      }
    return out;
  };
  return pass(pass(m, true), false);
}

void write_png(const std::string& path, const ImageU8& image) {
  cv::Mat bgr(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const std::uint8_t* p = image.px(x, y);
      auto& v = bgr.at<cv::Vec3b>(y, x);
      v[0] = p[2];
      v[1] = p[1];
      v[2] = p[0];
    }
  if (!cv::imwrite(path, bgr)) throw IoError("failed to write " + path);
}

void write_png(const std::string& path, const Mask& mask) {
  cv::Mat m(mask.height, mask.width, CV_8UC1, const_cast<std::uint8_t*>(mask.data.data()));
  if (!cv::imwrite(path, m)) throw IoError("failed to write " + path);
}

ImageU8 read_png(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("failed to read " + path);
  ImageU8 out(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y)
    for (int x = 0; x < bgr.cols; ++x) {
      const auto& v = bgr.at<cv::Vec3b>(y, x);
      std::uint8_t* p = out.px(x, y);
      p[0] = v[2];
      p[1] = v[1];
      p[2] = v[0];
    }
  return out;
}

Mask read_mask_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError("failed to read " + path);
  Mask out(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) out.at(x, y) = m.at<std::uint8_t>(y, x) >= 128 ? 255 : 0;
  return out;
}

}  // namespace orchard
