#include "orchard/color.hpp"

#include <algorithm>
#include <cmath>

namespace orchard {
namespace {

// D65 reference white
constexpr double kXn = 0.95047;
constexpr double kYn = 1.00000;
constexpr double kZn = 1.08883;

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) {
  constexpr double d = 6.0 / 29.0;
  return t > d * d * d ? std::cbrt(t) : t / (3 * d * d) + 4.0 / 29.0;
}

double lab_f_inv(double t) {
  constexpr double d = 6.0 / 29.0;
  return t > d ? t * t * t : 3 * d * d * (t - 4.0 / 29.0);
}

}  // namespace

std::array<float, 3> rgb_to_lab(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  double r = srgb_to_linear(r8 / 255.0);
  double g = srgb_to_linear(g8 / 255.0);
  double b = srgb_to_linear(b8 / 255.0);
  double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  double fx = lab_f(x / kXn), fy = lab_f(y / kYn), fz = lab_f(z / kZn);
  return {static_cast<float>(116.0 * fy - 16.0), static_cast<float>(500.0 * (fx - fy)),
          static_cast<float>(200.0 * (fy - fz))};
}

std::array<std::uint8_t, 3> lab_to_rgb(float L, float a, float b) {
  double fy = (L + 16.0) / 116.0;
  double fx = fy + a / 500.0;
  double fz = fy - b / 200.0;
  double x = kXn * lab_f_inv(fx);
  double y = kYn * lab_f_inv(fy);
  double z = kZn * lab_f_inv(fz);
  double rl = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
  double gl = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
  double bl = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
  auto to8 = [](double c) {
    return static_cast<std::uint8_t>(
        std::clamp(linear_to_srgb(std::clamp(c, 0.0, 1.0)) * 255.0 + 0.5, 0.0, 255.0));
  };
  return {to8(rl), to8(gl), to8(bl)};
}

LabImage to_lab(const ImageU8& rgb) {
  LabImage out(rgb.width, rgb.height);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      const std::uint8_t* p = rgb.px(x, y);
      auto lab = rgb_to_lab(p[0], p[1], p[2]);
      float* o = out.px(x, y);
      o[0] = lab[0];
      o[1] = lab[1];
      o[2] = lab[2];
    }
  return out;
}

double delta_e(const std::array<float, 3>& lab1, const std::array<float, 3>& lab2) {
  double dl = lab1[0] - lab2[0], da = lab1[1] - lab2[1], db = lab1[2] - lab2[2];
  return std::sqrt(dl * dl + da * da + db * db);
}

}  // namespace orchard
