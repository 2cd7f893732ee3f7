#pragma once

#include <array>

#include "orchard/image.hpp"

namespace orchard {

// sRGB (D65) <-> CIELAB. Inputs are 8-bit sRGB; LAB is float with the usual
// ranges (L 0..100, a/b roughly -128..127).
std::array<float, 3> rgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b);
std::array<std::uint8_t, 3> lab_to_rgb(float L, float a, float b);

LabImage to_lab(const ImageU8& rgb);

// CIE76 color difference (Euclidean distance in LAB).
double delta_e(const std::array<float, 3>& lab1, const std::array<float, 3>& lab2);

}  // namespace orchard
