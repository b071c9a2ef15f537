#pragma once

#include <cmath>

namespace heliofit {

/// Linear RGB radiance triple. Absolute scale is arbitrary.
struct ColorRGB {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;

  constexpr ColorRGB operator+(const ColorRGB& o) const { return {r + o.r, g + o.g, b + o.b}; }
  constexpr ColorRGB operator-(const ColorRGB& o) const { return {r - o.r, g - o.g, b - o.b}; }
  constexpr ColorRGB operator*(double s) const { return {r * s, g * s, b * s}; }
  constexpr ColorRGB operator/(double s) const { return {r / s, g / s, b / s}; }
  constexpr ColorRGB& operator+=(const ColorRGB& o) {
    r += o.r;
    g += o.g;
    b += o.b;
    return *this;
  }
  constexpr bool operator==(const ColorRGB&) const = default;

  constexpr double operator[](int i) const { return i == 0 ? r : (i == 1 ? g : b); }
  constexpr double& operator[](int i) { return i == 0 ? r : (i == 1 ? g : b); }

  constexpr double mean() const { return (r + g + b) / 3.0; }
  /// Rec. 709 luminance.
  constexpr double luminance() const { return 0.2126 * r + 0.7152 * g + 0.0722 * b; }
  bool finite() const { return std::isfinite(r) && std::isfinite(g) && std::isfinite(b); }
};

constexpr ColorRGB operator*(double s, const ColorRGB& c) { return c * s; }
/// Channel-wise product.
constexpr ColorRGB hadamard(const ColorRGB& a, const ColorRGB& b) { return {a.r * b.r, a.g * b.g, a.b * b.b}; }

}  // namespace heliofit
