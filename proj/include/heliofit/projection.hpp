#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "heliofit/geometry.hpp"
#include "heliofit/image.hpp"

namespace heliofit {

/// Maps normalized skyangular coordinates to a direction. Returns nullopt
/// outside the inscribed circle. Zenith grows linearly with radius.
std::optional<Direction> skyangular_to_direction(double u, double v);

/// Inverse of skyangular_to_direction. Throws std::domain_error for
/// directions below the horizon.
std::pair<double, double> direction_to_skyangular(const Direction& d);

std::optional<Direction> equirect_to_direction(double u, double v);
std::pair<double, double> direction_to_equirect(const Direction& d);

/// Direction through the center of pixel (x, y); nullopt for invalid pixels
/// and for camera images.
std::optional<Direction> pixel_direction(const EnvGeometry& g, int x, int y);

/// Continuous pixel coordinates of a direction (pixel centers sit at i + 0.5).
std::pair<double, double> direction_to_pixel(const EnvGeometry& g, const Direction& d);

/// Index of the valid pixel nearest to the direction.
std::size_t nearest_pixel(const EnvGeometry& g, const Direction& d);

/// Bilinear lookup. Invalid pixels are dropped from the support and the
/// remaining weights renormalized; returns black when no support is left.
ColorRGB sample_bilinear(const HdrImage& img, const Direction& d);

/// Per-pixel solid angle in steradians (midpoint rule on the projection
/// Jacobian); zero for invalid pixels.
struct SolidAngleMap {
  EnvGeometry geometry;
  std::vector<double> weights;

  double total() const;
};

SolidAngleMap solid_angles(const EnvGeometry& g);
inline SolidAngleMap solid_angles(const HdrImage& img) { return solid_angles(img.geometry()); }

/// Cached pixel-center directions and solid angles of a sky geometry.
struct DomeTable {
  EnvGeometry geometry;
  std::vector<std::size_t> valid_pixels;  ///< indices of valid pixels
  std::vector<Vec3> directions;           ///< unit vectors, parallel to valid_pixels
  std::vector<double> zenith;             ///< parallel to valid_pixels
  std::vector<double> solid_angle;        ///< parallel to valid_pixels
};

DomeTable make_dome_table(const EnvGeometry& g);

}  // namespace heliofit
