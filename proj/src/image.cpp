#include "heliofit/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace heliofit {

std::string_view to_string(Projection p) {
  switch (p) {
    case Projection::skyangular:
      return "skyangular";
    case Projection::equirect_hemisphere:
      return "equirect_hemisphere";
    case Projection::camera:
      return "camera";
  }
  return "unknown";
}

Projection projection_from_string(std::string_view name) {
  if (name == "skyangular") return Projection::skyangular;
  if (name == "equirect_hemisphere" || name == "equirect") return Projection::equirect_hemisphere;
  if (name == "camera") return Projection::camera;
  throw std::invalid_argument("unknown projection '" + std::string(name) + "'");
}

EnvGeometry sky_geometry(int size, Projection projection) {
  if (size <= 0) throw std::invalid_argument("image size must be positive");
  switch (projection) {
    case Projection::skyangular:
      return {size, size, projection};
    case Projection::equirect_hemisphere:
      if (size < 2) throw std::invalid_argument("equirect hemisphere needs size >= 2");
      return {2 * size, size / 2, projection};
    case Projection::camera:
      return {size, size, projection};
  }
  throw std::invalid_argument("bad projection");
}

std::vector<std::uint8_t> validity_mask(const EnvGeometry& g) {
  std::vector<std::uint8_t> mask(g.pixel_count(), 1);
  if (g.projection != Projection::skyangular) return mask;
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const double du = (x + 0.5) / g.width - 0.5;
      const double dv = (y + 0.5) / g.height - 0.5;
      const double rho = 2.0 * std::sqrt(du * du + dv * dv);
      mask[static_cast<std::size_t>(y) * g.width + x] = rho <= 1.0 ? 1 : 0;
    }
  }
  return mask;
}

HdrImage::HdrImage(int width, int height, Projection projection)
    : geometry_{width, height, projection},
      pixels_(3 * static_cast<std::size_t>(std::max(width, 0)) * static_cast<std::size_t>(std::max(height, 0)), 0.0f) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("image dimensions must be positive");
  if (projection == Projection::skyangular && width != height) {
    throw std::invalid_argument("skyangular images must be square");
  }
  mask_ = validity_mask(geometry_);
}

std::size_t HdrImage::valid_count() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

bool HdrImage::all_finite() const {
  return std::all_of(pixels_.begin(), pixels_.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace heliofit
