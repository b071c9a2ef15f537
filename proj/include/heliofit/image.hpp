#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "heliofit/color.hpp"

namespace heliofit {

enum class Projection : std::uint8_t {
  skyangular,           ///< square fisheye, center = zenith, inscribed rim = horizon
  equirect_hemisphere,  ///< columns = azimuth [0, 2π), rows = zenith [0, π/2]; width = 4·height
  camera,               ///< rendered view, every pixel valid, no direction mapping
};

enum class Encoding : std::uint8_t { linear, log_tonemapped };

std::string_view to_string(Projection p);
/// Throws std::invalid_argument for unknown names.
Projection projection_from_string(std::string_view name);

struct EnvGeometry {
  int width = 0;
  int height = 0;
  Projection projection = Projection::camera;

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  bool operator==(const EnvGeometry&) const = default;
};

/// Geometry of a sky image of the given nominal size: size×size for
/// skyangular, (2·size)×(size/2) for the equirect hemisphere.
EnvGeometry sky_geometry(int size, Projection projection);

/// Per-pixel validity: skyangular pixels are valid when their center lies
/// inside the inscribed circle; every other pixel is valid.
std::vector<std::uint8_t> validity_mask(const EnvGeometry& g);

/// Row-major RGB raster of linear radiance (or its log encoding). Pixels are
/// stored as float triples so PFM round-trips are bit-exact.
class HdrImage {
 public:
  HdrImage() = default;
  HdrImage(int width, int height, Projection projection = Projection::camera);
  explicit HdrImage(const EnvGeometry& geometry) : HdrImage(geometry.width, geometry.height, geometry.projection) {}

  int width() const { return geometry_.width; }
  int height() const { return geometry_.height; }
  Projection projection() const { return geometry_.projection; }
  const EnvGeometry& geometry() const { return geometry_; }
  std::size_t pixel_count() const { return geometry_.pixel_count(); }
  bool empty() const { return pixel_count() == 0; }

  /// Stored values times exposure_scale give the original radiance.
  double exposure_scale() const { return exposure_scale_; }
  void set_exposure_scale(double s) { exposure_scale_ = s; }
  Encoding encoding() const { return encoding_; }
  void set_encoding(Encoding e) { encoding_ = e; }

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(geometry_.width) + static_cast<std::size_t>(x);
  }
  ColorRGB at(int x, int y) const { return at(index(x, y)); }
  ColorRGB at(std::size_t i) const { return {pixels_[3 * i], pixels_[3 * i + 1], pixels_[3 * i + 2]}; }
  void set(int x, int y, const ColorRGB& c) { set(index(x, y), c); }
  void set(std::size_t i, const ColorRGB& c) {
    pixels_[3 * i] = static_cast<float>(c.r);
    pixels_[3 * i + 1] = static_cast<float>(c.g);
    pixels_[3 * i + 2] = static_cast<float>(c.b);
  }

  bool valid(int x, int y) const { return mask_[index(x, y)] != 0; }
  bool valid(std::size_t i) const { return mask_[i] != 0; }
  std::size_t valid_count() const;
  const std::vector<std::uint8_t>& mask() const { return mask_; }

  std::span<float> data() { return pixels_; }
  std::span<const float> data() const { return pixels_; }

  /// True when every stored value is finite.
  bool all_finite() const;

 private:
  EnvGeometry geometry_{};
  std::vector<float> pixels_;
  std::vector<std::uint8_t> mask_;
  double exposure_scale_ = 1.0;
  Encoding encoding_ = Encoding::linear;
};

}  // namespace heliofit
