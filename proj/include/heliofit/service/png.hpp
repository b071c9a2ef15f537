#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "heliofit/image.hpp"

namespace heliofit::service {

/// 8-bit RGB preview of a linear image: clamp((I·2^ev / divisor)^(1/2.2)),
/// rounded to the nearest code. Invalid pixels are black.
struct Preview {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
  double divisor = 0.0;
};

/// Uses the 99th percentile of the valid pixels as divisor.
Preview make_preview(const HdrImage& img, double exposure_ev = 0.0);
Preview make_preview(const HdrImage& img, double exposure_ev, double divisor);

/// Places previews side by side, top aligned, padding with black.
Preview hstack(const std::vector<Preview>& parts);

/// Encodes an RGB8 raster as PNG. Output bytes depend only on the input.
/// Throws std::runtime_error on encoder failure.
std::string encode_png(int width, int height, std::span<const std::uint8_t> rgb);
inline std::string encode_png(const Preview& p) { return encode_png(p.width, p.height, p.rgb); }

}  // namespace heliofit::service
