#include "heliofit/service/png.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <stdexcept>

#include "heliofit/envmap.hpp"

namespace heliofit::service {

Preview make_preview(const HdrImage& img, double exposure_ev) {
  return make_preview(img, exposure_ev, valid_percentile(img, 99.0));
}

Preview make_preview(const HdrImage& img, double exposure_ev, double divisor) {
  Preview p;
  p.width = img.width();
  p.height = img.height();
  p.divisor = divisor;
  p.rgb.assign(img.pixel_count() * 3, 0);
  const double gain = std::exp2(exposure_ev);
  const auto data = img.data();
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    if (!img.valid(i)) continue;
    for (int c = 0; c < 3; ++c) {
      const double v = display_encode(static_cast<double>(data[3 * i + c]) * gain, divisor);
      p.rgb[3 * i + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return p;
}

Preview hstack(const std::vector<Preview>& parts) {
  Preview out;
  for (const auto& p : parts) {
    out.width += p.width;
    out.height = std::max(out.height, p.height);
  }
  out.rgb.assign(static_cast<std::size_t>(out.width) * out.height * 3, 0);
  int x0 = 0;
  for (const auto& p : parts) {
    for (int y = 0; y < p.height; ++y) {
      const auto* src = p.rgb.data() + static_cast<std::size_t>(y) * p.width * 3;
      auto* dst = out.rgb.data() + (static_cast<std::size_t>(y) * out.width + x0) * 3;
      std::copy(src, src + static_cast<std::size_t>(p.width) * 3, dst);
    }
    x0 += p.width;
  }
  if (!parts.empty()) out.divisor = parts.front().divisor;
  return out;
}

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

void flush_noop(png_structp) {}

}  // namespace

std::string encode_png(int width, int height, std::span<const std::uint8_t> rgb) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("png size must be positive");
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) throw std::invalid_argument("png buffer size mismatch");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  std::string out;
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    rows[y] = const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * width * 3);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png encoding failed");
  }
  png_set_write_fn(png, &out, append_bytes, flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace heliofit::service
