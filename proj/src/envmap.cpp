#include "heliofit/envmap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "heliofit/projection.hpp"

namespace heliofit {

HdrImage render_lm_dome(const LMParams& p, int size, Projection projection) {
  if (projection == Projection::camera) throw std::invalid_argument("a sky dome needs a sky projection");
  HdrImage img(sky_geometry(size, projection));
  const PerezCoefficients k = preetham_coefficients(p.turbidity);
  const double norm = perez_distribution(0.0, p.sun.zenith, k);
  const Vec3 sun = p.sun.to_vector();
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const auto d = pixel_direction(img.geometry(), x, y);
      if (!d) continue;
      const double gamma = angle_between(d->to_vector(), sun);
      const double sky = perez_distribution(d->zenith, gamma, k) / norm;
      const double sun_term = sun_falloff(gamma, p.beta, p.kappa);
      img.set(x, y, p.sky_color * sky + p.sun_color * sun_term);
    }
  }
  return img;
}

double valid_percentile(const HdrImage& img, double pct) {
  if (!(pct >= 0.0 && pct <= 100.0)) throw std::invalid_argument("percentile must lie in [0, 100]");
  std::vector<float> values;
  values.reserve(3 * img.valid_count());
  const auto data = img.data();
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    if (!img.valid(i)) continue;
    values.insert(values.end(), data.begin() + 3 * i, data.begin() + 3 * i + 3);
  }
  if (values.empty()) throw std::domain_error("image has no valid pixels");
  std::sort(values.begin(), values.end());
  const double rank = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + (static_cast<double>(values[hi]) - values[lo]) * frac;
}

HdrImage percentile_expose(const HdrImage& img, double pct) {
  const double divisor = valid_percentile(img, pct);
  if (!(divisor > 0.0)) throw std::domain_error("exposure percentile is zero; image carries no radiance");
  HdrImage out = img;
  for (float& v : out.data()) v = static_cast<float>(v / divisor);
  out.set_exposure_scale(img.exposure_scale() * divisor);
  return out;
}

double tonemap_forward(double linear) {
  if (linear < 0.0) throw std::domain_error("tonemap_forward expects non-negative radiance");
  return 2.0 * std::log2(linear + 1.0) - 1.0;
}

double tonemap_inverse(double encoded) { return std::exp2((encoded + 1.0) * 0.5) - 1.0; }

HdrImage tonemap_forward(const HdrImage& img) {
  if (img.encoding() != Encoding::linear) throw std::invalid_argument("image is already tonemapped");
  HdrImage out = img;
  for (float& v : out.data()) v = static_cast<float>(tonemap_forward(static_cast<double>(v)));
  out.set_encoding(Encoding::log_tonemapped);
  return out;
}

HdrImage tonemap_inverse(const HdrImage& img) {
  if (img.encoding() != Encoding::log_tonemapped) throw std::invalid_argument("image is not tonemapped");
  HdrImage out = img;
  for (float& v : out.data()) v = static_cast<float>(tonemap_inverse(static_cast<double>(v)));
  out.set_encoding(Encoding::linear);
  return out;
}

namespace {

// Applies an azimuth remapping that is an exact pixel permutation for the
// projection; source_of(x, y) returns the source pixel.
template <typename SourceOf>
HdrImage permute(const HdrImage& img, SourceOf source_of) {
  HdrImage out = img;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const auto [sx, sy] = source_of(x, y);
      out.set(x, y, img.at(sx, sy));
    }
  }
  return out;
}

}  // namespace

HdrImage flip_x(const HdrImage& img) {
  const int w = img.width();
  if (img.projection() == Projection::equirect_hemisphere) {
    // φ -> π - φ on column centers (x + 0.5)·2π/w.
    return permute(img, [w](int x, int y) { return std::pair{(((w / 2 - 1 - x) % w) + w) % w, y}; });
  }
  return permute(img, [w](int x, int y) { return std::pair{w - 1 - x, y}; });
}

HdrImage flip_y(const HdrImage& img) {
  const int w = img.width();
  const int h = img.height();
  if (img.projection() == Projection::equirect_hemisphere) {
    return permute(img, [w](int x, int y) { return std::pair{w - 1 - x, y}; });
  }
  return permute(img, [h](int x, int y) { return std::pair{x, h - 1 - y}; });
}

HdrImage rotate_azimuth(const HdrImage& img, double delta) {
  if (img.projection() == Projection::camera) throw std::invalid_argument("camera images cannot be rotated");
  HdrImage out = img;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const auto d = pixel_direction(img.geometry(), x, y);
      if (!d) continue;
      out.set(x, y, sample_bilinear(img, Direction::make(d->zenith, d->azimuth - delta)));
    }
  }
  return out;
}

HdrImage box_blur(const HdrImage& img, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("blur kernel must be a positive odd size");
  const int r = kernel / 2;
  HdrImage out = img;
  const bool wrap_x = img.projection() == Projection::equirect_hemisphere;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (!img.valid(x, y)) continue;
      ColorRGB acc;
      int n = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= img.height()) continue;
        for (int dx = -r; dx <= r; ++dx) {
          int xx = x + dx;
          if (wrap_x) {
            xx = ((xx % img.width()) + img.width()) % img.width();
          } else if (xx < 0 || xx >= img.width()) {
            continue;
          }
          if (!img.valid(xx, yy)) continue;
          acc += img.at(xx, yy);
          ++n;
        }
      }
      out.set(x, y, acc / n);
    }
  }
  return out;
}

HdrImage downsample2x(const HdrImage& img) {
  if (img.width() % 2 != 0 || img.height() % 2 != 0) throw std::invalid_argument("downsample2x needs even sizes");
  HdrImage out(img.width() / 2, img.height() / 2, img.projection());
  out.set_exposure_scale(img.exposure_scale());
  out.set_encoding(img.encoding());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      if (!out.valid(x, y)) continue;
      ColorRGB acc;
      int n = 0;
      for (int j = 0; j < 2; ++j) {
        for (int i = 0; i < 2; ++i) {
          if (!img.valid(2 * x + i, 2 * y + j)) continue;
          acc += img.at(2 * x + i, 2 * y + j);
          ++n;
        }
      }
      if (n > 0) out.set(x, y, acc / n);
    }
  }
  return out;
}

ColorRGB radiant_energy(const HdrImage& img) {
  const auto sa = solid_angles(img.geometry());
  ColorRGB acc;
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    if (img.valid(i)) acc += img.at(i) * sa.weights[i];
  }
  return acc;
}

double display_encode(double linear, double divisor) {
  if (!(divisor > 0.0)) return 0.0;
  return std::clamp(std::pow(std::max(linear, 0.0) / divisor, 1.0 / 2.2), 0.0, 1.0);
}

}  // namespace heliofit
