#include "heliofit/projection.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace heliofit {

std::optional<Direction> skyangular_to_direction(double u, double v) {
  const double du = u - 0.5;
  const double dv = v - 0.5;
  const double rho = 2.0 * std::sqrt(du * du + dv * dv);
  if (rho > 1.0) return std::nullopt;
  return Direction::make(rho * kHalfPi, std::atan2(dv, du));
}

std::pair<double, double> direction_to_skyangular(const Direction& d) {
  if (!(d.zenith >= 0.0 && d.zenith <= kHalfPi)) {
    throw std::domain_error("skyangular projection only covers the upper hemisphere");
  }
  const double half_rho = 0.5 * d.zenith / kHalfPi;
  return {0.5 + half_rho * std::cos(d.azimuth), 0.5 + half_rho * std::sin(d.azimuth)};
}

std::optional<Direction> equirect_to_direction(double u, double v) {
  if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0) return std::nullopt;
  return Direction::make(v * kHalfPi, u * kTwoPi);
}

std::pair<double, double> direction_to_equirect(const Direction& d) {
  if (!(d.zenith >= 0.0 && d.zenith <= kHalfPi)) {
    throw std::domain_error("equirect hemisphere only covers the upper hemisphere");
  }
  return {wrap_azimuth(d.azimuth) / kTwoPi, d.zenith / kHalfPi};
}

std::optional<Direction> pixel_direction(const EnvGeometry& g, int x, int y) {
  const double u = (x + 0.5) / g.width;
  const double v = (y + 0.5) / g.height;
  switch (g.projection) {
    case Projection::skyangular:
      return skyangular_to_direction(u, v);
    case Projection::equirect_hemisphere:
      return equirect_to_direction(u, v);
    case Projection::camera:
      return std::nullopt;
  }
  return std::nullopt;
}

std::pair<double, double> direction_to_pixel(const EnvGeometry& g, const Direction& d) {
  std::pair<double, double> uv;
  switch (g.projection) {
    case Projection::skyangular:
      uv = direction_to_skyangular(d);
      break;
    case Projection::equirect_hemisphere:
      uv = direction_to_equirect(d);
      break;
    case Projection::camera:
      throw std::invalid_argument("camera images have no direction mapping");
  }
  return {uv.first * g.width, uv.second * g.height};
}

std::size_t nearest_pixel(const EnvGeometry& g, const Direction& d) {
  Direction clamped = d;
  clamped.zenith = std::clamp(d.zenith, 0.0, kHalfPi);
  const auto [px, py] = direction_to_pixel(g, clamped);
  const int x0 = std::clamp(static_cast<int>(std::floor(px)), 0, g.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(py)), 0, g.height - 1);
  const auto mask = validity_mask(g);
  const std::size_t i0 = static_cast<std::size_t>(y0) * g.width + x0;
  if (mask[i0]) return i0;
  // Rim pixel whose center falls outside the disk: take the closest valid neighbour.
  std::size_t best = i0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int y = std::max(0, y0 - 2); y <= std::min(g.height - 1, y0 + 2); ++y) {
    for (int x = std::max(0, x0 - 2); x <= std::min(g.width - 1, x0 + 2); ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * g.width + x;
      if (!mask[i]) continue;
      const double dx = x + 0.5 - px;
      const double dy = y + 0.5 - py;
      if (dx * dx + dy * dy < best_d2) {
        best_d2 = dx * dx + dy * dy;
        best = i;
      }
    }
  }
  return best;
}

ColorRGB sample_bilinear(const HdrImage& img, const Direction& d) {
  const EnvGeometry& g = img.geometry();
  if (d.zenith > kHalfPi) return {};
  const auto [px, py] = direction_to_pixel(g, d);
  const double fx = px - 0.5;
  const double fy = py - 0.5;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double tx = fx - x0;
  const double ty = fy - y0;

  ColorRGB acc;
  double wsum = 0.0;
  for (int j = 0; j < 2; ++j) {
    for (int i = 0; i < 2; ++i) {
      int x = x0 + i;
      int y = y0 + j;
      const double w = (i ? tx : 1.0 - tx) * (j ? ty : 1.0 - ty);
      if (w <= 0.0) continue;
      if (g.projection == Projection::equirect_hemisphere) {
        x = ((x % g.width) + g.width) % g.width;
        y = std::clamp(y, 0, g.height - 1);
      } else if (x < 0 || y < 0 || x >= g.width || y >= g.height) {
        continue;
      }
      if (!img.valid(x, y)) continue;
      acc += img.at(x, y) * w;
      wsum += w;
    }
  }
  return wsum > 0.0 ? acc / wsum : ColorRGB{};
}

double SolidAngleMap::total() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

SolidAngleMap solid_angles(const EnvGeometry& g) {
  SolidAngleMap out{g, std::vector<double>(g.pixel_count(), 0.0)};
  const double du_dv = 1.0 / (static_cast<double>(g.width) * g.height);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const auto d = pixel_direction(g, x, y);
      if (!d) continue;
      const double theta = d->zenith;
      double jac = 0.0;
      if (g.projection == Projection::skyangular) {
        // dΩ = sinθ dθ dφ with θ = π r and du dv = r dr dφ.
        jac = kPi * kPi * (theta > 0.0 ? std::sin(theta) / theta : 1.0);
      } else {
        jac = kPi * kPi * std::sin(theta);
      }
      out.weights[static_cast<std::size_t>(y) * g.width + x] = jac * du_dv;
    }
  }
  return out;
}

DomeTable make_dome_table(const EnvGeometry& g) {
  DomeTable t;
  t.geometry = g;
  const auto sa = solid_angles(g);
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const auto d = pixel_direction(g, x, y);
      if (!d) continue;
      const std::size_t i = static_cast<std::size_t>(y) * g.width + x;
      t.valid_pixels.push_back(i);
      t.directions.push_back(d->to_vector());
      t.zenith.push_back(d->zenith);
      t.solid_angle.push_back(sa.weights[i]);
    }
  }
  return t;
}

}  // namespace heliofit
