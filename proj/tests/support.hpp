#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "heliofit/geometry.hpp"
#include "heliofit/image.hpp"
#include "heliofit/transport.hpp"

namespace testing {

using namespace heliofit;

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("heliofit-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline HdrImage constant_image(const EnvGeometry& g, const ColorRGB& c) {
  HdrImage img(g);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    if (img.valid(i)) img.set(i, c);
  }
  return img;
}

inline HdrImage random_image(const EnvGeometry& g, std::mt19937_64& rng, double lo = 0.0, double hi = 10.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  HdrImage img(g);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    if (img.valid(i)) img.set(i, {u(rng), u(rng), u(rng)});
  }
  return img;
}

inline double max_abs_diff(const HdrImage& a, const HdrImage& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  }
  return m;
}

/// First surface hit of the pinhole ray through pixel (px, py): the camera
/// looks at the target with world +z up, pixel centers at half offsets and
/// image rows growing downwards.
struct SurfaceHit {
  bool plane = false;
  bool sphere = false;
  Vec3 point;
  Vec3 normal;
};

inline SurfaceHit camera_hit(const SceneSpec& s, int px, int py) {
  const Vec3 f = normalize(s.camera_target - s.camera_position);
  const Vec3 r = normalize(cross(f, Vec3{0, 0, 1}));
  const Vec3 u = cross(r, f);
  const double th = std::tan(deg_to_rad(s.fov_deg) / 2.0);
  const double aspect = static_cast<double>(s.width) / s.height;
  const Vec3 d = normalize(f + r * ((2.0 * (px + 0.5) / s.width - 1.0) * th * aspect) +
                           u * ((1.0 - 2.0 * (py + 0.5) / s.height) * th));
  const Vec3 o = s.camera_position;
  SurfaceHit hit;
  double best = INFINITY;
  const Vec3 oc = o - s.sphere_center;
  const double b = dot(oc, d);
  const double disc = b * b - (dot(oc, oc) - s.sphere_radius * s.sphere_radius);
  if (disc >= 0.0 && -b - std::sqrt(disc) > 0.0) {
    best = -b - std::sqrt(disc);
    hit.sphere = true;
    hit.point = o + d * best;
    hit.normal = (hit.point - s.sphere_center) / s.sphere_radius;
  }
  if (d.z < 0.0) {
    const double t = (s.plane_height - o.z) / d.z;
    if (t < best) {
      hit = {};
      hit.plane = true;
      hit.point = o + d * t;
      hit.normal = {0, 0, 1};
    }
  }
  return hit;
}

/// Cosine-weighted fraction of the sky seen by a surface point under a
/// hemispherical environment of radiance 1 and albedo 1: (1 + n_z) / 2 for
/// sphere points, 1 - sin²α cos θc for plane points where the sphere hides a
/// cap of half-angle α whose axis is θc from the zenith.
inline double furnace_expectation(const SceneSpec& s, const SurfaceHit& h) {
  if (h.sphere) return 0.5 * (1.0 + h.normal.z);
  const Vec3 v = s.sphere_center - h.point;
  const double dist = length(v);
  const double sin_a = s.sphere_radius / dist;
  const double cos_c = v.z / dist;
  return 1.0 - sin_a * sin_a * cos_c;
}

}  // namespace testing
