#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

namespace heliofit {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kHalfPi = 0.5 * std::numbers::pi;

constexpr double deg_to_rad(double deg) { return deg * (kPi / 180.0); }
constexpr double rad_to_deg(double rad) { return rad * (180.0 / kPi); }

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  constexpr bool operator==(const Vec3&) const = default;
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double length(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalize(const Vec3& v) { return v / length(v); }

/// Wraps an angle into [0, 2π).
inline double wrap_azimuth(double azimuth) {
  double a = std::fmod(azimuth, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  // fmod of a value just below 0 can round back up to exactly 2π.
  if (a >= kTwoPi) a = 0.0;
  return a;
}

/// A direction in the dome frame: zenith measured from +z, azimuth measured
/// from +x towards +y. With the skyangular images used throughout, +x is
/// image-right and +y is image-down.
struct Direction {
  double zenith = 0.0;
  double azimuth = 0.0;

  /// Builds a direction, normalizing the azimuth into [0, 2π).
  static Direction make(double zenith, double azimuth) { return {zenith, wrap_azimuth(azimuth)}; }

  static Direction from_vector(const Vec3& v) {
    const double len = length(v);
    const double cz = std::clamp(v.z / len, -1.0, 1.0);
    return make(std::acos(cz), std::atan2(v.y, v.x));
  }

  Vec3 to_vector() const {
    const double s = std::sin(zenith);
    return {s * std::cos(azimuth), s * std::sin(azimuth), std::cos(zenith)};
  }

  constexpr bool operator==(const Direction&) const = default;
};

inline constexpr Direction kZenith{0.0, 0.0};

/// Great-circle angle between two directions, in [0, π].
inline double angle_between(const Direction& u, const Direction& v) {
  const Vec3 a = u.to_vector();
  const Vec3 b = v.to_vector();
  // atan2 form stays accurate for nearly parallel vectors where acos loses digits.
  return std::atan2(length(cross(a, b)), dot(a, b));
}

inline double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(length(cross(a, b)), dot(a, b));
}

}  // namespace heliofit
