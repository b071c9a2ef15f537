#include "heliofit/sky_model.hpp"

#include <array>
#include <stdexcept>

namespace heliofit {

namespace {

constexpr double kMinCosZenith = 0.01;

// Preetham et al., luminance (Y) row of the distribution coefficient table.
constexpr PerezCoefficients kSlope{0.1787, -0.3554, -0.0227, 0.1206, -0.0670};
constexpr PerezCoefficients kOffset{-1.4630, 0.4275, 5.3251, -2.5771, 0.3703};

constexpr std::array<const char*, 11> kFieldNames = {
    "sky_color_r", "sky_color_g", "sky_color_b", "turbidity",      "sun_color_r",    "sun_color_g",
    "sun_color_b", "beta",        "kappa",       "sun_zenith_rad", "sun_azimuth_rad"};

}  // namespace

PerezCoefficients preetham_coefficients(double turbidity) {
  if (!(turbidity >= 2.0 && turbidity <= 20.0)) {
    throw std::out_of_range("turbidity must lie in [2, 20], got " + std::to_string(turbidity));
  }
  const double t = turbidity;
  return {kSlope.a * t + kOffset.a, kSlope.b * t + kOffset.b, kSlope.c * t + kOffset.c,
          kSlope.d * t + kOffset.d, kSlope.e * t + kOffset.e};
}

PerezCoefficients preetham_coefficient_slopes() { return kSlope; }

double perez_distribution(double view_zenith, double gamma, const PerezCoefficients& k) {
  const double cos_theta = std::max(std::cos(view_zenith), kMinCosZenith);
  const double cos_gamma = std::cos(gamma);
  return (1.0 + k.a * std::exp(k.b / cos_theta)) *
         (1.0 + k.c * std::exp(k.d * gamma) + k.e * cos_gamma * cos_gamma);
}

double perez_ratio(double view_zenith, double gamma, double sun_zenith, const PerezCoefficients& k) {
  return perez_distribution(view_zenith, gamma, k) / perez_distribution(0.0, sun_zenith, k);
}

double sun_falloff(double gamma, double beta, double kappa) {
  if (gamma <= 0.0) return kappa > 0.0 ? 1.0 : std::exp(-beta);
  return std::exp(-beta * std::exp(-kappa / gamma));
}

ColorRGB eval_sky(const Direction& l, const LMParams& p) {
  const double gamma = angle_between(l, p.sun);
  const double ratio = perez_ratio(l.zenith, gamma, p.sun.zenith, preetham_coefficients(p.turbidity));
  return p.sky_color * ratio;
}

ColorRGB eval_sun(const Direction& l, const LMParams& p) {
  return p.sun_color * sun_falloff(angle_between(l, p.sun), p.beta, p.kappa);
}

ColorRGB eval_lm(const Direction& l, const LMParams& p) { return eval_sun(l, p) + eval_sky(l, p); }

const std::array<const char*, 11>& param_field_names() { return kFieldNames; }

std::map<std::string, double> to_key_values(const LMParams& p) {
  return {{"sky_color_r", p.sky_color.r}, {"sky_color_g", p.sky_color.g}, {"sky_color_b", p.sky_color.b},
          {"turbidity", p.turbidity},     {"sun_color_r", p.sun_color.r}, {"sun_color_g", p.sun_color.g},
          {"sun_color_b", p.sun_color.b}, {"beta", p.beta},               {"kappa", p.kappa},
          {"sun_zenith_rad", p.sun.zenith}, {"sun_azimuth_rad", p.sun.azimuth}};
}

LMParams from_key_values(const std::map<std::string, double>& kv) {
  auto get = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(std::string("missing LM parameter '") + key + "'");
    return it->second;
  };
  LMParams p;
  p.sky_color = {get("sky_color_r"), get("sky_color_g"), get("sky_color_b")};
  p.turbidity = get("turbidity");
  p.sun_color = {get("sun_color_r"), get("sun_color_g"), get("sun_color_b")};
  p.beta = get("beta");
  p.kappa = get("kappa");
  p.sun = {get("sun_zenith_rad"), get("sun_azimuth_rad")};
  return p;
}

void validate_params(const LMParams& p, const ParamRanges& r) {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw std::out_of_range(what);
  };
  check(p.kappa >= r.kappa_min && p.kappa <= r.kappa_max, "kappa out of range");
  check(p.beta >= r.beta_min && p.beta <= r.beta_max, "beta out of range");
  check(p.turbidity >= r.turbidity_min && p.turbidity <= r.turbidity_max, "turbidity out of range");
  for (int c = 0; c < 3; ++c) {
    check(std::isfinite(p.sky_color[c]) && p.sky_color[c] >= 0.0, "sky color must be finite and non-negative");
    check(std::isfinite(p.sun_color[c]) && p.sun_color[c] >= 0.0, "sun color must be finite and non-negative");
  }
  check(p.sun.zenith >= 0.0 && p.sun.zenith <= kPi, "sun zenith out of range");
  check(std::isfinite(p.sun.azimuth), "sun azimuth must be finite");
}

}  // namespace heliofit
